"""Skip-gram with negative sampling over unordered client bags.

Client bags carry no order, so the context of a token occurrence is up to
``window`` other occurrences drawn uniformly without replacement from the same
bag. All random draws for an epoch are made up front with numpy; the update
loop itself is deterministic and runs in the compiled kernel when available.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass

import numpy as np

from . import _sgns_py

try:
    from . import _sgns_ext
except ImportError:  # extension not built
    _sgns_ext = None

KERNELS = {"python": _sgns_py.sgns_train}
if _sgns_ext is not None:
    KERNELS["cython"] = _sgns_ext.sgns_train

BACKEND = "python" if os.environ.get("TXEMBED_PURE_PYTHON") or _sgns_ext is None else "cython"

MIN_LR_FRACTION = 1e-4


@dataclass(frozen=True)
class W2vConfig:
    embed_dim: int = 32
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    seed: int = 0

    def __post_init__(self):
        for name in ("embed_dim", "window", "negatives", "epochs"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def to_dict(self):
        return asdict(self)


def context_pairs(bags, window, rng):
    """(center, context) token-id pairs for one epoch, shuffled."""
    by_size = {}
    for b in bags:
        if b.size > 1:
            by_size.setdefault(b.size, []).append(b)
    centers, contexts = [], []
    for m in sorted(by_size):
        B = np.stack(by_size[m])                         # (clients, m)
        w = min(window, m - 1)
        keys = rng.random((B.shape[0], m, m))
        keys[:, np.arange(m), np.arange(m)] = np.inf      # a token is not its own context
        pos = np.argsort(keys, axis=2, kind="stable")[:, :, :w]
        rows = np.arange(B.shape[0])[:, None, None]
        contexts.append(B[rows, pos].reshape(-1))
        centers.append(np.repeat(B, w, axis=1).reshape(-1))
    if not centers:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    c = np.concatenate(centers)
    o = np.concatenate(contexts)
    perm = rng.permutation(c.size)
    return np.ascontiguousarray(c[perm], dtype=np.int64), np.ascontiguousarray(o[perm], dtype=np.int64)


def noise_distribution(counts, power=0.75):
    w = np.asarray(counts, dtype=np.float64) ** power
    if w.sum() <= 0:
        w = np.ones_like(w)
    return w / w.sum()


def init_vectors(n_vocab, dim, rng):
    w_in = (rng.random((n_vocab, dim)) - 0.5) / dim
    w_out = np.zeros((n_vocab, dim))
    return w_in, w_out


@dataclass
class SkipgramResult:
    vectors: np.ndarray
    output_vectors: np.ndarray
    losses: list
    backend: str


def train_skipgram(corpus, cfg: W2vConfig, backend=None, return_details=False):
    """Token embedding matrix (vocabulary x embed_dim) trained single-threaded and deterministically."""
    V = len(corpus.vocabulary)
    if V == 0:
        raise ValueError("vocabulary is empty")
    sizes = [b.size for b in corpus.bags]
    if not sizes or cfg.window > max(sizes):
        raise ValueError(f"window {cfg.window} is larger than every client bag (max {max(sizes, default=0)})")
    kernel = KERNELS[backend or BACKEND]
    rng = np.random.default_rng(cfg.seed)
    w_in, w_out = init_vectors(V, cfg.embed_dim, rng)
    noise = noise_distribution(corpus.counts())
    cdf = np.cumsum(noise)
    cdf[-1] = 1.0
    lr_min = cfg.learning_rate * MIN_LR_FRACTION
    losses = []
    for epoch in range(cfg.epochs):
        centers, contexts = context_pairs(corpus.bags, cfg.window, rng)
        negs = np.searchsorted(cdf, rng.random((centers.size, cfg.negatives)), side="right")
        negs = np.ascontiguousarray(np.minimum(negs, V - 1), dtype=np.int64)
        lr0 = cfg.learning_rate - (cfg.learning_rate - lr_min) * epoch / cfg.epochs
        lr1 = cfg.learning_rate - (cfg.learning_rate - lr_min) * (epoch + 1) / cfg.epochs
        loss = kernel(w_in, w_out, centers, contexts, negs, lr0, lr1)
        losses.append(loss / max(centers.size, 1))
    if return_details:
        return SkipgramResult(w_in, w_out, losses, backend or BACKEND)
    return w_in


def sgns_loss_and_grad(w_in, w_out, centers, contexts, negs):
    """Summed SGNS loss and its exact gradients w.r.t. both vector tables.

    loss = sum_i [ -log s(u_ctx . v_c) - sum_k log s(-u_neg_k . v_c) ]
    """
    v = w_in[centers]                                   # (n, D)
    u_pos = w_out[contexts]                             # (n, D)
    u_neg = w_out[negs]                                 # (n, K, D)
    s_pos = np.einsum("nd,nd->n", v, u_pos)
    s_neg = np.einsum("nd,nkd->nk", v, u_neg)
    loss = np.sum(np.logaddexp(0.0, -s_pos)) + np.sum(np.logaddexp(0.0, s_neg))
    d_pos = -_sigmoid(-s_pos)                           # dL/ds_pos
    d_neg = _sigmoid(s_neg)                             # dL/ds_neg
    g_v = d_pos[:, None] * u_pos + np.einsum("nk,nkd->nd", d_neg, u_neg)
    g_in = np.zeros_like(w_in)
    np.add.at(g_in, centers, g_v)
    g_out = np.zeros_like(w_out)
    np.add.at(g_out, contexts, d_pos[:, None] * v)
    np.add.at(g_out, negs.reshape(-1), (d_neg[:, :, None] * v[:, None, :]).reshape(-1, v.shape[1]))
    return float(loss), g_in, g_out


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))
