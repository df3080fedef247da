"""Row normalizations and the two non-learned baseline embeddings (raw rows, sociodemographics)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .table import SOCIODEMO_ATTRIBUTES, EmbeddingSet, TransactionTable

MODES = ("binarize", "l2", "log", "max", "rescale", "none")
_ALIASES = {
    "l2_normalize": "l2",
    "log_normalize": "log",
    "max_normalize": "max",
    "rescale_neg1_1": "rescale",
    "identity": "none",
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PreprocSpec:
    mode: str = "none"

    def __post_init__(self):
        mode = _ALIASES.get(self.mode, self.mode)
        if mode not in MODES:
            raise ConfigError(
                f"unknown preprocessing mode {self.mode!r}; expected exactly one of {', '.join(MODES)}"
            )
        object.__setattr__(self, "mode", mode)

    @classmethod
    def parse(cls, token):
        if isinstance(token, PreprocSpec):
            return token
        token = str(token).strip()
        if any(sep in token for sep in "+,|>") or " " in token:
            raise ConfigError(f"preprocessing modes cannot be chained: {token!r}")
        return cls(token)

    def __str__(self):
        return self.mode


def _safe_row_divide(x, denom):
    out = np.zeros_like(x)
    nz = denom > 0
    out[nz] = x[nz] / denom[nz, None]
    return out


def apply_matrix(x, present, spec):
    """Apply a preprocessing mode to an amount matrix (absent cells already 0.0)."""
    spec = PreprocSpec.parse(spec)
    x = np.where(present, np.asarray(x, dtype=np.float64), 0.0)
    mode = spec.mode
    if mode == "none":
        return x
    if mode == "binarize":
        return np.asarray(present, dtype=np.float64)
    if mode == "l2":
        return _safe_row_divide(x, np.sqrt(np.einsum("ij,ij->i", x, x)))
    if mode == "log":
        return np.sign(x) * np.log1p(np.abs(x))
    if mode == "max":
        return _safe_row_divide(x, np.abs(x).max(axis=1) if x.shape[1] else np.zeros(len(x)))
    if mode == "rescale":
        if x.shape[1] == 0:
            return x
        lo = x.min(axis=1, keepdims=True)
        hi = x.max(axis=1, keepdims=True)
        span = hi - lo
        out = np.zeros_like(x)
        ok = span[:, 0] > 0
        out[ok] = 2.0 * (x[ok] - lo[ok]) / span[ok] - 1.0
        return np.clip(out, -1.0, 1.0)
    raise AssertionError(mode)


def apply(table: TransactionTable, spec) -> np.ndarray:
    """Preprocessed n x K matrix for `table`; absent maps to 0.0 before any mode."""
    if table.n_clients == 0:
        raise ValueError("cannot preprocess an empty table")
    return apply_matrix(table.values, table.present, spec)


def raw_embedding(table: TransactionTable, spec="none") -> EmbeddingSet:
    spec = PreprocSpec.parse(spec)
    return EmbeddingSet(apply(table, spec), table.client_ids, source=f"raw[{spec}]")


class SociodemoEncoder:
    """One-hot encoding of the six attributes followed by a centered PCA projection.

    Each principal direction is sign-fixed so that its largest-magnitude
    loading is positive, which makes the projection deterministic.
    """

    def __init__(self, target_dim, seed=0):
        if target_dim < 1:
            raise ValueError("target_dim must be positive")
        self.target_dim = int(target_dim)
        self.seed = seed

    def one_hot(self, table):
        blocks = []
        for name in SOCIODEMO_ATTRIBUTES:
            vocab = self.vocab_[name]
            pos = {v: i for i, v in enumerate(vocab)}
            col = table.attributes[name]
            try:
                idx = np.fromiter((pos[v] for v in col), dtype=np.int64, count=len(col))
            except KeyError as exc:
                raise ValueError(f"unseen value {exc.args[0]!r} for attribute {name!r}") from None
            block = np.zeros((len(col), len(vocab)))
            block[np.arange(len(col)), idx] = 1.0
            blocks.append(block)
        return np.hstack(blocks)

    def fit(self, table):
        self.vocab_ = dict(table.vocab)
        onehot = self.one_hot(table)
        width = onehot.shape[1]
        if self.target_dim > width:
            raise ValueError(f"target_dim {self.target_dim} exceeds one-hot width {width}")
        self.mean_ = onehot.mean(axis=0)
        centered = onehot - self.mean_
        cov = centered.T @ centered
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(-evals, kind="stable")[: self.target_dim]
        comps = evecs[:, order].T
        lead = np.argmax(np.abs(comps), axis=1)
        signs = np.sign(comps[np.arange(len(comps)), lead])
        signs[signs == 0] = 1.0
        self.components_ = comps * signs[:, None]
        return self

    def transform(self, table):
        return EmbeddingSet(
            (self.one_hot(table) - self.mean_) @ self.components_.T,
            table.client_ids,
            source=f"sociodemo[dim={self.target_dim}]",
        )


def sociodemo_embedding(table, target_dim, seed=0) -> EmbeddingSet:
    return SociodemoEncoder(target_dim, seed).fit(table).transform(table)
