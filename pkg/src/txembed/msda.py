"""Marginalized stacked denoising autoencoder.

Each layer is a single reconstruction matrix ``M`` of shape ``d x (d+1)``
whose last column is the bias. Masking noise with drop probability ``p`` is
integrated out analytically, so training a layer is one linear solve
``M (E[Q] + lambda I) = E[P]`` with no corrupted copies of the data.

Data matrices here hold one client per row (``n x d``).
"""
from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .preprocess import PreprocSpec, apply_matrix
from .table import EmbeddingSet, TransactionTable

OUTPUT_MODES = ("last_layer", "concat_all")
RIDGE_SCALE = 1e-5

MAGIC = b"MSDAMDL\x00"
FORMAT_VERSION = 1


class SingularSystemError(np.linalg.LinAlgError):
    pass


def _check_noise(p):
    p = float(p)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"masking probability must lie in [0, 1), got {p}")
    return p


def scatter(X, block_size=4096):
    """Bias-augmented scatter ``S = sum_i [x_i;1][x_i;1]^T`` accumulated in fixed row blocks."""
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    S = np.zeros((d + 1, d + 1))
    for start in range(0, n, block_size):
        blk = X[start : start + block_size]
        aug = np.hstack([blk, np.ones((blk.shape[0], 1))])
        S += aug.T @ aug
    return S


def keep_probabilities(d, p):
    q = np.full(d + 1, 1.0 - p)
    q[-1] = 1.0
    return q


def expected_scatter(X, p):
    """Expected cross-correlation ``EP`` (d x d+1) and noisy scatter ``EQ`` (d+1 x d+1).

    ``X`` is ``n x d``. The bias feature is never corrupted.
    """
    p = _check_noise(p)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be a 2-d array")
    if not np.all(np.isfinite(X)):
        raise ValueError("X has non-finite entries")
    d = X.shape[1]
    S = scatter(X)
    q = keep_probabilities(d, p)
    EQ = S * np.outer(q, q)
    np.fill_diagonal(EQ, np.diag(S) * q)
    EP = S[:d] * q[None, :]
    return EP, EQ


def auto_ridge(EQ):
    return RIDGE_SCALE * np.trace(EQ) / EQ.shape[0]


def _solve_right(EP, A):
    """Solve ``M A = EP`` for symmetric ``A``; Cholesky first, pivoted LU as fallback."""
    try:
        c = scipy.linalg.cho_factor(A, lower=False, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    else:
        rcond, _ = scipy.linalg.lapack.dpocon(c[0], np.abs(A).sum(axis=0).max())
        if rcond < np.finfo(np.float64).eps:
            raise SingularSystemError(
                f"E[Q] + lambda*I is numerically singular (rcond={rcond:.2e}); use a ridge lambda > 0"
            )
        return scipy.linalg.cho_solve(c, EP.T, check_finite=False).T
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        try:
            return scipy.linalg.solve(A, EP.T, assume_a="sym", check_finite=False).T
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
            raise SingularSystemError(
                f"E[Q] + lambda*I is singular or ill-conditioned ({exc}); use a ridge lambda > 0"
            ) from None


@dataclass(frozen=True, eq=False)
class MsdaLayer:
    M: np.ndarray
    ridge: float = 0.0

    def __post_init__(self):
        M = np.asarray(self.M, dtype=np.float64)
        if M.ndim != 2 or M.shape[1] != M.shape[0] + 1:
            raise ValueError(f"layer matrix must be d x (d+1), got {M.shape}")
        if not np.all(np.isfinite(M)):
            raise ValueError("layer matrix has non-finite entries")
        object.__setattr__(self, "M", M)

    @property
    def d(self):
        return self.M.shape[0]

    @property
    def weights(self):
        return self.M[:, :-1]

    @property
    def bias(self):
        return self.M[:, -1]

    def forward(self, H):
        return np.tanh(H @ self.weights.T + self.bias)


def train_layer(X, p, ridge=None):
    """Closed-form layer: ``M = E[P] (E[Q] + ridge I)^{-1}`` via a linear solve.

    ``ridge=None`` picks ``1e-5 * trace(E[Q]) / (d+1)``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("need at least one training row")
    EP, EQ = expected_scatter(X, p)
    lam = auto_ridge(EQ) if ridge is None else float(ridge)
    if lam < 0:
        raise ValueError("ridge lambda must be non-negative")
    A = EQ + lam * np.eye(EQ.shape[0])
    return MsdaLayer(_solve_right(EP, A), lam)


@dataclass(eq=False)
class MsdaModel:
    layers: list
    noise_p: float
    preproc: PreprocSpec = field(default_factory=PreprocSpec)
    ridge_lambda: float | None = None
    output_mode: str = "last_layer"

    def __post_init__(self):
        if not self.layers:
            raise ValueError("model needs at least one layer")
        d = self.layers[0].d
        if any(layer.d != d for layer in self.layers):
            raise ValueError("all layers must share the input dimension")
        if self.output_mode not in OUTPUT_MODES:
            raise ValueError(f"output_mode must be one of {OUTPUT_MODES}")
        self.preproc = PreprocSpec.parse(self.preproc)
        self.noise_p = _check_noise(self.noise_p)

    @property
    def d(self):
        return self.layers[0].d

    @property
    def n_layers(self):
        return len(self.layers)

    @property
    def output_dim(self):
        return self.d * (self.n_layers if self.output_mode == "concat_all" else 1)

    def hidden(self, H0):
        """Per-layer tanh representations for already-preprocessed input ``H0``."""
        H0 = np.asarray(H0, dtype=np.float64)
        if H0.ndim != 2 or H0.shape[1] != self.d:
            raise ValueError(f"input has {H0.shape[-1]} features, model expects {self.d}")
        out, H = [], H0
        for layer in self.layers:
            H = layer.forward(H)
            out.append(H)
        return out

    def transform_matrix(self, H0):
        hs = self.hidden(H0)
        return hs[-1] if self.output_mode == "last_layer" else np.hstack(hs)

    def source_tag(self):
        lam = "auto" if self.ridge_lambda is None else repr(self.ridge_lambda)
        return f"msda[p={self.noise_p!r},layers={self.n_layers},preproc={self.preproc},ridge={lam},out={self.output_mode}]"

    def equals(self, other):
        return (
            isinstance(other, MsdaModel)
            and self.noise_p == other.noise_p
            and self.preproc == other.preproc
            and self.ridge_lambda == other.ridge_lambda
            and self.output_mode == other.output_mode
            and len(self.layers) == len(other.layers)
            and all(
                a.ridge == b.ridge and np.array_equal(a.M, b.M) for a, b in zip(self.layers, other.layers)
            )
        )


def train_matrix(H0, p, n_layers=1, ridge=None, preproc="none", output_mode="last_layer"):
    """Stack ``n_layers`` closed-form layers on an already-preprocessed matrix."""
    if n_layers < 1:
        raise ValueError("n_layers must be >= 1")
    H = np.asarray(H0, dtype=np.float64)
    layers = []
    for _ in range(n_layers):
        layer = train_layer(H, p, ridge)
        layers.append(layer)
        H = layer.forward(H)
    return MsdaModel(layers, p, preproc, ridge, output_mode)


def _input_matrix(X, preproc):
    if isinstance(X, TransactionTable):
        return apply_matrix(X.values, X.present, preproc)
    X = np.asarray(X, dtype=np.float64)
    return apply_matrix(X, np.ones_like(X, dtype=bool), preproc)


def train(X, p=0.5, n_layers=1, ridge=None, preproc="none", output_mode="last_layer"):
    """Train a stacked model on a table (or raw ``n x d`` matrix) after preprocessing."""
    preproc = PreprocSpec.parse(preproc)
    return train_matrix(_input_matrix(X, preproc), p, n_layers, ridge, preproc, output_mode)


def embed(model: MsdaModel, X) -> EmbeddingSet:
    ids = X.client_ids if isinstance(X, TransactionTable) else ()
    H0 = _input_matrix(X, model.preproc)
    if H0.shape[1] != model.d:
        raise ValueError(f"input has {H0.shape[1]} features, model expects {model.d}")
    return EmbeddingSet(model.transform_matrix(H0), ids, source=model.source_tag())


# ---------------------------------------------------------------------------
# Model file: MAGIC | u32 version | u32 header length | JSON header | float64 LE matrices

def dumps(model: MsdaModel) -> bytes:
    header = {
        "d": model.d,
        "n_layers": model.n_layers,
        "noise_p": model.noise_p,
        "preproc": str(model.preproc),
        "ridge_lambda": model.ridge_lambda,
        "layer_ridge": [layer.ridge for layer in model.layers],
        "output_mode": model.output_mode,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(hbytes)), hbytes]
    for layer in model.layers:
        parts.append(np.ascontiguousarray(layer.M, dtype="<f8").tobytes(order="C"))
    return b"".join(parts)


def loads(data: bytes) -> MsdaModel:
    if not data.startswith(MAGIC):
        raise ValueError("not an mSDA model file")
    off = len(MAGIC)
    version, hlen = struct.unpack_from("<II", data, off)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model file version {version}")
    off += 8
    header = json.loads(data[off : off + hlen].decode("utf-8"))
    off += hlen
    d, L = header["d"], header["n_layers"]
    size = d * (d + 1) * 8
    if len(data) != off + L * size:
        raise ValueError("truncated or oversized model file")
    layers = []
    for i in range(L):
        M = np.frombuffer(data, dtype="<f8", count=d * (d + 1), offset=off + i * size).reshape(d, d + 1)
        layers.append(MsdaLayer(M.astype(np.float64), header["layer_ridge"][i]))
    return MsdaModel(layers, header["noise_p"], header["preproc"], header["ridge_lambda"], header["output_mode"])


def save(model, path):
    with open(path, "wb") as fh:
        fh.write(dumps(model))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
