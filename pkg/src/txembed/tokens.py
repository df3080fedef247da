"""Quantization of table cells into word-like tokens and pooling of token vectors into clients.

A token is ``<CAT>_<lo>:<hi>``, the label of the per-category percentile bin
holding the amount. Bins are right-closed: ``(-inf, b1], (b1, b2], ...,
(bm, +inf)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .segment import _sq_dists, kmeans
from .table import EmbeddingSet


def _fmt(x):
    if x == -np.inf:
        return "-inf"
    if x == np.inf:
        return "+inf"
    return f"{x + 0.0:.2f}"


@dataclass
class BinDictionary:
    categories: tuple
    boundaries: dict                     # category label -> increasing array of interior boundaries
    skipped: list = field(default_factory=list)

    def __post_init__(self):
        self.categories = tuple(self.categories)
        self._labels = []
        self._offset = {}
        for cat in self.categories:
            if cat not in self.boundaries:
                continue
            b = np.asarray(self.boundaries[cat], dtype=np.float64)
            if np.any(np.diff(b) <= 0):
                raise ValueError(f"boundaries for {cat} are not strictly increasing")
            self.boundaries[cat] = b
            self._offset[cat] = len(self._labels)
            edges = np.concatenate([[-np.inf], b, [np.inf]])
            for lo, hi in zip(edges[:-1], edges[1:]):
                self._labels.append(f"{cat}_{_fmt(lo)}:{_fmt(hi)}")
        self._index = {lab: i for i, lab in enumerate(self._labels)}

    @property
    def vocabulary(self):
        return list(self._labels)

    def n_bins(self, cat):
        return len(self.boundaries[cat]) + 1

    def bin_index(self, cat, value):
        return int(np.searchsorted(self.boundaries[cat], value, side="left"))

    def token_id(self, cat, value):
        return self._offset[cat] + self.bin_index(cat, value)

    def label(self, token_id):
        return self._labels[token_id]

    def lookup(self, label):
        """(category, bin index) for a token label."""
        tid = self._index[label]
        cat = label.rsplit("_", 1)[0]
        return cat, tid - self._offset[cat]


def fit_bins(table, n_bins=10) -> BinDictionary:
    """Per-category bins at the interior percentiles of present amounts.

    Boundaries are rounded to cents so that every label is distinct; equal
    boundaries collapse, leaving fewer bins.
    """
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    qs = np.arange(1, n_bins) / n_bins
    bounds, skipped = {}, []
    for j, cat in enumerate(table.categories):
        vals = table.values[table.present[:, j], j]
        if vals.size == 0:
            skipped.append(cat)
            continue
        b = np.round(np.quantile(vals, qs, method="linear"), 2) + 0.0
        if vals.min() == vals.max():
            b = np.array([])
        bounds[cat] = np.unique(b)
    return BinDictionary(table.categories, bounds, skipped)


@dataclass
class TokenCorpus:
    bags: list                 # one int64 array of token ids per client
    vocabulary: list
    client_ids: tuple = ()

    def __post_init__(self):
        self.bags = [np.asarray(b, dtype=np.int64) for b in self.bags]
        v = len(self.vocabulary)
        for b in self.bags:
            if b.size and (b.min() < 0 or b.max() >= v):
                raise ValueError("token id outside the vocabulary")

    def __len__(self):
        return len(self.bags)

    @property
    def n_tokens(self):
        return int(sum(b.size for b in self.bags))

    def counts(self):
        c = np.zeros(len(self.vocabulary), dtype=np.int64)
        for b in self.bags:
            np.add.at(c, b, 1)
        return c

    def to_text(self):
        return "".join(" ".join(self.vocabulary[t] for t in b) + "\n" for b in self.bags)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())


def load_corpus(path, vocabulary):
    index = {lab: i for i, lab in enumerate(vocabulary)}
    with open(path, encoding="utf-8") as fh:
        bags = [[index[t] for t in line.split()] for line in fh]
    return TokenCorpus(bags, list(vocabulary))


def tokenize(table, bins: BinDictionary) -> TokenCorpus:
    """One token per present cell, in category order; absent cells emit nothing."""
    cols = []
    for j, cat in enumerate(table.categories):
        if cat in bins.boundaries:
            cols.append((j, cat))
        elif cat not in bins.categories:
            raise ValueError(f"category {cat!r} unknown to the bin dictionary")
    ids = np.full(table.values.shape, -1, dtype=np.int64)
    for j, cat in cols:
        ids[:, j] = bins._offset[cat] + np.searchsorted(bins.boundaries[cat], table.values[:, j], side="left")
    mask = table.present.copy()
    for j, cat in enumerate(table.categories):
        if cat not in bins.boundaries:
            mask[:, j] = False
    bags = [ids[i, mask[i]] for i in range(table.n_clients)]
    return TokenCorpus(bags, bins.vocabulary, table.client_ids)


def save_token_vectors(vocabulary, vectors, path):
    with open(path, "w", encoding="utf-8") as fh:
        for lab, row in zip(vocabulary, vectors):
            fh.write(lab + " " + " ".join(repr(float(x)) for x in row) + "\n")


def load_token_vectors(path):
    labels, rows = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            labels.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    return labels, np.array(rows, dtype=np.float64)


# ---------------------------------------------------------------------------
# pooling


def _flatten(corpus):
    lens = np.array([b.size for b in corpus.bags], dtype=np.int64)
    owner = np.repeat(np.arange(len(corpus.bags)), lens)
    toks = np.concatenate(corpus.bags) if corpus.bags else np.zeros(0, dtype=np.int64)
    return owner, toks.astype(np.int64), lens


def pool_mean(corpus: TokenCorpus, token_vectors) -> EmbeddingSet:
    W = np.asarray(token_vectors, dtype=np.float64)
    if W.shape[0] != len(corpus.vocabulary):
        raise ValueError("need one vector per vocabulary entry")
    owner, toks, lens = _flatten(corpus)
    out = np.zeros((len(corpus), W.shape[1]))
    np.add.at(out, owner, W[toks])
    nz = lens > 0
    out[nz] /= lens[nz, None]
    return EmbeddingSet(out, corpus.client_ids, source="w2v+mean")


@dataclass(frozen=True, eq=False)
class VladCodebook:
    centroids: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] < 1:
            raise ValueError("codebook needs at least one centroid")
        object.__setattr__(self, "centroids", c)

    @property
    def size(self):
        return self.centroids.shape[0]

    def assign(self, vectors):
        return np.argmin(_sq_dists(np.asarray(vectors, dtype=np.float64), self.centroids), axis=1)


def fit_vlad(token_vectors, n_centroids, seed=0) -> VladCodebook:
    W = np.asarray(token_vectors, dtype=np.float64)
    if n_centroids > W.shape[0]:
        raise ValueError(f"{n_centroids} centroids for a vocabulary of {W.shape[0]}")
    return VladCodebook(kmeans(W, n_centroids, seed=seed).centroids)


def pool_vlad(corpus: TokenCorpus, token_vectors, codebook: VladCodebook) -> EmbeddingSet:
    """Per-centroid summed residuals of the bag's token vectors, concatenated and L2-normalized."""
    W = np.asarray(token_vectors, dtype=np.float64)
    C = codebook.centroids
    assign = codebook.assign(W)
    resid = W - C[assign]
    owner, toks, _ = _flatten(corpus)
    out = np.zeros((len(corpus), C.shape[0], W.shape[1]))
    np.add.at(out, (owner, assign[toks]), resid[toks])
    out = out.reshape(len(corpus), -1)
    norms = np.sqrt(np.einsum("ij,ij->i", out, out))
    nz = norms > 0
    out[nz] /= norms[nz, None]
    return EmbeddingSet(out, corpus.client_ids, source=f"w2v+vlad[C={C.shape[0]}]")
