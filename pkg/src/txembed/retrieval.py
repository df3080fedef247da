"""Exact dot-product nearest neighbors, kNN preference scores and ranking metrics.

Every ranking in this module sorts by descending score and breaks ties by
ascending item index, so all results are deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .table import EmbeddingSet, as_dataset


class UndefinedMetricError(ValueError):
    pass


def _matrix(x):
    if isinstance(x, EmbeddingSet):
        return x.values
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(1, -1) if x.ndim == 1 else x


class NeighborIndex:
    """Immutable database of embeddings searched exhaustively."""

    def __init__(self, database, similarity="dot", block_size=256):
        if similarity not in ("dot", "cosine"):
            raise ValueError("similarity must be 'dot' or 'cosine'")
        db = np.array(_matrix(database), dtype=np.float64)
        if similarity == "cosine":
            db = _unit_rows(db)
        db.flags.writeable = False
        self.database = db
        self.similarity = similarity
        self.block_size = block_size

    def __len__(self):
        return self.database.shape[0]

    def scores(self, queries):
        Q = _matrix(queries)
        if Q.shape[1] != self.database.shape[1]:
            raise ValueError(f"query dim {Q.shape[1]} != database dim {self.database.shape[1]}")
        if self.similarity == "cosine":
            Q = _unit_rows(Q)
        return Q @ self.database.T

    def search(self, queries, k):
        """(n_queries, k) neighbor indices, best first."""
        Q = _matrix(queries)
        n = len(self)
        if k < 1:
            raise ValueError("k must be >= 1")
        if k > n:
            raise ValueError(f"k={k} exceeds the database size ({n})")
        out = np.empty((Q.shape[0], k), dtype=np.int64)
        for start in range(0, Q.shape[0], self.block_size):
            S = self.scores(Q[start : start + self.block_size])
            for r in range(S.shape[0]):
                out[start + r] = top_k(S[r], k)
        return out


def _unit_rows(X):
    norms = np.sqrt(np.einsum("ij,ij->i", X, X))
    out = np.zeros_like(X)
    nz = norms > 0
    out[nz] = X[nz] / norms[nz, None]
    return out


def top_k(scores, k):
    """Indices of the k best scores: descending score, ties by ascending index."""
    s = np.asarray(scores, dtype=np.float64)
    n = s.shape[0]
    if k >= n:
        return np.lexsort((np.arange(n), -s))
    thr = np.partition(s, n - k)[n - k]
    above = np.nonzero(s > thr)[0]
    at = np.nonzero(s == thr)[0][: k - above.size]
    cand = np.concatenate([above, at])
    return cand[np.lexsort((cand, -s[cand]))]


def rank_order(scores):
    s = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(s.shape[0]), -s))


def knn(index: NeighborIndex, query, k):
    return index.search(query, k)[0]


def predict_theta(index, labels, query, k):
    """Mean label over the query's k nearest database items."""
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape[0] != len(index):
        raise ValueError("need one label per database item")
    return float(labels[knn(index, query, k)].mean())


def predict_theta_batch(index, labels, queries, k):
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape[0] != len(index):
        raise ValueError("need one label per database item")
    return labels[index.search(queries, k)].mean(axis=1)


def ranked_average_precision(rel):
    """AP of a relevance sequence already in rank order; undefined without relevant items."""
    rel = np.asarray(rel, dtype=bool)
    n_rel = int(rel.sum())
    if n_rel == 0:
        raise UndefinedMetricError("average precision is undefined with no relevant items")
    hits = np.cumsum(rel)
    ranks = np.nonzero(rel)[0] + 1
    return float(np.sum(hits[rel] / ranks) / n_rel)


def average_precision(scores, relevance):
    scores = np.asarray(scores, dtype=np.float64)
    relevance = np.asarray(relevance)
    if scores.shape != relevance.shape:
        raise ValueError("scores and relevance must have equal length")
    return ranked_average_precision(relevance[rank_order(scores)])


def precision_at(scores, relevance, cutoff=100):
    """Fraction relevant among the top ``min(cutoff, n)`` ranked items."""
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    relevance = np.asarray(relevance)
    top = rank_order(scores)[:cutoff]
    if top.size == 0:
        return 0.0
    return float(np.mean(relevance[top] != 0))


def list_average_precisions(neighbor_lists, relevance):
    """AP of each query's neighbor list (already best-first); 0 when no neighbor is relevant."""
    rel = np.asarray(relevance, dtype=bool)[np.asarray(neighbor_lists)]
    k = rel.shape[1]
    hits = np.cumsum(rel, axis=1)
    prec = hits / np.arange(1, k + 1)
    n_rel = hits[:, -1]
    ap = np.zeros(rel.shape[0])
    nz = n_rel > 0
    ap[nz] = (prec * rel).sum(axis=1)[nz] / n_rel[nz]
    return ap, int((~nz).sum())


def map_from_lists(neighbor_lists, relevance):
    ap, _ = list_average_precisions(neighbor_lists, relevance)
    return float(ap.mean())


def map_at_k(queries, index, relevance, k):
    """Mean over queries of AP within each query's k-neighbor list."""
    Q = _matrix(queries)
    if Q.shape[0] < 1:
        raise ValueError("need at least one query")
    return map_from_lists(index.search(Q, k), relevance)


def mu_relevance(x, descriptors):
    """1 iff the client has a nonzero amount in any descriptor of ``descriptors``."""
    x = np.asarray(x, dtype=np.float64)
    M = list(descriptors)
    if not M:
        raise ValueError("descriptor set must be non-empty")
    for m in M:
        if not 0 <= int(m) < x.shape[-1]:
            raise IndexError(f"descriptor {m} out of range [0, {x.shape[-1]})")
    return (np.abs(x[..., M]).sum(axis=-1) > 0).astype(np.int64)


def relevance_labels(table, descriptors):
    """μ_M over a transaction table; descriptors given as labels or indices."""
    idx = [table.category_index(m) for m in descriptors]
    if not idx:
        raise ValueError("descriptor set must be non-empty")
    return table.present[:, idx].any(axis=1).astype(np.int64)


def theta_labels(table, target):
    return relevance_labels(table, [target])


def first_retrieval_depth(neighbor_lists, n_db):
    """Smallest rank (1-based) at which each database item appears in any list; 0 if never."""
    lists = np.asarray(neighbor_lists)
    k = lists.shape[1]
    first = np.full(n_db, k + 1, dtype=np.int64)
    ranks = np.broadcast_to(np.arange(1, k + 1), lists.shape)
    np.minimum.at(first, lists.reshape(-1), ranks.reshape(-1))
    first[first == k + 1] = 0
    return first


def recall_curve(neighbor_lists, relevance, depths=None):
    """Pooled recall at each depth: distinct relevant items in the union of top-j lists / all relevant."""
    rel = np.asarray(relevance, dtype=bool)
    total = int(rel.sum())
    if total == 0:
        raise UndefinedMetricError("recall is undefined with no relevant database items")
    lists = np.asarray(neighbor_lists)
    k = lists.shape[1]
    first = first_retrieval_depth(lists, rel.shape[0])
    hit = first[rel & (first > 0)]
    cum = np.cumsum(np.bincount(hit, minlength=k + 1))[1:]
    depths = np.arange(1, k + 1) if depths is None else np.asarray(depths, dtype=np.int64)
    return depths, cum[depths - 1] / total


def diversity(neighbor_lists, n_db, ks):
    """R(k) distinct retrieved items and r(k) = R(k)/|D| for each k in ``ks``."""
    lists = np.asarray(neighbor_lists)
    first = first_retrieval_depth(lists, n_db)
    ks = np.asarray(ks, dtype=np.int64)
    if np.any(ks < 1) or np.any(ks > lists.shape[1]):
        raise ValueError("each k must lie in [1, list length]")
    counts = np.cumsum(np.bincount(first[first > 0], minlength=lists.shape[1] + 1))[1:]
    R = counts[ks - 1]
    return R, R / n_db


def random_neighbor_lists(n_queries, n_db, k, seed):
    """Uniformly random k-lists, the random-scoring baseline."""
    rng = np.random.default_rng(seed)
    out = np.empty((n_queries, k), dtype=np.int64)
    for q in range(n_queries):
        out[q] = rng.permutation(n_db)[:k]
    return out


@dataclass
class RetrievalReport:
    ks: list
    map_at: dict                       # k -> MAP@k
    zero_relevant: dict                # k -> queries whose list held no relevant item
    r: dict                            # k -> r(k)
    R: dict                            # k -> R(k)
    recall_depths: np.ndarray = None
    recall: np.ndarray = None
    prevalence: float = 0.0
    config: dict = field(default_factory=dict)

    def rows(self):
        for k in self.ks:
            yield ("MAP", k, self.map_at[k])
            yield ("R", k, self.R[k])
            yield ("r", k, self.r[k])
            yield ("zero_relevant_queries", k, self.zero_relevant[k])


def evaluate_lists(neighbor_lists, relevance, ks, curve_depths=None, config=None):
    """MAP@k, R(k), r(k) for each k (prefixes of the lists) and the pooled recall curve."""
    lists = np.asarray(neighbor_lists)
    relevance = np.asarray(relevance)
    ks = sorted(int(k) for k in ks)
    n_db = relevance.shape[0]
    maps, zeros = {}, {}
    for k in ks:
        ap, nz = list_average_precisions(lists[:, :k], relevance)
        maps[k] = float(ap.mean())
        zeros[k] = nz
    R, r = diversity(lists, n_db, ks)
    depths, rec = (None, None)
    if relevance.sum() > 0:
        depths, rec = recall_curve(lists, relevance, curve_depths)
    return RetrievalReport(
        ks, maps, zeros, dict(zip(ks, r.tolist())), dict(zip(ks, R.tolist())), depths, rec,
        float(relevance.mean()), dict(config or {}),
    )


def retrieval_report(queries, index, relevance, ks, curve_depths=None, config=None):
    lists = index.search(queries, max(int(k) for k in ks))
    return evaluate_lists(lists, relevance, ks, curve_depths, config)


# ---------------------------------------------------------------------------
# missing-category prediction


@dataclass
class MissingCategoryReport:
    ap: dict
    p_at: dict
    cutoff: int
    truncated: bool
    config: dict = field(default_factory=dict)

    @property
    def mean_ap(self):
        return float(np.mean(list(self.ap.values())))

    @property
    def mean_p_at(self):
        return float(np.mean(list(self.p_at.values())))


def missing_category_eval(train, test, method, targets, k=100, cutoff=100, similarity="dot"):
    """kNN preference score for each left-out target, scored by AP and P@cutoff on `test`.

    The method is fitted on the training clients with the target column
    removed; training clients form the neighbor database.
    """
    train, test = as_dataset(train), as_dataset(test)
    aps, pats = {}, {}
    for t in targets:
        ti = train.transactions.category_index(t)
        label = train.transactions.categories[ti]
        tr, te = train.drop_category(ti), test.drop_category(test.transactions.category_index(label))
        fitted = method.fit(tr)
        index = NeighborIndex(fitted.transform(tr), similarity)
        scores = predict_theta_batch(index, theta_labels(train.transactions, ti), fitted.transform(te), k)
        rel = theta_labels(test.transactions, label)
        aps[label] = average_precision(scores, rel)
        pats[label] = precision_at(scores, rel, cutoff)
    config = {"k": k, "cutoff": cutoff, "similarity": similarity, "targets": list(aps)}
    return MissingCategoryReport(aps, pats, cutoff, len(test) < cutoff, config)
