"""K-means segmentation, leave-one-category-out dispersion, and typical-member mining."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse

from .table import EmbeddingSet, as_dataset


@dataclass(frozen=True, eq=False)
class Clustering:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int = 0
    inertia_history: tuple = ()

    @property
    def k(self):
        return self.centroids.shape[0]

    def sizes(self):
        return np.bincount(self.assignments, minlength=self.k)


def _as_matrix(embeddings):
    if isinstance(embeddings, EmbeddingSet):
        return embeddings.values
    return np.asarray(embeddings, dtype=np.float64)


def _sq_dists(X, C, x_sq=None):
    if x_sq is None:
        x_sq = np.einsum("ij,ij->i", X, X)
    d = x_sq[:, None] - 2.0 * (X @ C.T) + np.einsum("ij,ij->i", C, C)[None, :]
    np.maximum(d, 0.0, out=d)
    return d


def kmeans_plusplus(X, k, rng):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    first = rng.integers(n)
    centers[0] = X[first]
    x_sq = np.einsum("ij,ij->i", X, X)
    closest = _sq_dists(X, centers[:1], x_sq)[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            # every point coincides with a chosen center; fall back to unchosen indices
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[j] = X[idx]
        closest = np.minimum(closest, _sq_dists(X, centers[j : j + 1], x_sq)[:, 0])
    return centers


def kmeans(embeddings, k, seed=0, max_iter=100, tol=1e-6, n_init=1) -> Clustering:
    """Lloyd iterations from k-means++ seeding.

    Stops after `max_iter` rounds or when the relative inertia improvement
    drops below `tol`. An empty cluster is re-seeded at the point farthest
    from its current centroid. With ``n_init > 1`` the run is repeated from
    independent seedings drawn from one generator and the lowest-inertia
    result is kept (the earliest run on ties).
    """
    X = _as_matrix(embeddings)
    n = X.shape[0]
    if k < 1:
        raise ValueError("k must be positive")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of points ({n})")
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        run = _lloyd(X, k, rng, max_iter, tol)
        if best is None or run.inertia < best.inertia:
            best = run
    return best


def _lloyd(X, k, rng, max_iter, tol):
    n = X.shape[0]
    C = kmeans_plusplus(X, k, rng)
    x_sq = np.einsum("ij,ij->i", X, X)

    D = _sq_dists(X, C, x_sq)
    labels = np.argmin(D, axis=1)
    rows = np.arange(n)
    inertia = float(D[rows, labels].sum())
    history = [inertia]
    it = 0
    for it in range(1, max_iter + 1):
        C = _update(X, labels, C, k)
        D = _sq_dists(X, C, x_sq)
        new_labels = np.argmin(D, axis=1)
        # assignment may only move a point if that strictly lowers its distance
        stay = D[rows, new_labels] >= D[rows, labels]
        new_labels[stay] = labels[stay]
        new_inertia = float(D[rows, new_labels].sum())
        history.append(new_inertia)
        converged = np.array_equal(new_labels, labels)
        improvement = (inertia - new_inertia) / inertia if inertia > 0 else 0.0
        labels, inertia = new_labels, new_inertia
        if converged or improvement < tol:
            break
    return Clustering(labels, C, inertia, it, tuple(history))


def group_sums(X, labels, k):
    """Row sums of X per label, as a sparse one-hot product (fixed summation order)."""
    n = X.shape[0]
    onehot = scipy.sparse.csr_matrix((np.ones(n), (labels, np.arange(n))), shape=(k, n))
    return np.asarray(onehot @ X)


def _update(X, labels, C, k):
    counts = np.bincount(labels, minlength=k)
    sums = group_sums(X, labels, k)
    newC = C.copy()
    nz = counts > 0
    newC[nz] = sums[nz] / counts[nz, None]
    empty = np.nonzero(~nz)[0]
    if empty.size:
        dist = np.einsum("ij,ij->i", X - newC[labels], X - newC[labels])
        order = np.argsort(-dist, kind="stable")
        for j, idx in zip(empty, order):
            newC[j] = X[idx]
    return newC


# ---------------------------------------------------------------------------
# dispersion


@dataclass
class DispersionReport:
    per_target: dict
    delta: float
    config: dict = field(default_factory=dict)

    def rows(self):
        for t, med in self.per_target.items():
            yield {"target": t, "median_std": med}

    def to_csv(self, path):
        write_report_csv(
            path,
            ["target", "median_std"],
            [[t, repr(float(m))] for t, m in self.per_target.items()] + [["DELTA", repr(float(self.delta))]],
            self.config,
        )


def write_report_csv(path, header, rows, config):
    import json

    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cluster_spread(values, assignments, k=None):
    """Population std of `values` within each non-empty cluster."""
    values = np.asarray(values, dtype=np.float64)
    assignments = np.asarray(assignments)
    k = int(assignments.max()) + 1 if k is None else k
    counts = np.bincount(assignments, minlength=k).astype(np.float64)
    s1 = np.bincount(assignments, weights=values, minlength=k)
    nz = counts > 0
    mean = np.zeros(k)
    mean[nz] = s1[nz] / counts[nz]
    dev = values - mean[assignments]
    s2 = np.bincount(assignments, weights=dev * dev, minlength=k)
    return np.sqrt(s2[nz] / counts[nz])


def dispersion(data, embed_fn, k, targets, seed=0, max_iter=100, n_init=1) -> DispersionReport:
    """Mean over targets of the median within-cluster std of the left-out amount.

    For each target ``t`` the clients are embedded from every other category
    (``embed_fn`` receives the dataset with ``t`` dropped and returns an
    :class:`EmbeddingSet`), clustered with K-means, and the population std of
    the raw ``t`` amounts (absent as 0) is taken per cluster.
    """
    data = as_dataset(data)
    table = data.transactions
    targets = list(targets)
    if not targets:
        raise ValueError("need at least one target category")
    if k > len(data):
        raise ValueError(f"k={k} exceeds the number of clients ({len(data)})")
    per_target = {}
    for t in targets:
        ti = table.category_index(t)
        emb = embed_fn(data.drop_category(ti))
        clus = kmeans(emb, k, seed=seed, max_iter=max_iter, n_init=n_init)
        spreads = cluster_spread(table.values[:, ti], clus.assignments, k)
        if spreads.size == 0:
            raise ValueError("clustering produced no clusters")
        per_target[table.categories[ti]] = float(np.median(spreads))
    delta = float(np.mean(list(per_target.values())))
    config = {"k": k, "seed": seed, "n_init": n_init, "targets": [table.categories[table.category_index(t)] for t in targets], "std": "population"}
    return DispersionReport(per_target, delta, config)


# ---------------------------------------------------------------------------
# typical members


@dataclass
class TypicalSelection:
    clusters: list          # selected cluster ids, densest first
    members: list           # (cluster, client_index) pairs in report order
    distances: list
    short_clusters: list    # clusters that had fewer than n_members


def cluster_density(X, clustering):
    """Inverse mean squared distance of each cluster's members to its centroid."""
    k = clustering.k
    lab = clustering.assignments
    diff = X - clustering.centroids[lab]
    sq = np.einsum("ij,ij->i", diff, diff)
    counts = np.bincount(lab, minlength=k).astype(np.float64)
    s = np.bincount(lab, weights=sq, minlength=k)
    dens = np.zeros(k)
    nz = counts > 0
    with np.errstate(divide="ignore"):
        dens[nz] = np.where(s[nz] > 0, counts[nz] / np.where(s[nz] > 0, s[nz], 1.0), np.inf)
    return dens, counts, sq


def typical_members(embeddings, clustering, n_clusters=10, n_members=10) -> TypicalSelection:
    X = _as_matrix(embeddings)
    if n_clusters > clustering.k:
        raise ValueError(f"n_clusters={n_clusters} exceeds k={clustering.k}")
    dens, counts, sq = cluster_density(X, clustering)
    nonempty = np.nonzero(counts > 0)[0]
    # densest first, ties by larger membership, then by cluster id
    order = sorted(nonempty, key=lambda c: (-dens[c], -counts[c], c))[:n_clusters]
    members, dists, short = [], [], []
    for c in order:
        idx = np.nonzero(clustering.assignments == c)[0]
        ranked = idx[np.lexsort((idx, sq[idx]))]
        if len(ranked) < n_members:
            short.append(int(c))
        for i in ranked[:n_members]:
            members.append((int(c), int(i)))
            dists.append(float(np.sqrt(sq[i])))
    return TypicalSelection([int(c) for c in order], members, dists, short)


def _roman(n):
    vals = [(1000, "M"), (900, "CM"), (500, "D"), (400, "CD"), (100, "C"), (90, "XC"),
            (50, "L"), (40, "XL"), (10, "X"), (9, "IX"), (5, "V"), (4, "IV"), (1, "I")]
    out = []
    for v, s in vals:
        while n >= v:
            out.append(s)
            n -= v
    return "".join(out)


def sign_matrix(table, rows):
    rows = np.asarray(rows, dtype=np.int64)
    return (np.sign(table.values[rows]) * table.present[rows]).astype(np.int64)


def pattern_matrix(table, selection, path=None, config=None):
    """Sign pattern (-1 expense, +1 income, 0 absent) of the selected clients, grouped by cluster.

    Returns ``(blocks, matrix)`` and optionally writes a CSV where each block
    of rows starts with a ``# block`` separator line.
    """
    if not selection.members:
        raise ValueError("selection is empty")
    rows = [i for _, i in selection.members]
    mat = sign_matrix(table, rows)
    block_of = {c: _roman(b + 1) for b, c in enumerate(selection.clusters)}
    blocks = [block_of[c] for c, _ in selection.members]
    if path is not None:
        import json

        with open(path, "w", encoding="utf-8", newline="") as fh:
            if config is not None:
                fh.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["block", "cluster", "client_id", *table.categories])
            prev = None
            for (c, i), b, r in zip(selection.members, blocks, mat):
                if b != prev:
                    fh.write(f"# block {b} cluster {c}\n")
                    prev = b
                w.writerow([b, c, table.client_ids[i], *r.tolist()])
    return blocks, mat


def read_pattern_matrix(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        blocks, clusters, ids, rows = [], [], [], []
        for r in reader:
            if not r:
                continue
            blocks.append(r[0])
            clusters.append(int(r[1]))
            ids.append(r[2])
            rows.append([int(v) for v in r[3:]])
    return header[3:], blocks, clusters, ids, np.array(rows, dtype=np.int64).reshape(len(rows), len(header) - 3)
