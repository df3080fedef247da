"""Client x category transaction tables, sociodemographic tables, embeddings and splits.

Amounts are signed (expenses negative, income positive). A cell with no
activity is *absent*, which is tracked by an explicit mask and is distinct
from an observed 0.0.
"""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

SOCIODEMO_ATTRIBUTES = ("age_range", "gender", "income_range", "postcode", "city", "province")


class TableParseError(ValueError):
    """Raised on a malformed CSV row or cell; carries the 1-based row and the column name."""

    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


def _readonly(a):
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class TransactionTable:
    client_ids: tuple
    categories: tuple
    values: np.ndarray
    present: np.ndarray

    def __post_init__(self):
        ids = tuple(str(c) for c in self.client_ids)
        cats = tuple(str(c) for c in self.categories)
        values = np.asarray(self.values, dtype=np.float64)
        present = np.asarray(self.present, dtype=bool)
        if values.ndim != 2:
            values = values.reshape(len(ids), len(cats))
        if values.shape != (len(ids), len(cats)) or present.shape != values.shape:
            raise ValueError(
                f"values/present shape {values.shape}/{present.shape} does not match "
                f"{len(ids)} clients x {len(cats)} categories"
            )
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate client ids")
        if len(set(cats)) != len(cats):
            raise ValueError("duplicate category labels")
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite amount in table")
        # absent cells always hold 0.0 so `values` doubles as the absent->0 view
        values = np.where(present, values, 0.0)
        object.__setattr__(self, "client_ids", ids)
        object.__setattr__(self, "categories", cats)
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "present", _readonly(present))

    @classmethod
    def from_array(cls, values, client_ids=None, categories=None):
        """Build a table from a matrix where NaN marks an absent cell."""
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("expected a 2-d array")
        n, k = values.shape
        if client_ids is None:
            client_ids = [f"client{i + 1}" for i in range(n)]
        if categories is None:
            categories = default_categories(k)
        present = ~np.isnan(values)
        return cls(client_ids, categories, np.nan_to_num(values, nan=0.0), present)

    @property
    def n_clients(self):
        return len(self.client_ids)

    @property
    def n_categories(self):
        return len(self.categories)

    def __len__(self):
        return self.n_clients

    def filled(self):
        """Amount matrix with absent cells mapped to 0.0."""
        return np.array(self.values)

    def with_nan(self):
        return np.where(self.present, self.values, np.nan)

    def category_index(self, label_or_index):
        if isinstance(label_or_index, (int, np.integer)):
            idx = int(label_or_index)
            if not 0 <= idx < self.n_categories:
                raise IndexError(f"category index {idx} out of range [0, {self.n_categories})")
            return idx
        try:
            return self.categories.index(str(label_or_index))
        except ValueError:
            raise KeyError(f"unknown category {label_or_index!r}") from None

    def take(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return TransactionTable(
            [self.client_ids[i] for i in rows], self.categories, self.values[rows], self.present[rows]
        )

    def select_categories(self, cols):
        cols = [self.category_index(c) for c in cols]
        return TransactionTable(
            self.client_ids,
            [self.categories[c] for c in cols],
            self.values[:, cols],
            self.present[:, cols],
        )

    def drop_category(self, t):
        """The table restricted to every category except `t` (the x_{-t} view)."""
        t = self.category_index(t)
        keep = [c for c in range(self.n_categories) if c != t]
        return self.select_categories(keep)

    def equals(self, other):
        return (
            isinstance(other, TransactionTable)
            and self.client_ids == other.client_ids
            and self.categories == other.categories
            and np.array_equal(self.present, other.present)
            and np.array_equal(self.values, other.values)
        )


def default_categories(k):
    return [f"CAT{i + 1}" for i in range(k)]


@dataclass(frozen=True, eq=False)
class SociodemoTable:
    """Categorical attributes per client, each drawn from a declared vocabulary."""

    client_ids: tuple
    attributes: dict
    vocab: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = tuple(str(c) for c in self.client_ids)
        attrs = {}
        for name in SOCIODEMO_ATTRIBUTES:
            if name not in self.attributes:
                raise ValueError(f"missing sociodemographic attribute {name!r}")
            col = np.asarray([str(v) for v in self.attributes[name]], dtype=object)
            if len(col) != len(ids):
                raise ValueError(f"attribute {name!r} has {len(col)} values for {len(ids)} clients")
            attrs[name] = col
        vocab = {}
        for name in SOCIODEMO_ATTRIBUTES:
            declared = self.vocab.get(name)
            if declared is None:
                declared = sorted(set(attrs[name]))
            declared = tuple(str(v) for v in declared)
            unknown = set(attrs[name]) - set(declared)
            if unknown:
                raise ValueError(f"attribute {name!r} has values outside its vocabulary: {sorted(unknown)[:5]}")
            vocab[name] = declared
        object.__setattr__(self, "client_ids", ids)
        object.__setattr__(self, "attributes", attrs)
        object.__setattr__(self, "vocab", vocab)

    def __len__(self):
        return len(self.client_ids)

    def take(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return SociodemoTable(
            [self.client_ids[i] for i in rows],
            {k: v[rows] for k, v in self.attributes.items()},
            self.vocab,
        )


@dataclass(frozen=True)
class Embedding:
    values: np.ndarray
    source: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if v.size == 0:
            raise ValueError("embedding must have positive dimension")
        if not np.all(np.isfinite(v)):
            raise ValueError("embedding has non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def dim(self):
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    """One embedding per client, stacked row-wise."""

    values: np.ndarray
    client_ids: tuple = ()
    source: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("embedding set must be a 2-d array")
        if not np.all(np.isfinite(v)):
            raise ValueError("embedding set has non-finite entries")
        ids = tuple(str(c) for c in self.client_ids) or tuple(str(i) for i in range(v.shape[0]))
        if len(ids) != v.shape[0]:
            raise ValueError(f"{len(ids)} client ids for {v.shape[0]} embeddings")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "client_ids", ids)

    @property
    def dim(self):
        return self.values.shape[1]

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, i):
        return Embedding(self.values[i], self.source)

    def take(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return EmbeddingSet(self.values[rows], [self.client_ids[i] for i in rows], self.source)


@dataclass(frozen=True)
class Dataset:
    """A transaction table plus optional paired sociodemographics and archetype labels."""

    transactions: TransactionTable
    sociodemo: SociodemoTable | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        n = self.transactions.n_clients
        if self.sociodemo is not None and self.sociodemo.client_ids != self.transactions.client_ids:
            raise ValueError("sociodemographic table is not aligned with the transaction table")
        if self.labels is not None and len(self.labels) != n:
            raise ValueError("label count does not match client count")

    def __len__(self):
        return self.transactions.n_clients

    def take(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(
            self.transactions.take(rows),
            None if self.sociodemo is None else self.sociodemo.take(rows),
            None if self.labels is None else np.asarray(self.labels)[rows],
        )

    def drop_category(self, t):
        return Dataset(self.transactions.drop_category(t), self.sociodemo, self.labels)


def as_dataset(data):
    if isinstance(data, Dataset):
        return data
    if isinstance(data, TransactionTable):
        return Dataset(data)
    raise TypeError(f"expected Dataset or TransactionTable, got {type(data).__name__}")


@dataclass(frozen=True)
class SplitSpec:
    n_train: int
    n_val: int
    n_test: int

    def __post_init__(self):
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise ValueError("split sizes must be non-negative")

    @property
    def total(self):
        return self.n_train + self.n_val + self.n_test


def split_indices(n, spec, seed):
    if spec.total > n:
        raise ValueError(f"split sizes {spec.n_train}/{spec.n_val}/{spec.n_test} exceed {n} clients")
    perm = np.random.default_rng(seed).permutation(n)
    a, b = spec.n_train, spec.n_train + spec.n_val
    return perm[:a], perm[a:b], perm[b : b + spec.n_test]


def split(table, spec, seed):
    """Random disjoint train/validation/test partition, reproducible under `seed`."""
    idx = split_indices(len(table), spec, seed)
    return tuple(table.take(np.sort(i)) for i in idx)


# ---------------------------------------------------------------------------
# CSV I/O

def _format_amount(x):
    return repr(float(x))


def _parse_amount(cell, row, column):
    text = cell.strip()
    if "_" in text:
        raise TableParseError(f"non-numeric cell {cell!r}", row, column)
    try:
        value = float(text)
    except ValueError:
        raise TableParseError(f"non-numeric cell {cell!r}", row, column) from None
    if not math.isfinite(value):
        raise TableParseError(f"non-finite cell {cell!r}", row, column)
    return value


def _open_text(path_or_buf, mode):
    if isinstance(path_or_buf, (str, os.PathLike)):
        return open(path_or_buf, mode, encoding="utf-8", newline="")
    return path_or_buf


def read_table(fh):
    reader = csv.reader(line for line in fh if not line.startswith("#"))
    try:
        header = next(reader)
    except StopIteration:
        raise TableParseError("missing header row", 1) from None
    if not header or header[0].strip() != "client_id":
        raise TableParseError("header must start with 'client_id'", 1, header[0] if header else None)
    categories = [h.strip() for h in header[1:]]
    width = len(header)
    ids, rows, mask = [], [], []
    for lineno, fields in enumerate(reader, start=2):
        if not fields:
            continue
        if len(fields) != width:
            raise TableParseError(f"expected {width} fields, found {len(fields)}", lineno)
        vals, pres = [], []
        for cat, cell in zip(categories, fields[1:]):
            if cell.strip() == "":
                vals.append(0.0)
                pres.append(False)
            else:
                vals.append(_parse_amount(cell, lineno, cat))
                pres.append(True)
        ids.append(fields[0])
        rows.append(vals)
        mask.append(pres)
    k = len(categories)
    values = np.array(rows, dtype=np.float64).reshape(len(ids), k)
    present = np.array(mask, dtype=bool).reshape(len(ids), k)
    try:
        return TransactionTable(ids, categories, values, present)
    except ValueError as exc:
        raise TableParseError(str(exc)) from None


def load_table(path, format="csv"):
    """Load a transaction table; an empty cell is an absent category."""
    if format != "csv":
        raise ValueError(f"unsupported table format {format!r}")
    with _open_text(path, "r") as fh:
        return read_table(fh)


def write_table(table, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["client_id", *table.categories])
    for i, cid in enumerate(table.client_ids):
        w.writerow(
            [cid]
            + [_format_amount(v) if p else "" for v, p in zip(table.values[i], table.present[i])]
        )


def save_table(table, path):
    with _open_text(path, "w") as fh:
        write_table(table, fh)


def table_to_csv(table):
    buf = io.StringIO()
    write_table(table, buf)
    return buf.getvalue()


def save_sociodemo(table, path):
    with _open_text(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["client_id", *SOCIODEMO_ATTRIBUTES])
        for i, cid in enumerate(table.client_ids):
            w.writerow([cid] + [table.attributes[a][i] for a in SOCIODEMO_ATTRIBUTES])


def load_sociodemo(path, vocab=None):
    with _open_text(path, "r") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader, None)
        if header is None or header[0] != "client_id":
            raise TableParseError("header must start with 'client_id'", 1)
        missing = [a for a in SOCIODEMO_ATTRIBUTES if a not in header]
        if missing:
            raise TableParseError(f"missing attribute columns {missing}", 1)
        pos = {a: header.index(a) for a in SOCIODEMO_ATTRIBUTES}
        ids, cols = [], {a: [] for a in SOCIODEMO_ATTRIBUTES}
        for lineno, fields in enumerate(reader, start=2):
            if not fields:
                continue
            if len(fields) != len(header):
                raise TableParseError(f"expected {len(header)} fields, found {len(fields)}", lineno)
            ids.append(fields[0])
            for a in SOCIODEMO_ATTRIBUTES:
                cols[a].append(fields[pos[a]])
    return SociodemoTable(ids, cols, vocab or {})


def save_embeddings(emb, path):
    with _open_text(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["client_id", *[f"e{j}" for j in range(emb.dim)]])
        for cid, row in zip(emb.client_ids, emb.values):
            w.writerow([cid, *map(_format_amount, row)])


def load_embeddings(path, source=""):
    with _open_text(path, "r") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        ids, rows = [], []
        for lineno, fields in enumerate(reader, start=2):
            if not fields:
                continue
            if len(fields) != len(header):
                raise TableParseError(f"expected {len(header)} fields, found {len(fields)}", lineno)
            ids.append(fields[0])
            rows.append([_parse_amount(c, lineno, h) for c, h in zip(fields[1:], header[1:])])
    return EmbeddingSet(np.array(rows, dtype=np.float64).reshape(len(ids), len(header) - 1), ids, source)


def save_labels(client_ids: Sequence[str], labels: Iterable[int], path):
    with _open_text(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["client_id", "archetype"])
        for cid, lab in zip(client_ids, labels):
            w.writerow([cid, int(lab)])


def load_labels(path):
    with _open_text(path, "r") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = [r for r in reader if r]
    return [r[0] for r in rows], np.array([int(r[1]) for r in rows], dtype=np.int64)
