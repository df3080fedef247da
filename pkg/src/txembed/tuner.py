"""Exhaustive grid search of embedding hyperparameters against a task metric.

``tune`` only ever sees the training and validation datasets; the test
split never enters its call graph.
"""
from __future__ import annotations

import csv
import itertools
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .methods import make_method
from .retrieval import NeighborIndex, map_from_lists, missing_category_eval, theta_labels
from .segment import dispersion
from .table import as_dataset

OBJECTIVES = {"dispersion": "minimize", "missing_ap": "maximize", "map_at_k": "maximize"}

# per-method grid axes, in the order that defines lexicographic grid order
AXES = {
    "msda": ("preproc", "p", "n_layers", "ridge"),
    "raw": ("preproc",),
    "w2v": ("embed_dim", "window"),
    "sociodemo": ("target_dim",),
}


@dataclass
class Grid:
    preproc: list = field(default_factory=lambda: ["none"])
    p: list = field(default_factory=lambda: [0.5])
    n_layers: list = field(default_factory=lambda: [1])
    ridge: list = field(default_factory=lambda: ["auto"])
    embed_dim: list = field(default_factory=lambda: [32])
    window: list = field(default_factory=lambda: [5])
    target_dim: list = field(default_factory=lambda: [16])
    fixed: dict = field(default_factory=dict)   # extra constructor arguments held constant

    def points(self, method):
        if method not in AXES:
            raise ValueError(f"unknown method {method!r}")
        axes = AXES[method]
        values = [list(getattr(self, a)) for a in axes]
        if any(len(v) == 0 for v in values):
            raise ValueError("every grid axis needs at least one value")
        return [dict(zip(axes, combo)) for combo in itertools.product(*values)]

    def size(self, method):
        return int(np.prod([len(getattr(self, a)) for a in AXES[method]]))


@dataclass
class LeaderboardEntry:
    position: int
    config: dict
    score: float | None
    status: str = "ok"            # ok | failed | skipped
    error: str = ""
    runtime: float = 0.0


@dataclass
class TunerResult:
    method: str
    objective: str
    direction: str
    leaderboard: list
    config: dict = field(default_factory=dict)

    @property
    def best(self):
        return self.leaderboard[0]

    @property
    def best_config(self):
        return dict(self.best.config)

    def to_csv(self, path, include_runtime=False):
        axes = AXES[self.method]
        header = ["rank", "position", *axes, "score", "status", "error"] + (["runtime_s"] if include_runtime else [])
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("# config: " + json.dumps(self.config, sort_keys=True) + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for rank, e in enumerate(self.leaderboard, start=1):
                row = [rank, e.position, *[e.config[a] for a in axes],
                       "" if e.score is None else repr(e.score), e.status, e.error]
                if include_runtime:
                    row.append(f"{e.runtime:.3f}")
                w.writerow(row)


def _restrict(train, sub):
    """The training dataset reduced to the categories present in `sub`."""
    cats = sub.transactions.categories
    return type(train)(train.transactions.select_categories(cats), train.sociodemo, train.labels)


def score_config(train, val, method, params, objective, objective_params):
    op = dict(objective_params)
    targets = op.get("targets")
    if not targets:
        raise ValueError("objective needs a non-empty list of target categories")
    if objective == "dispersion":
        def embed_fn(sub):
            m = make_method(method, **params)
            return m.fit(_restrict(train, sub)).transform(sub)

        return dispersion(val, embed_fn, op.get("k", 25), targets, seed=op.get("seed", 0)).delta
    if objective == "missing_ap":
        rep = missing_category_eval(train, val, make_method(method, **params), targets, k=op.get("k", 100))
        return rep.mean_ap
    if objective == "map_at_k":
        k = op.get("k", 100)
        maps = []
        for t in targets:
            ti = train.transactions.category_index(t)
            label = train.transactions.categories[ti]
            tr = train.drop_category(ti)
            va = val.drop_category(val.transactions.category_index(label))
            pos = np.nonzero(theta_labels(val.transactions, label))[0]
            if pos.size == 0:
                raise ValueError(f"no validation positives for {label}")
            m = make_method(method, **params).fit(tr)
            index = NeighborIndex(m.transform(tr))
            lists = index.search(m.transform(va.take(pos)), k)
            maps.append(map_from_lists(lists, theta_labels(train.transactions, ti)))
        return float(np.mean(maps))
    raise ValueError(f"unknown objective {objective!r}")


def tune(train, val, method, grid: Grid, objective, seed=0, objective_params=None, budget_seconds=None):
    """Evaluate every grid point in lexicographic order; rank by the objective.

    Failing points are kept as ``failed`` entries; once ``budget_seconds`` is
    exhausted the remaining points are recorded as ``skipped`` (the first
    point always runs). Ties keep grid order.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {sorted(OBJECTIVES)}")
    train, val = as_dataset(train), as_dataset(val)
    direction = OBJECTIVES[objective]
    points = grid.points(method)
    op = {"seed": seed, **(objective_params or {})}
    start = time.perf_counter()
    entries = []
    for pos, point in enumerate(points):
        params = {**grid.fixed, **point}
        if method in ("w2v", "sociodemo"):
            params.setdefault("seed", seed)
        if method == "msda" and params.get("ridge") == "auto":
            params["ridge"] = None
        if budget_seconds is not None and entries and time.perf_counter() - start > budget_seconds:
            entries.append(LeaderboardEntry(pos, point, None, "skipped"))
            continue
        t0 = time.perf_counter()
        try:
            score = float(score_config(train, val, method, params, objective, op))
            if not np.isfinite(score):
                raise ValueError("objective is not finite")
            entries.append(LeaderboardEntry(pos, point, score, "ok", "", time.perf_counter() - t0))
        except Exception as exc:  # recorded, search continues
            entries.append(LeaderboardEntry(pos, point, None, "failed", f"{type(exc).__name__}: {exc}",
                                            time.perf_counter() - t0))
    if not any(e.status == "ok" for e in entries):
        raise RuntimeError("every grid point failed or was skipped: " + "; ".join(e.error for e in entries if e.error))
    sign = 1.0 if direction == "minimize" else -1.0
    entries.sort(key=lambda e: (e.status != "ok", sign * e.score if e.score is not None else 0.0, e.position))
    config = {"method": method, "objective": objective, "direction": direction, "seed": seed,
              "objective_params": {k: v for k, v in op.items()}, "grid_size": len(points),
              "fixed": dict(grid.fixed)}
    return TunerResult(method, objective, direction, entries, config)
