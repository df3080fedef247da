"""Command-line pipeline: ``txembed <command> [options]``.

Commands are pure functions of their input files and resolved options.
Options come from flags, and an INI file passed with ``--config`` overrides
them: keys of its ``[global]`` section and of the section named after the
command (e.g. ``[train]``) replace the matching flag values, with dashes
and underscores interchangeable in key names.

Relative paths are resolved against ``--data-dir``, which defaults to the
``TXEMBED_DATA_DIR`` environment variable and then to the working directory.

Seeds: every stochastic stage receives ``derive_seed(global_seed, stage)``,
the first 32-bit word of ``numpy.random.SeedSequence(global_seed,
spawn_key=(crc32(stage),))``. Stage names are ``gen``, ``split``, ``method``,
``kmeans``, ``baseline`` and ``tune``. A stage can therefore be reproduced
on its own without replaying the others.

Exit status: 0 on success, 1 on a runtime failure, 2 on a usage error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import sys
import zlib

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, msda
from .methods import METHODS, W2vMethod, make_method
from .preprocess import MODES
from .retrieval import (
    NeighborIndex,
    evaluate_lists,
    missing_category_eval,
    random_neighbor_lists,
    relevance_labels,
)
from .segment import dispersion, kmeans, pattern_matrix, typical_members, write_report_csv
from .synthgen import PRESETS, GenConfig, generate, load_archetypes, random_archetypes, save_archetypes
from .table import (
    Dataset,
    EmbeddingSet,
    load_embeddings,
    load_labels,
    load_sociodemo,
    load_table,
    save_embeddings,
    save_labels,
    save_sociodemo,
    save_table,
)
from .tuner import Grid, tune

SEED_STAGES = ("gen", "split", "method", "kmeans", "baseline", "tune")

# options that must be set by a flag or by the config file
REQUIRED = {
    "gen": ("out",),
    "train": ("table", "out"),
    "embed": ("model", "table", "out"),
    "eval": ("task", "table", "out"),
    "retrieve": ("queries", "database", "out"),
    "tune": ("table", "out"),
    "report": (),
}


class UsageError(Exception):
    """Bad or missing command-line input; reported with exit status 2."""


def derive_seed(global_seed, stage):
    ss = np.random.SeedSequence(int(global_seed), spawn_key=(zlib.crc32(stage.encode("utf-8")),))
    return int(ss.generate_state(1)[0])


def parse_number(text):
    """Integer from forms like ``50``, ``2E4`` or ``2e4``."""
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not value.is_integer():
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    return int(value)


# ---------------------------------------------------------------------------
# argument parser


def _add_method_options(p):
    p.add_argument("--method", choices=sorted(METHODS), default="msda")
    p.add_argument("--preproc", choices=MODES, default="none", help="preprocessing for raw and msda")
    p.add_argument("--p", type=float, default=0.5, help="msda masking probability")
    p.add_argument("--layers", type=int, default=1, help="msda stacked layers")
    p.add_argument("--ridge", default="auto", help="msda ridge lambda or 'auto'")
    p.add_argument("--output-mode", choices=msda.OUTPUT_MODES, default="last_layer")
    p.add_argument("--sociodemo-dim", type=int, default=16)
    p.add_argument("--bins", type=int, default=10, help="w2v percentile bins per category")
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--learning-rate", type=float, default=0.025)
    p.add_argument("--pooling", choices=("mean", "vlad"), default="mean")
    p.add_argument("--centroids", type=int, default=8)


def _add_data_options(p):
    p.add_argument("--table", help="transaction CSV (required)")
    p.add_argument("--sociodemo", help="sociodemographic CSV aligned with --table")


def _add_global_options(p, defaults):
    def default(value):
        return {"default": value if defaults else argparse.SUPPRESS}

    p.add_argument("--config", help="INI file whose [global] and [<command>] keys override flags", **default(None))
    p.add_argument("--seed", type=int, help="global seed", **default(0))
    p.add_argument("--threads", type=int, help="cap BLAS/OpenMP threads (1 = bit-reproducible)", **default(None))
    p.add_argument("--data-dir", help="base directory for relative paths", **default(None))


def build_parser():
    parser = argparse.ArgumentParser(prog="txembed", description="Client embeddings from aggregated transactions.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _add_global_options(parser, defaults=True)
    # the global options are also accepted after the command name
    common = argparse.ArgumentParser(add_help=False)
    _add_global_options(common, defaults=False)
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    _sub_add = sub.add_parser

    def add_parser(name, **kw):
        return _sub_add(name, parents=[common], **kw)

    sub.add_parser = add_parser

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--clients", type=parse_number, default=10000)
    g.add_argument("--categories", type=int, default=70)
    g.add_argument("--archetypes", type=int, default=5)
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--archetype-file", help="JSON archetype set to sample from")
    g.add_argument("--sociodemo-correlation", type=float, default=0.0)
    g.add_argument("--client-scale-std", type=float, default=GenConfig.client_scale_std)
    g.add_argument("--world-seed", type=int, default=None,
                   help="seed of the random archetype set (defaults to the derived gen seed)")
    g.add_argument("--out", help="output directory (required)")

    t = sub.add_parser("train", help="train an msda or w2v model")
    _add_data_options(t)
    _add_method_options(t)
    t.add_argument("--out", help="model file (required)")

    e = sub.add_parser("embed", help="embed a table with a trained model")
    e.add_argument("--model", help="model file (required)")
    e.add_argument("--table", help="transaction CSV (required)")
    e.add_argument("--out", help="embeddings CSV (required)")

    v = sub.add_parser("eval", help="dispersion, missing-category or typical-member evaluation")
    v.add_argument("--task", choices=("dispersion", "missing", "typical"), help="(required)")
    _add_data_options(v)
    _add_method_options(v)
    v.add_argument("--k", type=parse_number, default=None,
                   help="clusters (dispersion/typical, default n/400) or neighbors (missing, default 100)")
    v.add_argument("--targets", nargs="+", help="target categories as labels or 0-based indices; default: all")
    v.add_argument("--test-table", help="held-out clients for --task missing")
    v.add_argument("--test-sociodemo")
    v.add_argument("--test-fraction", type=float, default=0.2,
                   help="held-out share when --test-table is absent")
    v.add_argument("--cutoff", type=int, default=100, help="precision cutoff for --task missing")
    v.add_argument("--similarity", choices=("dot", "cosine"), default="dot")
    v.add_argument("--n-clusters", type=int, default=10)
    v.add_argument("--n-members", type=int, default=10)
    v.add_argument("--out", help="report CSV (required)")

    r = sub.add_parser("retrieve", help="kNN retrieval with MAP@k, recall and diversity")
    r.add_argument("--queries", help="query embeddings CSV (required)")
    r.add_argument("--database", help="database embeddings CSV (required)")
    r.add_argument("--k", type=parse_number, nargs="+", default=[50])
    r.add_argument("--relevance", help="CSV client_id,label for database clients")
    r.add_argument("--database-table", help="transaction CSV of database clients (with --descriptors)")
    r.add_argument("--descriptors", nargs="+", help="descriptor categories defining relevance")
    r.add_argument("--similarity", choices=("dot", "cosine"), default="dot")
    r.add_argument("--random-baseline", action="store_true", help="score with uniformly random neighbor lists")
    r.add_argument("--out", help="report CSV (required)")
    r.add_argument("--curve-out", help="recall curve CSV")

    u = sub.add_parser("tune", help="grid search on a train/validation split")
    _add_data_options(u)
    u.add_argument("--method", choices=("msda", "raw", "w2v"), default="msda")
    u.add_argument("--objective", choices=("dispersion", "missing_ap", "map_at_k"), default="dispersion")
    u.add_argument("--grid-preproc", nargs="+", choices=MODES, default=["none"])
    u.add_argument("--grid-p", type=float, nargs="+", default=[0.5])
    u.add_argument("--grid-layers", type=int, nargs="+", default=[1])
    u.add_argument("--grid-ridge", nargs="+", default=["auto"])
    u.add_argument("--grid-embed-dim", type=int, nargs="+", default=[32])
    u.add_argument("--grid-window", type=int, nargs="+", default=[5])
    u.add_argument("--val-fraction", type=float, default=0.2)
    u.add_argument("--targets", nargs="+")
    u.add_argument("--k", type=parse_number, default=None)
    u.add_argument("--budget", type=float, default=None, help="seconds before remaining points are skipped")
    u.add_argument("--out", help="leaderboard CSV (required)")
    u.add_argument("--best-out", help="best configuration as an INI file for --config")

    rp = sub.add_parser("report", help="print report CSVs with their embedded configuration")
    rp.add_argument("reports", nargs="+")
    rp.add_argument("--out", help="write the combined summary here instead of stdout")
    return parser


# ---------------------------------------------------------------------------
# config handling


def _dest_actions(parser, command):
    actions = {a.dest: a for a in parser._actions if a.dest not in ("help", "command")}
    for a in parser._subparsers._group_actions:
        if command in a.choices:
            actions.update({x.dest: x for x in a.choices[command]._actions if x.dest != "help"})
    return actions


def _convert(action, text):
    def one(tok):
        if action.type is None:
            return tok
        try:
            return action.type(tok)
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"config key {action.dest}: {exc}") from None

    if isinstance(action, argparse._StoreTrueAction):
        return text.strip().lower() in ("1", "true", "yes", "on")
    if action.nargs in ("+", "*"):
        values = [one(tok) for tok in text.split()]
    else:
        values = [one(text.strip())]
    if action.choices is not None and any(v not in action.choices for v in values):
        raise UsageError(f"config key {action.dest}: choose from {sorted(action.choices)}")
    return values if action.nargs in ("+", "*") else values[0]


def apply_config(parser, args):
    if not args.config:
        return args
    path = _resolve(args, args.config, base_dir=None)
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    actions = _dest_actions(parser, args.command)
    for section in ("global", args.command):
        if not cp.has_section(section):
            continue
        for key, text in cp.items(section):
            dest = key.replace("-", "_")
            if dest not in actions or dest == "config":
                raise UsageError(f"unknown key {key!r} in config section [{section}]")
            setattr(args, dest, _convert(actions[dest], text))
    return args


def _resolve(args, path, base_dir="default"):
    if path is None or os.path.isabs(path):
        return path
    base = args.data_dir if base_dir == "default" else base_dir
    base = base or os.environ.get("TXEMBED_DATA_DIR")
    return os.path.join(base, path) if base else path


def resolved_config(args):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("threads", "data_dir", "config")}
    cfg["stage_seeds"] = {s: derive_seed(args.seed, s) for s in SEED_STAGES}
    cfg["version"] = __version__
    return cfg


# ---------------------------------------------------------------------------
# shared helpers


def _need(path, what):
    if not os.path.exists(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _load_dataset(args, table_key="table", socio_key="sociodemo"):
    tpath = _need(_resolve(args, getattr(args, table_key)), "transaction table")
    table = load_table(tpath)
    socio = None
    spath = getattr(args, socio_key, None)
    if spath:
        socio = load_sociodemo(_need(_resolve(args, spath), "sociodemographic table"))
    return Dataset(table, socio)


def _method_from_args(args):
    name = args.method
    seed = derive_seed(args.seed, "method")
    if name == "raw":
        return make_method("raw", preproc=args.preproc)
    if name == "msda":
        ridge = None if str(args.ridge) == "auto" else float(args.ridge)
        return make_method("msda", p=args.p, n_layers=args.layers, ridge=ridge, preproc=args.preproc,
                           output_mode=args.output_mode)
    if name == "sociodemo":
        return make_method("sociodemo", target_dim=args.sociodemo_dim, seed=seed)
    return make_method("w2v", n_bins=args.bins, embed_dim=args.embed_dim, window=args.window,
                       negatives=args.negatives, epochs=args.epochs, learning_rate=args.learning_rate,
                       pooling=args.pooling, n_centroids=args.centroids, seed=seed)


def _targets(table, targets):
    if not targets:
        return list(table.categories)
    out = []
    for t in targets:
        key = int(t) if t.isdigit() else t
        try:
            out.append(table.categories[table.category_index(key)])
        except (KeyError, IndexError, ValueError):
            raise UsageError(f"unknown target category {t!r}") from None
    return out


def _mkdir_for(path):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)


def _holdout(data, fraction, seed):
    if not 0 < fraction < 1:
        raise UsageError("holdout fraction must lie in (0, 1)")
    n = len(data)
    n_hold = max(1, int(round(n * fraction)))
    perm = np.random.default_rng(seed).permutation(n)
    return data.take(np.sort(perm[n_hold:])), data.take(np.sort(perm[:n_hold]))


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args):
    out = _resolve(args, args.out)
    os.makedirs(out, exist_ok=True)
    seed = derive_seed(args.seed, "gen")
    categories = None
    if args.archetype_file:
        archetypes, categories = load_archetypes(_need(_resolve(args, args.archetype_file), "archetype file"))
        n_cat = archetypes[0].n_categories
    elif args.preset:
        archetypes, categories = PRESETS[args.preset](args.categories, seed)
        n_cat = args.categories
    else:
        world = seed if args.world_seed is None else args.world_seed
        archetypes = random_archetypes(args.archetypes, args.categories, world)
        n_cat = args.categories
    cfg = GenConfig(args.clients, n_cat, len(archetypes), seed, args.sociodemo_correlation, args.client_scale_std)
    table, socio, labels = generate(cfg, archetypes, categories)
    save_table(table, os.path.join(out, "transactions.csv"))
    save_sociodemo(socio, os.path.join(out, "sociodemo.csv"))
    save_labels(table.client_ids, labels, os.path.join(out, "labels.csv"))
    save_archetypes(archetypes, os.path.join(out, "archetypes.json"), table.categories)
    with open(os.path.join(out, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(resolved_config(args), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return 0


def cmd_train(args):
    if args.method not in ("msda", "w2v"):
        raise UsageError("train persists msda or w2v models; raw and sociodemo need no training")
    data = _load_dataset(args)
    method = _method_from_args(args).fit(data)
    out = _resolve(args, args.out)
    _mkdir_for(out)
    if args.method == "msda":
        msda.save(method.model_, out)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(method.to_json())
            fh.write("\n")
    return 0


def load_model(path):
    """An msda model or a fitted w2v method, detected from the file contents."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob.startswith(msda.MAGIC):
        return msda.loads(blob)
    try:
        return W2vMethod.from_json(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError) as exc:
        raise ValueError(f"unrecognized model file {path}: {exc}") from None


def cmd_embed(args):
    model = load_model(_need(_resolve(args, args.model), "model file"))
    table = load_table(_need(_resolve(args, args.table), "transaction table"))
    if isinstance(model, msda.MsdaModel):
        if table.n_categories != model.d:
            raise ValueError(f"table has {table.n_categories} categories but the model expects {model.d}")
        emb = msda.embed(model, table)
    else:
        if list(table.categories) != list(model.bins_.categories):
            raise ValueError("table categories do not match the categories the w2v model was fitted on")
        emb = model.transform(table)
        emb = EmbeddingSet(emb.values, table.client_ids, emb.source)
    out = _resolve(args, args.out)
    _mkdir_for(out)
    save_embeddings(emb, out)
    return 0


def _embed_fn(method):
    def fn(sub):
        return method.fit(sub).transform(sub)

    return fn


def cmd_eval(args):
    data = _load_dataset(args)
    method = _method_from_args(args)
    out = _resolve(args, args.out)
    _mkdir_for(out)
    cfg = resolved_config(args)
    kseed = derive_seed(args.seed, "kmeans")
    if args.task == "dispersion":
        k = args.k or max(1, len(data) // 400)
        rep = dispersion(data, _embed_fn(method), k, _targets(data.transactions, args.targets), seed=kseed)
        rep.config = {**cfg, "k_resolved": k, "dispersion": rep.config}
        rep.to_csv(out)
    elif args.task == "missing":
        if args.test_table:
            train = data
            test = _load_dataset(args, "test_table", "test_sociodemo")
        else:
            train, test = _holdout(data, args.test_fraction, derive_seed(args.seed, "split"))
        rep = missing_category_eval(train, test, method, _targets(train.transactions, args.targets),
                                    k=args.k or 100, cutoff=args.cutoff, similarity=args.similarity)
        rows = [[t, repr(rep.ap[t]), repr(rep.p_at[t])] for t in rep.ap]
        rows.append(["MEAN", repr(rep.mean_ap), repr(rep.mean_p_at)])
        full = {**cfg, "missing": rep.config, "precision_truncated": rep.truncated, "n_test": len(test)}
        write_report_csv(out, ["target", "ap", f"p_at_{args.cutoff}"], rows, full)
    else:
        k = args.k or max(1, len(data) // 400)
        emb = method.fit(data).transform(data)
        clus = kmeans(emb, k, seed=kseed)
        sel = typical_members(emb, clus, min(args.n_clusters, k), args.n_members)
        pattern_matrix(data.transactions, sel, out, {**cfg, "k_resolved": k, "short_clusters": sel.short_clusters})
    return 0


def _load_relevance(args, db):
    if args.relevance:
        ids, labels = load_labels(_need(_resolve(args, args.relevance), "relevance file"))
        pos = {cid: i for i, cid in enumerate(ids)}
        try:
            return np.array([labels[pos[c]] != 0 for c in db.client_ids], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"database client {exc.args[0]!r} missing from the relevance file") from None
    if args.database_table and args.descriptors:
        table = load_table(_need(_resolve(args, args.database_table), "database table"))
        if list(table.client_ids) != list(db.client_ids):
            raise ValueError("database table and database embeddings list different clients")
        return relevance_labels(table, [int(d) if d.isdigit() else d for d in args.descriptors])
    raise UsageError("give --relevance, or --database-table with --descriptors")


def cmd_retrieve(args):
    queries = load_embeddings(_need(_resolve(args, args.queries), "query embeddings"))
    db = load_embeddings(_need(_resolve(args, args.database), "database embeddings"))
    relevance = _load_relevance(args, db)
    ks = sorted(set(args.k))
    if ks[0] < 1 or ks[-1] > len(db):
        raise UsageError(f"every k must lie in [1, {len(db)}]")
    if args.random_baseline:
        lists = random_neighbor_lists(len(queries), len(db), ks[-1], derive_seed(args.seed, "baseline"))
    else:
        lists = NeighborIndex(db, args.similarity).search(queries, ks[-1])
    rep = evaluate_lists(lists, relevance, ks, config=resolved_config(args))
    out = _resolve(args, args.out)
    _mkdir_for(out)
    header = ["metric", *[f"k={k}" for k in ks]]
    rows = [
        ["MAP", *[repr(rep.map_at[k]) for k in ks]],
        ["R", *[rep.R[k] for k in ks]],
        ["r", *[repr(rep.r[k]) for k in ks]],
        ["zero_relevant_queries", *[rep.zero_relevant[k] for k in ks]],
    ]
    write_report_csv(out, header, rows, {**rep.config, "prevalence": rep.prevalence, "n_queries": len(queries),
                                         "n_database": len(db)})
    if args.curve_out and rep.recall is not None:
        cpath = _resolve(args, args.curve_out)
        _mkdir_for(cpath)
        write_report_csv(cpath, ["depth", "recall"], [[int(d), repr(float(x))] for d, x in zip(rep.recall_depths, rep.recall)],
                         rep.config)
    return 0


def cmd_tune(args):
    data = _load_dataset(args)
    train, val = _holdout(data, args.val_fraction, derive_seed(args.seed, "split"))
    grid = Grid(preproc=args.grid_preproc, p=args.grid_p, n_layers=args.grid_layers, ridge=args.grid_ridge,
                embed_dim=args.grid_embed_dim, window=args.grid_window)
    targets = _targets(data.transactions, args.targets)
    k = args.k or (max(1, len(val) // 400) if args.objective == "dispersion" else 100)
    print(f"evaluating {grid.size(args.method)} grid points", file=sys.stderr)
    res = tune(train, val, args.method, grid, args.objective, seed=derive_seed(args.seed, "tune"),
               objective_params={"targets": targets, "k": k}, budget_seconds=args.budget)
    res.config = {**resolved_config(args), "tuner": res.config}
    out = _resolve(args, args.out)
    _mkdir_for(out)
    res.to_csv(out)
    if args.best_out:
        best = res.best_config
        cp = configparser.ConfigParser(interpolation=None)
        section = {"method": args.method}
        names = {"preproc": "preproc", "p": "p", "n_layers": "layers", "ridge": "ridge",
                 "embed_dim": "embed-dim", "window": "window"}
        section.update({names[key]: str(val) for key, val in best.items()})
        cp["global"] = {"seed": str(args.seed)}
        cp["train"] = section
        cp["eval"] = section
        bpath = _resolve(args, args.best_out)
        _mkdir_for(bpath)
        with open(bpath, "w", encoding="utf-8") as fh:
            cp.write(fh)
    return 0


def read_report(path):
    """(config dict or None, header, rows) of a report CSV."""
    config = None
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("# config: "):
            config = json.loads(line[len("# config: "):])
        elif not line.startswith("#"):
            body.append(line)
    rows = list(csv.reader(body))
    return config, rows[0] if rows else [], rows[1:]


def cmd_report(args):
    chunks = []
    for path in args.reports:
        config, header, rows = read_report(_need(_resolve(args, path), "report"))
        chunks.append(f"## {os.path.basename(path)}")
        if config is not None:
            chunks.append("config: " + json.dumps(config, sort_keys=True))
        chunks.append(" | ".join(header))
        chunks.extend(" | ".join(r) for r in rows)
        chunks.append("")
    text = "\n".join(chunks)
    if args.out:
        out = _resolve(args, args.out)
        _mkdir_for(out)
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "embed": cmd_embed,
    "eval": cmd_eval,
    "retrieve": cmd_retrieve,
    "tune": cmd_tune,
    "report": cmd_report,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    try:
        args = apply_config(parser, args)
        missing = [f"--{d.replace('_', '-')}" for d in REQUIRED[args.command] if getattr(args, d, None) is None]
        if missing:
            raise UsageError("missing required option(s) " + ", ".join(missing))
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"txembed {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"txembed {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
