"""Uniform fit/transform wrappers around each embedding family.

Every method is fitted on a :class:`~txembed.table.Dataset` and can then
embed any dataset with the same categories.
"""
from __future__ import annotations

import json

import numpy as np

from . import msda
from .preprocess import PreprocSpec, SociodemoEncoder, raw_embedding
from .skipgram import W2vConfig, train_skipgram
from .table import as_dataset
from .tokens import BinDictionary, fit_bins, fit_vlad, pool_mean, pool_vlad, tokenize, VladCodebook


class RawMethod:
    name = "raw"

    def __init__(self, preproc="none"):
        self.preproc = PreprocSpec.parse(preproc)

    def params(self):
        return {"preproc": str(self.preproc)}

    def fit(self, data):
        self.categories_ = as_dataset(data).transactions.categories
        return self

    def transform(self, data):
        return raw_embedding(as_dataset(data).transactions, self.preproc)


class MsdaMethod:
    name = "msda"

    def __init__(self, p=0.5, n_layers=1, ridge=None, preproc="none", output_mode="last_layer"):
        self.p = float(p)
        self.n_layers = int(n_layers)
        self.ridge = None if ridge in (None, "auto") else float(ridge)
        self.preproc = PreprocSpec.parse(preproc)
        self.output_mode = output_mode

    def params(self):
        return {
            "p": self.p,
            "n_layers": self.n_layers,
            "ridge": "auto" if self.ridge is None else self.ridge,
            "preproc": str(self.preproc),
            "output_mode": self.output_mode,
        }

    def fit(self, data):
        table = as_dataset(data).transactions
        self.model_ = msda.train(table, self.p, self.n_layers, self.ridge, self.preproc, self.output_mode)
        self.categories_ = table.categories
        return self

    def transform(self, data):
        table = as_dataset(data).transactions
        return msda.embed(self.model_, table)


class SociodemoMethod:
    name = "sociodemo"

    def __init__(self, target_dim=16, seed=0):
        self.target_dim = int(target_dim)
        self.seed = seed

    def params(self):
        return {"target_dim": self.target_dim}

    def fit(self, data):
        data = as_dataset(data)
        if data.sociodemo is None:
            raise ValueError("sociodemographic embedding needs a sociodemographic table")
        self.encoder_ = SociodemoEncoder(self.target_dim, self.seed).fit(data.sociodemo)
        return self

    def transform(self, data):
        data = as_dataset(data)
        if data.sociodemo is None:
            raise ValueError("sociodemographic embedding needs a sociodemographic table")
        return self.encoder_.transform(data.sociodemo)


class W2vMethod:
    name = "w2v"

    def __init__(self, n_bins=10, embed_dim=32, window=5, negatives=5, epochs=5, learning_rate=0.025,
                 pooling="mean", n_centroids=8, seed=0):
        if pooling not in ("mean", "vlad"):
            raise ValueError("pooling must be 'mean' or 'vlad'")
        self.n_bins = int(n_bins)
        self.cfg = W2vConfig(int(embed_dim), int(window), int(negatives), int(epochs), float(learning_rate), int(seed))
        self.pooling = pooling
        self.n_centroids = int(n_centroids)

    def params(self):
        return {"n_bins": self.n_bins, **self.cfg.to_dict(), "pooling": self.pooling, "n_centroids": self.n_centroids}

    def fit(self, data):
        table = as_dataset(data).transactions
        self.bins_ = fit_bins(table, self.n_bins)
        corpus = tokenize(table, self.bins_)
        self.vectors_ = train_skipgram(corpus, self.cfg)
        if self.pooling == "vlad":
            self.codebook_ = fit_vlad(self.vectors_, min(self.n_centroids, len(corpus.vocabulary)), self.cfg.seed)
        return self

    def transform(self, data):
        corpus = tokenize(as_dataset(data).transactions, self.bins_)
        if self.pooling == "vlad":
            return pool_vlad(corpus, self.vectors_, self.codebook_)
        return pool_mean(corpus, self.vectors_)

    # JSON persistence; floats are written with repr so the round-trip is exact
    def to_json(self):
        doc = {
            "kind": "w2v",
            "params": self.params(),
            "categories": list(self.bins_.categories),
            "boundaries": {c: b.tolist() for c, b in self.bins_.boundaries.items()},
            "skipped": list(self.bins_.skipped),
            "vocabulary": self.bins_.vocabulary,
            "vectors": self.vectors_.tolist(),
        }
        if self.pooling == "vlad":
            doc["centroids"] = self.codebook_.centroids.tolist()
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        p = doc["params"]
        self = cls(p["n_bins"], p["embed_dim"], p["window"], p["negatives"], p["epochs"], p["learning_rate"],
                   p["pooling"], p["n_centroids"], p["seed"])
        self.bins_ = BinDictionary(doc["categories"], {c: np.array(b) for c, b in doc["boundaries"].items()},
                                   doc["skipped"])
        self.vectors_ = np.array(doc["vectors"], dtype=np.float64)
        if self.pooling == "vlad":
            self.codebook_ = VladCodebook(np.array(doc["centroids"], dtype=np.float64))
        return self


METHODS = {"raw": RawMethod, "msda": MsdaMethod, "sociodemo": SociodemoMethod, "w2v": W2vMethod}


def make_method(name, **params):
    try:
        cls = METHODS[name]
    except KeyError:
        raise ValueError(f"unknown embedding method {name!r}; expected one of {sorted(METHODS)}") from None
    return cls(**params)


def fit_transform(method, data):
    return method.fit(data).transform(data)
