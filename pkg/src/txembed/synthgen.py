"""Synthetic client x category datasets with planted behavioral archetypes.

Every client belongs to one archetype. An archetype fixes, per category, the
probability that the client transacts there at all and the lognormal law of
the yearly amount. A per-client spending scale shifts all log-amounts of a
client together, which gives amounts a cross-category correlation on top of
the archetype's activity pattern.

Sociodemographic attributes are independent of the archetype unless
``sociodemo_correlation`` is raised above 0.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .table import SociodemoTable, TransactionTable, default_categories

# province -> cities -> postcodes: 4 x 2 x 2 = 16 postcodes
N_PROVINCES, CITIES_PER_PROVINCE, POSTCODES_PER_CITY = 4, 2, 2
AGE_RANGES = ("18-25", "26-35", "36-45", "46-55", "56-65", "66+")
GENDERS = ("F", "M")
INCOME_RANGES = ("<12k", "12-20k", "20-30k", "30-45k", "45-60k", "60-90k", ">90k")


@dataclass
class ArchetypeSpec:
    activity_prob: np.ndarray
    log_amount_mean: np.ndarray
    log_amount_std: np.ndarray
    income_categories: frozenset = frozenset()
    weight: float = 1.0
    name: str = ""

    def __post_init__(self):
        self.activity_prob = np.asarray(self.activity_prob, dtype=np.float64)
        k = self.activity_prob.shape[0]
        self.log_amount_mean = np.broadcast_to(np.asarray(self.log_amount_mean, dtype=np.float64), (k,)).copy()
        self.log_amount_std = np.broadcast_to(np.asarray(self.log_amount_std, dtype=np.float64), (k,)).copy()
        self.income_categories = frozenset(int(c) for c in self.income_categories)
        if np.any((self.activity_prob < 0) | (self.activity_prob > 1)):
            raise ValueError("activity probabilities must lie in [0, 1]")
        if np.any(self.log_amount_std < 0):
            raise ValueError("lognormal stds must be non-negative")
        if any(not 0 <= c < k for c in self.income_categories):
            raise ValueError("income category index out of range")
        if self.weight <= 0:
            raise ValueError("archetype weight must be positive")

    @property
    def n_categories(self):
        return self.activity_prob.shape[0]

    def to_dict(self):
        return {
            "name": self.name,
            "weight": self.weight,
            "activity_prob": self.activity_prob.tolist(),
            "log_amount_mean": self.log_amount_mean.tolist(),
            "log_amount_std": self.log_amount_std.tolist(),
            "income_categories": sorted(self.income_categories),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["activity_prob"],
            d["log_amount_mean"],
            d["log_amount_std"],
            d.get("income_categories", ()),
            d.get("weight", 1.0),
            d.get("name", ""),
        )


@dataclass
class GenConfig:
    n_clients: int
    n_categories: int = 70
    n_archetypes: int = 5
    seed: int = 0
    sociodemo_correlation: float = 0.0
    client_scale_std: float = 0.1
    client_activity_std: float = 0.0

    def __post_init__(self):
        if self.n_clients < 1 or self.n_categories < 1 or self.n_archetypes < 1:
            raise ValueError("client, category and archetype counts must be positive")
        if not 0.0 <= self.sociodemo_correlation <= 1.0:
            raise ValueError("sociodemo_correlation must lie in [0, 1]")
        if self.client_scale_std < 0 or self.client_activity_std < 0:
            raise ValueError("client_scale_std and client_activity_std must be non-negative")


def random_archetypes(n_archetypes, n_categories, seed, n_income=2, signature_frac=0.35,
                      signature_prob=(0.35, 0.7), background_prob=(0.1, 0.3), amount_std=(0.4, 0.6),
                      shared_frac=0.0):
    """Archetypes whose activity patterns overlap heavily.

    Each archetype favors a random subset of signature categories, but every
    category keeps a sizeable background activity rate, so a single
    client's presence pattern is a noisy view of its archetype. A
    ``shared_frac`` share of the non-income categories is idiosyncratic:
    every archetype uses the same activity rate and amount law there, so
    those columns carry no archetype signal at all.
    """
    rng = np.random.default_rng(seed)
    income = frozenset(range(min(n_income, n_categories)))
    shared = rng.random(n_categories) < shared_frac
    shared[sorted(income)] = False
    shared_prob = rng.uniform(background_prob[0], signature_prob[1], n_categories)
    shared_mean = rng.uniform(3.0, 7.0, n_categories)
    out = []
    for a in range(n_archetypes):
        signature = rng.random(n_categories) < signature_frac
        prob = np.where(signature, rng.uniform(*signature_prob, n_categories), rng.uniform(*background_prob, n_categories))
        for c in income:
            prob[c] = rng.uniform(0.85, 0.99)
        mean = rng.uniform(3.0, 7.0, n_categories)
        std = rng.uniform(*amount_std, n_categories)
        prob[shared] = shared_prob[shared]
        mean[shared] = shared_mean[shared]
        out.append(ArchetypeSpec(prob, mean, std, income, 1.0, f"A{a + 1}"))
    return out


def _sociodemo_vocab():
    provinces = [f"P{i + 1}" for i in range(N_PROVINCES)]
    cities = [f"{p}C{j + 1}" for p in provinces for j in range(CITIES_PER_PROVINCE)]
    postcodes = [f"{c}Z{z + 1}" for c in cities for z in range(POSTCODES_PER_CITY)]
    return {
        "age_range": AGE_RANGES,
        "gender": GENDERS,
        "income_range": INCOME_RANGES,
        "postcode": tuple(postcodes),
        "city": tuple(cities),
        "province": tuple(provinces),
    }


def _sociodemo(labels, n_archetypes, rho, rng, client_ids):
    vocab = _sociodemo_vocab()
    n = len(labels)
    cols = {}
    for name in ("age_range", "gender", "income_range", "postcode"):
        size = len(vocab[name])
        uniform = rng.integers(0, size, n)
        preferred = rng.integers(0, size, n_archetypes)[labels]
        use_pref = rng.random(n) < rho
        cols[name] = np.where(use_pref, preferred, uniform)
    # city and province follow deterministically from the postcode
    pc = cols["postcode"]
    attrs = {
        "age_range": np.array(vocab["age_range"], dtype=object)[cols["age_range"]],
        "gender": np.array(vocab["gender"], dtype=object)[cols["gender"]],
        "income_range": np.array(vocab["income_range"], dtype=object)[cols["income_range"]],
        "postcode": np.array(vocab["postcode"], dtype=object)[pc],
        "city": np.array(vocab["city"], dtype=object)[pc // POSTCODES_PER_CITY],
        "province": np.array(vocab["province"], dtype=object)[pc // (POSTCODES_PER_CITY * CITIES_PER_PROVINCE)],
    }
    return SociodemoTable(client_ids, attrs, vocab)


def generate(config: GenConfig, archetypes=None, categories=None):
    """Draw (transactions, sociodemographics, archetype labels). Pure function of its inputs."""
    if archetypes is None:
        archetypes = random_archetypes(config.n_archetypes, config.n_categories, config.seed)
    archetypes = list(archetypes)
    if not archetypes:
        raise ValueError("archetype list must be non-empty")
    k = config.n_categories
    if any(a.n_categories != k for a in archetypes):
        raise ValueError(f"every archetype must cover {k} categories")
    n = config.n_clients
    rng = np.random.default_rng(config.seed)

    weights = np.array([a.weight for a in archetypes], dtype=np.float64)
    labels = rng.choice(len(archetypes), size=n, p=weights / weights.sum())

    prob = np.stack([a.activity_prob for a in archetypes])[labels]
    mu = np.stack([a.log_amount_mean for a in archetypes])[labels]
    sd = np.stack([a.log_amount_std for a in archetypes])[labels]
    sign = -np.ones((len(archetypes), k))
    for i, a in enumerate(archetypes):
        sign[i, sorted(a.income_categories)] = 1.0
    sign = sign[labels]

    if config.client_activity_std > 0:
        # heavier and lighter users: one logit shift per client on every activity rate
        shift = rng.normal(0.0, config.client_activity_std, size=(n, 1))
        with np.errstate(divide="ignore"):
            logit = np.log(prob) - np.log1p(-prob)
        prob = 1.0 / (1.0 + np.exp(-(logit + shift)))
    present = rng.random((n, k)) < prob
    scale = rng.normal(0.0, config.client_scale_std, size=(n, 1))
    amounts = np.exp(mu + scale + sd * rng.standard_normal((n, k)))
    values = np.round(sign * amounts, 2)
    # a rounded amount never collapses to 0.0 so presence stays meaningful
    values = np.where(values == 0.0, sign * 0.01, values)

    ids = [f"client{i + 1}" for i in range(n)]
    cats = list(categories) if categories is not None else default_categories(k)
    table = TransactionTable(ids, cats, np.where(present, values, 0.0), present)
    socio = _sociodemo(labels, len(archetypes), config.sociodemo_correlation, rng, ids)
    return table, socio, labels.astype(np.int64)


# ---------------------------------------------------------------------------
# presets

TRAVEL = "TRAVEL"
HOTELS = "HOTELS"


def travel_preset(n_categories=70, seed=0):
    """Archetypes for the typical-traveler scenario.

    Category 0 is salary income, category 1 is HOTELS and category 2 is
    TRAVEL. Travel-active archetypes are also hotel-active.
    """
    if n_categories < 8:
        raise ValueError("travel preset needs at least 8 categories")
    rng = np.random.default_rng(seed)
    base = random_archetypes(6, n_categories, rng.integers(1 << 31))
    out = []
    travel_like = (0, 1, 2)
    for a, arch in enumerate(base):
        prob = arch.activity_prob.copy()
        if a in travel_like:
            prob[1] = rng.uniform(0.75, 0.95)
            prob[2] = rng.uniform(0.8, 0.98)
        else:
            prob[1] = rng.uniform(0.0, 0.1)
            prob[2] = rng.uniform(0.0, 0.05)
        prob[0] = rng.uniform(0.85, 0.99)
        name = ("traveler" if a in travel_like else "homebody") + f"{a + 1}"
        out.append(ArchetypeSpec(prob, arch.log_amount_mean, arch.log_amount_std, {0}, 1.0, name))
    cats = ["SALARY", HOTELS, TRAVEL] + [f"CAT{i + 4}" for i in range(n_categories - 3)]
    return out, cats


CAR_INSURANCE_BANK = "CAR_INSURANCE_BANK"
CAR_INSURANCE_EXTERNAL = "CAR_INSURANCE_EXTERNAL"
CAR_EXPENSES = ("HIGHWAY_TOLL", "CAR_REPAIR", "PETROL")


def car_preset(n_categories=30, seed=0, owner_share=0.45, bank_rate=0.052, external_rate=0.06):
    """Archetypes for the car-insurance targeting scenario.

    Columns are SALARY, the bank's own car insurance, one external
    insurer's car policy, three car-use expenses, then generic categories.
    Car-owner archetypes (``owner_share`` of the population) pay car-use
    expenses often and hold the bank's policy with probability
    ``bank_rate`` or the external one with ``external_rate``; the remaining
    owners are insured somewhere the data cannot see. Non-owners show
    none of the car columns apart from rare petrol purchases.
    """
    fixed = 3 + len(CAR_EXPENSES)
    if n_categories < fixed + 4:
        raise ValueError(f"car preset needs at least {fixed + 4} categories")
    rng = np.random.default_rng(seed)
    base = random_archetypes(6, n_categories, rng.integers(1 << 31))
    owners = (0, 1, 2)
    out = []
    for a, arch in enumerate(base):
        prob = arch.activity_prob.copy()
        mean = arch.log_amount_mean.copy()
        prob[0] = rng.uniform(0.85, 0.99)
        if a in owners:
            prob[1], prob[2] = bank_rate, external_rate
            prob[3:fixed] = rng.uniform(0.55, 0.9, len(CAR_EXPENSES))
            mean[1:3] = 6.0
        else:
            prob[1:3] = 0.0
            prob[3:fixed] = [0.0, 0.0, 0.03]
        weight = owner_share / len(owners) if a in owners else (1.0 - owner_share) / (len(base) - len(owners))
        name = ("owner" if a in owners else "nonowner") + f"{a + 1}"
        out.append(ArchetypeSpec(prob, mean, arch.log_amount_std, {0}, weight, name))
    cats = ["SALARY", CAR_INSURANCE_BANK, CAR_INSURANCE_EXTERNAL, *CAR_EXPENSES]
    cats += [f"CAT{i + 1}" for i in range(fixed, n_categories)]
    return out, cats


PRESETS = {"travel": travel_preset, "car": car_preset}


def save_archetypes(archetypes, path, categories=None):
    doc = {"archetypes": [a.to_dict() for a in archetypes]}
    if categories is not None:
        doc["categories"] = list(categories)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_archetypes(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return [ArchetypeSpec.from_dict(d) for d in doc["archetypes"]], doc.get("categories")
