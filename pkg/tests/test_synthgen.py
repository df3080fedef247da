import json

import numpy as np
import pytest

from oracles import adjusted_rand_index, plugin_mutual_information
from txembed.segment import kmeans
from txembed.synthgen import (
    ArchetypeSpec,
    GenConfig,
    car_preset,
    generate,
    load_archetypes,
    random_archetypes,
    save_archetypes,
    travel_preset,
)
from txembed.table import SOCIODEMO_ATTRIBUTES


def test_always_active_archetype_has_no_absent_cells():
    arch = [ArchetypeSpec(np.ones(6), 4.0, 0.5)]
    table, _, _ = generate(GenConfig(200, 6, 1, seed=1), arch)
    assert table.present.all()
    assert np.all(table.values != 0.0)


def test_zero_correlation_sociodemo_carries_no_archetype_information():
    table, socio, labels = generate(GenConfig(10000, 20, 5, seed=4, sociodemo_correlation=0.0))
    for name in SOCIODEMO_ATTRIBUTES:
        assert plugin_mutual_information(socio.attributes[name], labels) < 0.01, name


def test_positive_correlation_makes_sociodemo_informative():
    _, socio, labels = generate(GenConfig(10000, 20, 5, seed=4, sociodemo_correlation=0.8))
    assert plugin_mutual_information(socio.attributes["age_range"], labels) > 0.1


def test_disjoint_archetypes_are_recovered_by_kmeans():
    a = np.r_[np.ones(5), np.zeros(5)]
    arch = [ArchetypeSpec(a, 3.0, 0.3), ArchetypeSpec(1 - a, 3.0, 0.3)]
    table, _, labels = generate(GenConfig(2000, 10, 2, seed=2), arch)
    clus = kmeans(table.values, 2, seed=0)
    assert adjusted_rand_index(clus.assignments, labels) > 0.99


def test_same_seed_bit_identical():
    cfg = GenConfig(500, 15, 3, seed=21)
    t1, s1, l1 = generate(cfg)
    t2, s2, l2 = generate(cfg)
    assert t1.equals(t2) and np.array_equal(l1, l2)
    for name in SOCIODEMO_ATTRIBUTES:
        assert np.array_equal(s1.attributes[name], s2.attributes[name])


def test_activity_frequency_within_binomial_band():
    arch = random_archetypes(3, 12, seed=5)
    table, _, labels = generate(GenConfig(30000, 12, 3, seed=8), arch)
    for a, spec in enumerate(arch):
        rows = table.present[labels == a]
        n = rows.shape[0]
        assert n >= 10000 / 3 * 0.9
        freq = rows.mean(axis=0)
        sigma = np.sqrt(spec.activity_prob * (1 - spec.activity_prob) / n)
        assert np.all(np.abs(freq - spec.activity_prob) <= 3 * sigma + 1e-12)


def test_signs_follow_income_categories():
    arch = random_archetypes(2, 8, seed=1, n_income=2)
    table, _, _ = generate(GenConfig(400, 8, 2, seed=0), arch)
    v, p = table.values, table.present
    assert np.all(v[:, :2][p[:, :2]] > 0)
    assert np.all(v[:, 2:][p[:, 2:]] < 0)


def test_city_and_province_derive_from_postcode():
    _, socio, _ = generate(GenConfig(300, 5, 2, seed=0))
    for pc, city, prov in zip(socio.attributes["postcode"], socio.attributes["city"], socio.attributes["province"]):
        assert pc.startswith(city) and city.startswith(prov)


class TestTravelPreset:
    def test_travelers_are_hotel_active(self):
        arch, cats = travel_preset(70, seed=0)
        assert cats[:3] == ["SALARY", "HOTELS", "TRAVEL"] and len(cats) == 70
        travelers = [a for a in arch if a.name.startswith("traveler")]
        others = [a for a in arch if a.name.startswith("homebody")]
        assert travelers and others
        for a in travelers:
            assert a.activity_prob[2] >= 0.8 and a.activity_prob[1] >= 0.75
        for a in others:
            assert a.activity_prob[2] <= 0.05

    def test_hotel_rate_higher_among_travel_active_clients(self):
        arch, cats = travel_preset(70, seed=0)
        table, _, _ = generate(GenConfig(5000, 70, len(arch), seed=1), arch, cats)
        travel = table.present[:, 2]
        hotels = table.present[:, 1]
        assert hotels[travel].mean() > 3 * hotels[~travel].mean()


class TestCarPreset:
    def test_columns_and_prevalence(self):
        arch, cats = car_preset(30, seed=1)
        assert cats[:6] == ["SALARY", "CAR_INSURANCE_BANK", "CAR_INSURANCE_EXTERNAL", "HIGHWAY_TOLL", "CAR_REPAIR",
                            "PETROL"]
        table, _, labels = generate(GenConfig(40000, 30, len(arch), seed=2), arch, cats)
        owners = np.isin(labels, [i for i, a in enumerate(arch) if a.name.startswith("owner")])
        assert abs(owners.mean() - 0.45) < 0.02
        # bank policy prevalence near 0.45 * 0.052 = 0.0234, the 7000-in-3E5 rate
        assert abs(table.present[:, 1].mean() - 0.0234) < 0.003
        assert not table.present[~owners, 1:5].any()

    def test_nested_relevance_sets_grow(self):
        arch, cats = car_preset(30, seed=1)
        table, _, _ = generate(GenConfig(5000, 30, len(arch), seed=3), arch, cats)
        narrow = table.present[:, 1]
        mid = table.present[:, 1:3].any(axis=1)
        wide = table.present[:, 1:6].any(axis=1)
        assert narrow.sum() < mid.sum() < wide.sum()

    def test_too_few_categories(self):
        with pytest.raises(ValueError):
            car_preset(8)


def test_archetype_file_round_trip(tmp_path):
    arch = random_archetypes(3, 6, seed=2)
    save_archetypes(arch, tmp_path / "a.json", [f"X{i}" for i in range(6)])
    back, cats = load_archetypes(tmp_path / "a.json")
    assert cats == [f"X{i}" for i in range(6)]
    for a, b in zip(arch, back):
        assert a.to_dict() == b.to_dict()
    json.loads((tmp_path / "a.json").read_text())


@pytest.mark.parametrize("kwargs", [
    dict(n_clients=0), dict(n_clients=5, sociodemo_correlation=1.5), dict(n_clients=5, client_scale_std=-1.0),
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        GenConfig(**kwargs)


def test_archetype_validation():
    with pytest.raises(ValueError):
        ArchetypeSpec(np.array([1.2]), 0.0, 1.0)
    with pytest.raises(ValueError):
        ArchetypeSpec(np.array([0.5]), 0.0, -1.0)
    with pytest.raises(ValueError):
        generate(GenConfig(5, 3, 1), [])
