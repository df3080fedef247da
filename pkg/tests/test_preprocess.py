import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from txembed.preprocess import (
    MODES,
    ConfigError,
    PreprocSpec,
    SociodemoEncoder,
    apply,
    apply_matrix,
    raw_embedding,
    sociodemo_embedding,
)
from txembed.table import SOCIODEMO_ATTRIBUTES, SociodemoTable, TransactionTable

FIG_ROW = np.array([[-10.15, np.nan, 1250.67]])


def _pairwise(X):
    return np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))


class TestModes:
    def test_binarize_figure_row(self):
        t = TransactionTable.from_array(FIG_ROW)
        np.testing.assert_array_equal(apply(t, "binarize"), [[1.0, 0.0, 1.0]])

    def test_l2_zero_row_stays_zero(self):
        out = apply_matrix(np.zeros((1, 4)), np.zeros((1, 4), bool), "l2")
        np.testing.assert_array_equal(out, 0.0)

    def test_log_of_e_minus_one(self):
        x = np.array([[math.e - 1, -(math.e - 1)]])
        out = apply_matrix(x, np.ones_like(x, bool), "log")
        np.testing.assert_allclose(out, [[1.0, -1.0]], rtol=0, atol=1e-15)

    def test_identity_keeps_row_with_absent_as_zero(self):
        t = TransactionTable.from_array(FIG_ROW)
        e = raw_embedding(t, "none")
        np.testing.assert_array_equal(e.values, [[-10.15, 0.0, 1250.67]])
        assert e.dim == 3 and e.source == "raw[none]"

    def test_l2_rows_have_unit_norm(self, rng):
        t = TransactionTable.from_array(rng.normal(size=(20, 3)) * 100)
        e = raw_embedding(t, "l2_normalize")
        np.testing.assert_allclose(np.linalg.norm(e.values, axis=1), 1.0, atol=1e-12)

    def test_max_and_rescale(self):
        x = np.array([[-4.0, 2.0, 1.0], [3.0, 3.0, 3.0]])
        pres = np.ones_like(x, bool)
        np.testing.assert_allclose(apply_matrix(x, pres, "max"), [[-1.0, 0.5, 0.25], [1.0, 1.0, 1.0]])
        np.testing.assert_allclose(apply_matrix(x, pres, "rescale"), [[-1.0, 1.0, 2 * 5 / 6 - 1], [0.0, 0.0, 0.0]])

    @pytest.mark.parametrize("token", ["binarize+l2", "binarize,l2", "l2 log"])
    def test_chaining_is_a_configuration_error(self, token):
        with pytest.raises(ConfigError):
            PreprocSpec.parse(token)

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            PreprocSpec.parse("zscore")

    def test_aliases(self):
        assert str(PreprocSpec.parse("max_normalize")) == "max"
        assert str(PreprocSpec.parse("rescale_neg1_1")) == "rescale"

    def test_empty_table_rejected(self):
        with pytest.raises(ValueError):
            apply(TransactionTable.from_array(np.zeros((0, 3))), "l2")


matrices = arrays(
    np.float64, st.tuples(st.integers(1, 6), st.integers(1, 5)),
    elements=st.one_of(st.just(0.0), st.floats(-1e6, 1e6, allow_nan=False)),
)


class TestProperties:
    @settings(max_examples=80, deadline=None)
    @given(matrices, st.sampled_from(MODES))
    def test_finite_output(self, x, mode):
        out = apply_matrix(x, x != 0, mode)
        assert np.all(np.isfinite(out))

    @settings(max_examples=80, deadline=None)
    @given(matrices, st.sampled_from(["binarize", "l2"]))
    def test_idempotent(self, x, mode):
        once = apply_matrix(x, x != 0, mode)
        twice = apply_matrix(once, once != 0, mode)
        np.testing.assert_allclose(twice, once, rtol=1e-12, atol=1e-15)

    @settings(max_examples=80, deadline=None)
    @given(matrices)
    def test_ranges(self, x):
        b = apply_matrix(x, x != 0, "binarize")
        assert set(np.unique(b)) <= {0.0, 1.0}
        r = apply_matrix(x, x != 0, "rescale")
        assert r.min() >= -1.0 and r.max() <= 1.0


def _socio(values_by_attr, n):
    attrs = {a: values_by_attr.get(a, ["v"] * n) for a in SOCIODEMO_ATTRIBUTES}
    return SociodemoTable([f"c{i}" for i in range(n)], attrs)


class TestSociodemo:
    def test_identical_attributes_identical_embeddings(self, small_world):
        s = small_world.sociodemo
        e = sociodemo_embedding(s, 8)
        key = [tuple(s.attributes[a][i] for a in SOCIODEMO_ATTRIBUTES) for i in range(len(s))]
        seen = {}
        for i, k in enumerate(key):
            if k in seen:
                np.testing.assert_array_equal(e.values[i], e.values[seen[k]])
                break
            seen[k] = i
        else:
            pytest.skip("no duplicate attribute tuple in fixture")

    def test_full_width_preserves_distances(self, small_world):
        s = small_world.sociodemo.take(np.arange(200))
        enc = SociodemoEncoder(1).fit(s)
        width = enc.one_hot(s).shape[1]
        e = sociodemo_embedding(s, width)
        np.testing.assert_allclose(_pairwise(e.values), _pairwise(enc.one_hot(s)), atol=1e-8)

    def test_three_value_attribute_is_equilateral(self):
        vals = ["a", "b", "c", "a", "b", "a"]
        e = sociodemo_embedding(_socio({"gender": vals}, len(vals)), 2)
        pts = {v: e.values[vals.index(v)] for v in "abc"}
        d = [np.linalg.norm(pts["a"] - pts["b"]), np.linalg.norm(pts["a"] - pts["c"]), np.linalg.norm(pts["b"] - pts["c"])]
        np.testing.assert_allclose(d, math.sqrt(2), rtol=1e-12)

    def test_unseen_value_names_attribute(self):
        tr = _socio({"postcode": ["p1", "p2"]}, 2)
        te = _socio({"postcode": ["p9"]}, 1)
        enc = SociodemoEncoder(1).fit(tr)
        with pytest.raises(ValueError, match="postcode"):
            enc.transform(te)

    def test_target_dim_too_large(self):
        with pytest.raises(ValueError):
            sociodemo_embedding(_socio({}, 3), 50)

    def test_sign_convention(self, small_world):
        enc = SociodemoEncoder(5).fit(small_world.sociodemo)
        comps = enc.components_
        lead = np.argmax(np.abs(comps), axis=1)
        assert np.all(comps[np.arange(5), lead] > 0)
