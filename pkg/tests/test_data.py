from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldp_numeric.data import (
    DataError,
    Dataset,
    LabelError,
    MissingColumnError,
    RaggedRowError,
    UnknownColumnError,
    ZeroRangeError,
    denormalize,
    load_csv,
    normalize,
    read_schema,
    synth_gaussian,
    synth_regression,
)
from ldp_numeric.mechanisms import RandomStream
from oracles import truncnorm_mean


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestNormalize:
    @given(
        st.floats(-1e6, 1e6),
        st.floats(1e-3, 1e6),
        st.floats(0, 1),
    )
    @settings(max_examples=300, deadline=None)
    def test_round_trip(self, lo, width, frac):
        hi = lo + width
        v = lo + frac * width
        z = float(normalize(v, lo, hi))
        assert -1 - 1e-12 <= z <= 1 + 1e-12
        assert float(denormalize(z, lo, hi)) == pytest.approx(v, abs=1e-12 * max(1.0, abs(lo), abs(hi)))

    def test_midpoint(self):
        assert float(normalize(5.0, 0.0, 10.0)) == 0.0
        assert float(normalize(0.0, 0.0, 10.0)) == -1.0
        assert float(normalize(10.0, 0.0, 10.0)) == 1.0


class TestDataset:
    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            Dataset(rows=np.array([[0.0, 1.5]]))

    def test_shape(self):
        ds = Dataset(rows=np.zeros((3, 2)))
        assert (ds.n, ds.d) == (3, 2)


class TestSynthGaussian:
    def test_in_range_and_shape(self):
        ds = synth_gaussian(5000, 4, 1 / 3, 0.25, RandomStream(0))
        assert ds.rows.shape == (5000, 4)
        assert np.all(np.abs(ds.rows) <= 1)

    def test_symmetric_mean(self):
        n = 200_000
        ds = synth_gaussian(n, 1, 0.0, 0.5, RandomStream(1))
        assert abs(ds.rows.mean()) < 4 * ds.rows.std() / math.sqrt(n)

    @pytest.mark.parametrize("mu", [0.0, 1 / 3, 2 / 3, 1.0])
    def test_matches_truncated_mean(self, mu):
        n = 200_000
        ds = synth_gaussian(n, 1, mu, 0.25, RandomStream(2))
        m = ds.rows.mean()
        assert abs(m - truncnorm_mean(mu, 0.25)) < 4 * ds.rows.std() / math.sqrt(n)

    def test_truncation_pulls_left(self):
        ds = synth_gaussian(50_000, 1, 1.0, 0.25, RandomStream(3))
        assert ds.rows.mean() < 1.0

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            synth_gaussian(0, 1, 0.0, 1.0, RandomStream(0))
        with pytest.raises(ValueError):
            synth_gaussian(1, 1, 0.0, 0.0, RandomStream(0))

    def test_deterministic(self):
        a = synth_gaussian(100, 3, 0.2, 0.3, RandomStream(7)).rows
        b = synth_gaussian(100, 3, 0.2, 0.3, RandomStream(7)).rows
        assert np.array_equal(a, b)


class TestSynthRegression:
    def test_noiseless_labels_are_affine(self):
        ds = synth_regression(500, 3, 11, 0.0, RandomStream(0))
        ex = ds.extras
        expected = ex["scale"] * (ds.rows @ ex["weights"] + ex["bias"]) + ex["offset"]
        assert np.allclose(ds.labels, expected, atol=1e-12)

    def test_least_squares_recovers_weights(self):
        ds = synth_regression(2000, 4, 5, 0.0, RandomStream(1))
        design = np.hstack([ds.rows, np.ones((ds.n, 1))])
        coef, *_ = np.linalg.lstsq(design, ds.labels, rcond=None)
        resid = ds.labels - design @ coef
        r2 = 1 - resid.var() / ds.labels.var()
        assert r2 > 0.99
        assert np.allclose(coef[:-1] / ds.extras["scale"], ds.extras["weights"], atol=1e-9)

    @given(st.integers(2, 300), st.integers(1, 6), st.floats(0, 3))
    @settings(max_examples=50, deadline=None)
    def test_labels_in_range(self, n, p, noise):
        ds = synth_regression(n, p, 0, noise, RandomStream(n))
        assert np.all(np.abs(ds.labels) <= 1) and np.all(np.abs(ds.rows) <= 1)

    def test_weights_fixed_by_weight_seed(self):
        a = synth_regression(50, 2, 9, 0.1, RandomStream(0)).extras["weights"]
        b = synth_regression(50, 2, 9, 0.1, RandomStream(1)).extras["weights"]
        assert np.array_equal(a, b)


class TestSchema:
    def test_parse(self, tmp_path):
        p = _write(tmp_path, "s.txt", "# columns\nage = numeric\ncity: categorical\ny = label  # target\n")
        assert read_schema(p) == {"age": "numeric", "city": "categorical", "y": "label"}

    def test_unknown_kind(self, tmp_path):
        with pytest.raises(DataError):
            read_schema(_write(tmp_path, "s.txt", "age = integer\n"))

    def test_two_labels(self, tmp_path):
        with pytest.raises(DataError):
            read_schema(_write(tmp_path, "s.txt", "a = label\nb = label\n"))


class TestLoadCsv:
    SCHEMA = {"age": "numeric", "color": "categorical", "y": "label"}

    def test_encoding(self, tmp_path):
        p = _write(tmp_path, "d.csv", "age,color,y\n0,red,1\n10,blue,2\n5,green,3\n5,red,5\n")
        ds = load_csv(p, self.SCHEMA)
        assert ds.rows[:, 0].tolist() == [-1.0, 1.0, 0.0, 0.0]
        # levels sorted: blue, green, red; red is the last level and is -1 everywhere
        assert [c.name for c in ds.columns] == ["age", "color=blue", "color=green"]
        assert ds.rows[:, 1:].tolist() == [[-1, -1], [1, -1], [-1, 1], [-1, -1]]
        assert ds.labels.tolist() == pytest.approx([-1.0, -0.5, 0.0, 1.0])
        assert ds.columns[0].original_min == 0.0 and ds.columns[0].original_max == 10.0

    def test_two_level_categorical_gives_one_column(self, tmp_path):
        p = _write(tmp_path, "d.csv", "c\na\nb\na\n")
        ds = load_csv(p, {"c": "categorical"})
        assert ds.d == 1
        assert ds.rows[:, 0].tolist() == [1, -1, 1]

    def test_k_minus_one_columns_at_most_one_plus(self, tmp_path):
        levels = [f"v{i}" for i in range(7)]
        rng = np.random.default_rng(0)
        vals = rng.choice(levels, 200)
        p = _write(tmp_path, "d.csv", "c\n" + "\n".join(vals) + "\n")
        ds = load_csv(p, {"c": "categorical"})
        assert ds.d == len(set(vals)) - 1
        assert np.all((ds.rows == 1).sum(axis=1) <= 1)
        assert np.all(np.abs(ds.rows) <= 1)

    def test_classification_labels(self, tmp_path):
        p = _write(tmp_path, "d.csv", "x,y\n1,no\n2,yes\n3,no\n")
        ds = load_csv(p, {"x": "numeric", "y": "label"}, loss="logistic")
        assert ds.labels.tolist() == [-1, 1, -1]

    def test_classification_needs_two_classes(self, tmp_path):
        p = _write(tmp_path, "d.csv", "x,y\n1,a\n2,b\n3,c\n")
        with pytest.raises(LabelError):
            load_csv(p, {"x": "numeric", "y": "label"}, loss="hinge")

    def test_ragged(self, tmp_path):
        p = _write(tmp_path, "d.csv", "a,b\n1,2\n3\n")
        with pytest.raises(RaggedRowError):
            load_csv(p, {"a": "numeric", "b": "numeric"})

    def test_unknown_column(self, tmp_path):
        p = _write(tmp_path, "d.csv", "a,b\n1,2\n3,4\n")
        with pytest.raises(UnknownColumnError):
            load_csv(p, {"a": "numeric"})

    def test_missing_column(self, tmp_path):
        p = _write(tmp_path, "d.csv", "a\n1\n3\n")
        with pytest.raises(MissingColumnError):
            load_csv(p, {"a": "numeric", "b": "numeric"})

    def test_zero_range(self, tmp_path):
        p = _write(tmp_path, "d.csv", "a,b\n1,2\n1,4\n")
        with pytest.raises(ZeroRangeError):
            load_csv(p, {"a": "numeric", "b": "numeric"})

    def test_errors_are_distinct(self):
        kinds = {RaggedRowError, UnknownColumnError, MissingColumnError, ZeroRangeError}
        assert len(kinds) == 4 and all(issubclass(k, DataError) for k in kinds)

    def test_empty_file(self, tmp_path):
        with pytest.raises(DataError):
            load_csv(_write(tmp_path, "d.csv", ""), {"a": "numeric"})

    def test_non_numeric_value(self, tmp_path):
        with pytest.raises(DataError):
            load_csv(_write(tmp_path, "d.csv", "a\n1\nx\n"), {"a": "numeric"})

    def test_round_trip_numeric(self, tmp_path):
        raw = [3.25, -7.5, 12.0, 0.125]
        p = _write(tmp_path, "d.csv", "a\n" + "\n".join(map(str, raw)) + "\n")
        ds = load_csv(p, {"a": "numeric"})
        meta = ds.columns[0]
        back = denormalize(ds.rows[:, 0], meta.original_min, meta.original_max)
        assert np.allclose(back, raw, rtol=0, atol=1e-12)
