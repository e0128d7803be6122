"""Tests for data generation, CSV ingestion, and normalization."""

import numpy as np
import numpy.testing as npt
import pytest
from scipy.special import gammaln

from tprec.data import (
    ArfimaSpec,
    GenzSpec,
    GENZ_FAMILIES,
    SeriesDataset,
    arfima_ma_coefficients,
    dataset_from_spec,
    gen_arfima,
    gen_genz,
    genz_evaluate,
    load_csv,
    split_and_normalize,
    write_csv,
)
from tprec.errors import ArgumentError, DomainError, ParseError


class TestArfimaCoefficients:
    def test_first_values_d04(self):
        psi = arfima_ma_coefficients(0.4, 4)
        npt.assert_allclose(psi, [1.0, 0.4, 0.28, 0.224], rtol=1e-15)

    def test_d_zero_is_white_noise(self):
        psi = arfima_ma_coefficients(0.0, 10)
        assert psi[0] == 1.0
        npt.assert_array_equal(psi[1:], 0.0)

    @pytest.mark.parametrize("d", [0.1, 0.25, 0.4])
    def test_gamma_closed_form(self, d):
        # psi_j = Gamma(j + d) / (Gamma(j + 1) Gamma(d))
        psi = arfima_ma_coefficients(d, 51)
        j = np.arange(1, 51)
        closed = np.exp(gammaln(j + d) - gammaln(j + 1) - gammaln(d))
        npt.assert_allclose(psi[1:], closed, rtol=1e-10)

    def test_negative_d_alternating_start(self):
        psi = arfima_ma_coefficients(-0.3, 3)
        npt.assert_allclose(psi, [1.0, -0.3, -0.3 * 0.7 / 2], rtol=1e-15)


class TestGenArfima:
    def test_matches_explicit_sum(self):
        # Independent reimplementation of the MA sum with plain loops.
        spec = ArfimaSpec(d=0.3, T=40, sigma=0.7, truncation=12, seed=5)
        ds = gen_arfima(spec)
        rng = np.random.default_rng(5)
        psi = arfima_ma_coefficients(0.3, 13)
        eps = 0.7 * rng.standard_normal(40 + 12)
        for t in range(40):
            x_t = sum(psi[j] * eps[t + 12 - j] for j in range(13))
            npt.assert_allclose(ds.values[t, 0], x_t, rtol=1e-12)

    def test_d_zero_reduces_to_innovations(self):
        spec = ArfimaSpec(d=0.0, T=100, sigma=2.0, truncation=50, seed=1)
        ds = gen_arfima(spec)
        rng = np.random.default_rng(1)
        eps = 2.0 * rng.standard_normal(150)
        npt.assert_allclose(ds.values[:, 0], eps[50:], rtol=1e-15)

    def test_deterministic_per_seed(self):
        spec = ArfimaSpec(d=0.4, T=500, seed=9)
        a = gen_arfima(spec).values
        b = gen_arfima(ArfimaSpec(d=0.4, T=500, seed=9)).values
        npt.assert_array_equal(a, b)
        c = gen_arfima(ArfimaSpec(d=0.4, T=500, seed=10)).values
        assert not np.array_equal(a, c)

    def test_lag_one_autocorrelation(self):
        # For ARFIMA(0,d,0), rho_1 = d / (1 - d); the truncated series
        # matches the closed form computed from its own MA weights.
        spec = ArfimaSpec(d=0.4, T=200_000, truncation=1000, seed=3)
        ds = gen_arfima(spec)
        x = ds.values[:, 0]
        x = x - x.mean()
        rho1 = float(x[1:] @ x[:-1] / (x @ x))
        psi = arfima_ma_coefficients(0.4, 1001)
        rho1_theory = float(psi[1:] @ psi[:-1] / (psi @ psi))
        assert abs(rho1 - rho1_theory) < 0.02
        # truncation at 1000 terms biases rho_1 a few percent below d/(1-d)
        assert abs(rho1_theory - 0.4 / 0.6) < 0.06

    def test_invalid_specs(self):
        with pytest.raises(DomainError):
            ArfimaSpec(d=0.5, T=100)
        with pytest.raises(DomainError):
            ArfimaSpec(d=-0.6, T=100)
        with pytest.raises(DomainError):
            ArfimaSpec(d=0.1, T=100, sigma=0.0)
        with pytest.raises(ArgumentError):
            ArfimaSpec(d=0.1, T=1)

    def test_provenance_round_trip(self):
        spec = ArfimaSpec(d=0.25, T=64, sigma=1.5, truncation=20, seed=7)
        ds = gen_arfima(spec)
        again = ArfimaSpec.from_dict(ds.provenance)
        npt.assert_array_equal(gen_arfima(again).values, ds.values)


class TestGenz:
    def test_oscillatory_known_points(self):
        vals = genz_evaluate("oscillatory", np.array([0.0]),
                             np.array([2 * np.pi]),
                             np.array([0.0, 0.25, 0.5]))
        npt.assert_allclose(vals, [1.0, 0.0, -1.0], atol=1e-12)

    def test_product_peak_at_center(self):
        vals = genz_evaluate("product-peak", np.array([0.5]), np.array([1.0]),
                             np.array([0.5]))
        npt.assert_allclose(vals, [1.0], rtol=1e-15)

    def test_corner_peak_value(self):
        vals = genz_evaluate("corner-peak", np.array([0.0]), np.array([3.0]),
                             np.array([1.0]))
        npt.assert_allclose(vals, [1.0 / 16.0], rtol=1e-15)

    def test_gaussian_peak_and_symmetry(self):
        x = np.array([0.3, 0.5, 0.7])
        vals = genz_evaluate("gaussian", np.array([0.5]), np.array([2.0]), x)
        assert vals[1] == 1.0
        npt.assert_allclose(vals[0], vals[2], rtol=1e-15)
        npt.assert_allclose(vals[0], np.exp(-4.0 * 0.04), rtol=1e-15)

    def test_discontinuous_split(self):
        x = np.array([0.2, 0.6])
        vals = genz_evaluate("discontinuous", np.array([0.5]), np.array([1.0]), x)
        npt.assert_allclose(vals, [np.exp(0.2), 0.0], rtol=1e-15)

    def test_all_families_match_grid_length(self):
        for fam in GENZ_FAMILIES:
            spec = GenzSpec(family=fam, w=[0.4], c=[1.5], T=33)
            ds = gen_genz(spec)
            assert ds.values.shape == (33, 1)

    def test_default_grid_is_unit_interval(self):
        spec = GenzSpec(family="continuous", w=[0.5], c=[1.0], T=11)
        npt.assert_allclose(spec.grid, np.linspace(0, 1, 11), rtol=1e-15)

    def test_unknown_family_rejected(self):
        with pytest.raises(ArgumentError, match="family"):
            GenzSpec(family="wiggly", w=[0.1], c=[1.0], T=10)

    def test_non_increasing_grid_rejected(self):
        with pytest.raises(ArgumentError, match="increasing"):
            GenzSpec(family="gaussian", w=[0.5], c=[1.0], T=3,
                     grid=[0.0, 0.5, 0.5])

    def test_spec_round_trip(self):
        spec = GenzSpec(family="oscillatory", w=[0.3], c=[9.0], T=50)
        ds = gen_genz(spec)
        again = gen_genz(GenzSpec.from_dict(ds.provenance))
        npt.assert_array_equal(again.values, ds.values)


class TestCsv:
    def test_minimal_file(self, tmp_path):
        f = tmp_path / "series.csv"
        f.write_text("value\n1.0\n2.0\n3.0\n4.0\n5.0\n")
        ds = load_csv(str(f))
        npt.assert_array_equal(ds.values[:, 0], [1, 2, 3, 4, 5])
        assert ds.provenance["kind"] == "csv"

    def test_timestamp_column_skipped(self, tmp_path):
        f = tmp_path / "ts.csv"
        f.write_text(
            "timestamp,value\n2020-01-01,1.5\n2020-01-02,2.5\n"
            "2020-01-03,3.5\n2020-01-04,4.5\n2020-01-05,5.5\n"
        )
        ds = load_csv(str(f), value_cols="value", timestamp_col="timestamp")
        npt.assert_array_equal(ds.values[:, 0], [1.5, 2.5, 3.5, 4.5, 5.5])
        ds2 = load_csv(str(f), timestamp_col="timestamp")
        npt.assert_array_equal(ds2.values, ds.values)

    def test_bad_cell_names_line_and_column(self, tmp_path):
        f = tmp_path / "bad.csv"
        f.write_text("value\n1.0\n2.0\nbanana\n4.0\n5.0\n")
        with pytest.raises(ParseError, match=r":4: column 'value'.*'banana'"):
            load_csv(str(f))

    def test_missing_file(self):
        with pytest.raises(ParseError, match="no such file"):
            load_csv("/nonexistent/nowhere.csv")

    def test_missing_column(self, tmp_path):
        f = tmp_path / "cols.csv"
        f.write_text("a,b\n1,2\n3,4\n5,6\n7,8\n9,10\n")
        with pytest.raises(ParseError, match="available columns"):
            load_csv(str(f), value_cols="c")

    def test_round_trip_bit_identical(self, tmp_path):
        ds = gen_arfima(ArfimaSpec(d=0.4, T=64, seed=2))
        f = tmp_path / "rt.csv"
        write_csv(ds.values, str(f))
        again = load_csv(str(f))
        npt.assert_array_equal(again.values, ds.values)

    def test_multichannel_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        vals = rng.standard_normal((40, 3))
        f = tmp_path / "multi.csv"
        write_csv(vals, str(f), header=["x", "y", "z"])
        ds = load_csv(str(f))
        npt.assert_array_equal(ds.values, vals)
        ds_sel = load_csv(str(f), value_cols=["y"])
        npt.assert_array_equal(ds_sel.values[:, 0], vals[:, 1])


class TestSplitAndNormalize:
    def test_fraction_bounds_length_ten(self):
        ds = split_and_normalize(np.arange(10.0))
        assert ds.split_bounds == (6, 8)
        assert ds.train.shape[0] == 6
        assert ds.val.shape[0] == 2
        assert ds.test.shape[0] == 2

    def test_train_split_standardized(self):
        rng = np.random.default_rng(4)
        vals = 3.0 + 2.0 * rng.standard_normal((200, 2))
        ds = split_and_normalize(vals)
        train = ds.train
        npt.assert_allclose(train.mean(axis=0), 0.0, atol=1e-12)
        npt.assert_allclose(train.std(axis=0), 1.0, atol=1e-12)

    def test_denormalize_inverts(self):
        rng = np.random.default_rng(5)
        vals = 10.0 + 0.1 * rng.standard_normal((50, 1))
        ds = split_and_normalize(vals)
        npt.assert_allclose(ds.denormalize(ds.values), vals, atol=1e-12)

    def test_no_leakage_from_test_rows(self):
        rng = np.random.default_rng(6)
        vals = rng.standard_normal((100, 1))
        ds1 = split_and_normalize(vals)
        perturbed = vals.copy()
        perturbed[80:] += 1e6
        ds2 = split_and_normalize(perturbed)
        npt.assert_array_equal(ds1.norm_stats[0], ds2.norm_stats[0])
        npt.assert_array_equal(ds1.norm_stats[1], ds2.norm_stats[1])
        npt.assert_array_equal(ds1.train, ds2.train)

    def test_constant_channel_rejected(self):
        vals = np.ones((50, 1))
        with pytest.raises(DomainError, match="constant"):
            split_and_normalize(vals)

    def test_bad_fractions(self):
        vals = np.arange(20.0)
        with pytest.raises(ArgumentError):
            split_and_normalize(vals, fractions=(0.8, 0.3))
        with pytest.raises(ArgumentError):
            split_and_normalize(vals, fractions=(0.0, 0.5))

    def test_method_none_passthrough(self):
        vals = np.arange(10.0) + 5.0
        ds = split_and_normalize(vals, method="none")
        npt.assert_array_equal(ds.values[:, 0], vals)
        assert not ds.normalized
        with pytest.raises(ArgumentError, match="method"):
            split_and_normalize(vals, method="minmax")


class TestSeriesDataset:
    def test_invalid_bounds_rejected(self):
        vals = np.arange(10.0)[:, None]
        stats = (np.zeros(1), np.ones(1))
        with pytest.raises(ArgumentError):
            SeriesDataset(vals, (0, 8), stats)
        with pytest.raises(ArgumentError):
            SeriesDataset(vals, (6, 10), stats)
        with pytest.raises(ArgumentError):
            SeriesDataset(vals, (8, 6), stats)

    def test_nonpositive_std_rejected(self):
        vals = np.arange(10.0)[:, None]
        with pytest.raises(DomainError):
            SeriesDataset(vals, (6, 8), (np.zeros(1), np.zeros(1)))

    def test_values_read_only(self):
        ds = split_and_normalize(np.arange(10.0))
        with pytest.raises(ValueError):
            ds.values[0, 0] = 99.0

    def test_normalized_values_lazy(self):
        ds = gen_arfima(ArfimaSpec(d=0.2, T=50, seed=0))
        assert not ds.normalized
        normed = ds.normalized_values()
        npt.assert_allclose(normed[: ds.split_bounds[0]].mean(axis=0), 0.0,
                            atol=1e-12)
        npt.assert_allclose(ds.denormalize(normed), ds.values, atol=1e-10)

    def test_meta_dict_round_trips_through_json(self):
        import json

        ds = gen_arfima(ArfimaSpec(d=0.3, T=40, seed=4))
        meta = json.loads(json.dumps(ds.meta_dict()))
        assert meta["split_bounds"] == [24, 32]
        npt.assert_array_equal(np.array(meta["norm_mean"]), ds.norm_stats[0])


class TestDatasetFromSpec:
    def test_dispatch_arfima_and_genz(self):
        ds = dataset_from_spec({"kind": "arfima", "d": 0.1, "T": 30, "seed": 1})
        assert ds.length == 30
        ds2 = dataset_from_spec(
            {"kind": "genz", "family": "gaussian", "w": [0.5], "c": [2.0], "T": 25}
        )
        assert ds2.length == 25

    def test_dispatch_csv(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("value\n1\n2\n3\n4\n5\n")
        ds = dataset_from_spec({"kind": "csv", "path": str(f)})
        assert ds.length == 5

    def test_unknown_kind(self):
        with pytest.raises(ArgumentError, match="kind"):
            dataset_from_spec({"kind": "parquet"})
        with pytest.raises(ArgumentError):
            dataset_from_spec({"d": 0.1})
