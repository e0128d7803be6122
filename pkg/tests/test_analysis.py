"""Tests for process simulation and memory diagnostics."""

import json
import math

import numpy as np
import numpy.testing as npt
import pytest

from tprec.analysis import (
    MemoryConfig,
    MemoryReport,
    NoiseSpec,
    ProcessSpec,
    VERDICT_INCONCLUSIVE,
    VERDICT_LONG,
    VERDICT_SHORT,
    autocovariance,
    divergence_rate_batch,
    hurst_rs,
    lemma1_check,
    memory_diagnostic,
    sample_subgaussian_M,
    simulate_tprnp,
)
from tprec.data import ArfimaSpec, gen_arfima
from tprec.errors import ArgumentError, DomainError
from tprec.tensor import SymTensor, spectral_norm


def scalar_spec(coeff, sigma=1.0):
    M = SymTensor((1, 1), np.array([coeff]), sym_prefix=1)
    noise = NoiseSpec("gaussian", active_dims=1, sigma=sigma)
    return ProcessSpec(M=M, p=1, noise=noise, n=1)


class TestNoiseSpec:
    def test_validation(self):
        with pytest.raises(ArgumentError, match="distribution"):
            NoiseSpec("poisson", active_dims=1)
        with pytest.raises(DomainError):
            NoiseSpec("gaussian", active_dims=1, sigma=0.0)
        with pytest.raises(DomainError):
            NoiseSpec("uniform", active_dims=1, a=1.0, b=1.0)
        with pytest.raises(DomainError):
            NoiseSpec("gaussian", active_dims=1, kappa=1.5)
        with pytest.raises(ArgumentError):
            NoiseSpec("gaussian", active_dims=0)

    def test_sample_supports_first_coords_only(self):
        spec = NoiseSpec("gaussian", active_dims=2, sigma=1.0)
        out = spec.sample(100, 5, np.random.default_rng(0))
        assert out.shape == (100, 5)
        assert np.any(out[:, :2] != 0)
        npt.assert_array_equal(out[:, 2:], 0.0)

    def test_none_distribution_is_zero(self):
        spec = NoiseSpec("none", active_dims=1)
        npt.assert_array_equal(spec.sample(10, 3, np.random.default_rng(0)), 0.0)

    def test_uniform_range(self):
        spec = NoiseSpec("uniform", active_dims=1, a=-2.0, b=-1.0)
        out = spec.sample(1000, 1, np.random.default_rng(1))
        assert np.all((out >= -2.0) & (out < -1.0))


class TestProcessSpec:
    def test_dims_must_match(self):
        M = SymTensor((2, 2, 2), np.zeros(8), sym_prefix=2)
        noise = NoiseSpec("gaussian", active_dims=1)
        with pytest.raises(ArgumentError):
            ProcessSpec(M=M, p=2, noise=noise, n=3)
        with pytest.raises(ArgumentError):
            ProcessSpec(M=M, p=1, noise=noise, n=2)
        with pytest.raises(ArgumentError):
            ProcessSpec(M=M, p=2, noise=NoiseSpec("gaussian", active_dims=5), n=2)

    def test_sym_prefix_must_cover_contracted_modes(self):
        arr = np.arange(8.0).reshape(2, 2, 2)
        M = SymTensor((2, 2, 2), arr.ravel(), sym_prefix=1)
        with pytest.raises(ArgumentError, match="symmetric"):
            ProcessSpec(M=M, p=2, noise=NoiseSpec("gaussian", active_dims=1), n=2)


class TestSimulate:
    def test_scalar_ar1_matches_direct_recursion(self):
        spec = scalar_spec(0.5)
        result = simulate_tprnp(spec, T=50, burn_in=0, seed=3)
        assert not result.diverged
        eps = np.random.default_rng(3).standard_normal((50, 1))
        s = 0.0
        for t in range(50):
            s = 0.5 * s + eps[t, 0]
            npt.assert_allclose(result.values[t, 0], s, rtol=1e-12)

    def test_burn_in_discards_prefix(self):
        spec = scalar_spec(0.5)
        with_burn = simulate_tprnp(spec, T=10, burn_in=5, seed=4)
        without = simulate_tprnp(spec, T=15, burn_in=0, seed=4)
        npt.assert_array_equal(with_burn.values, without.values[5:])

    def test_ar1_sample_mean_near_zero(self):
        # Var(mean) for a=0.5 is about 4/T; allow three standard errors.
        T = 300_000
        result = simulate_tprnp(scalar_spec(0.5), T=T, burn_in=1000, seed=5)
        assert abs(result.values.mean()) < 3 * 2.0 / math.sqrt(T)

    def test_zero_noise_is_zero_fixed_point(self):
        M = sample_subgaussian_M(3, 2, sigma=1.0, seed=6)
        spec = ProcessSpec(M=M, p=2, noise=NoiseSpec("none", active_dims=1), n=3)
        result = simulate_tprnp(spec, T=100, burn_in=0, seed=0)
        assert not result.diverged
        npt.assert_array_equal(result.values, 0.0)

    def test_order_one_quadratic_tensors_usually_diverge(self):
        diverged = 0
        for seed in range(10):
            M = sample_subgaussian_M(2, 2, sigma=1.0, seed=seed)
            spec = ProcessSpec(
                M=M, p=2, noise=NoiseSpec("gaussian", active_dims=2), n=2
            )
            result = simulate_tprnp(spec, T=100, burn_in=0, seed=100 + seed)
            if result.diverged:
                assert result.divergence_step < 100
                diverged += 1
        assert diverged >= 8

    def test_divergent_path_truncated_below_threshold(self):
        M = sample_subgaussian_M(2, 2, sigma=1.0, seed=0)
        spec = ProcessSpec(M=M, p=2, noise=NoiseSpec("gaussian", active_dims=2), n=2)
        result = simulate_tprnp(spec, T=100, burn_in=0, seed=100)
        assert result.diverged
        assert result.values.shape[0] == result.divergence_step
        assert np.all(np.abs(result.values) < 1e12)

    def test_vector_ar1_lag_one_cross_covariance(self):
        # For s_t = A s_{t-1} + e_t, E[s_t s_{t-1}^T] = A Gamma(0).
        M = SymTensor((2, 2), np.array([0.5, 0.2, 0.1, 0.3]), sym_prefix=1)
        A = M.array.T
        noise = NoiseSpec("gaussian", active_dims=2, sigma=1.0)
        spec = ProcessSpec(M=M, p=1, noise=noise, n=2)
        result = simulate_tprnp(spec, T=300_000, burn_in=1000, seed=8)
        s = result.values - result.values.mean(axis=0)
        gamma0 = s.T @ s / s.shape[0]
        gamma1 = s[1:].T @ s[:-1] / (s.shape[0] - 1)
        predicted = A @ gamma0
        rel = np.linalg.norm(gamma1 - predicted) / np.linalg.norm(predicted)
        assert rel < 0.05


class TestSampleSubgaussianM:
    def test_cyclic_shift_invariance_exact(self):
        M = sample_subgaussian_M(3, 3, sigma=1.0, seed=1)
        arr = M.array
        rotated = np.transpose(arr, (2, 0, 1, 3))  # cycle the first 3 modes
        npt.assert_array_equal(arr, rotated)

    def test_entry_variances_after_averaging(self):
        # At p=2 an off-diagonal entry is the mean of 2 independent draws
        # (variance sigma^2/2); a diagonal-pattern entry stays untouched.
        sigma = 0.7
        off, diag = [], []
        for seed in range(10_000):
            M = sample_subgaussian_M(2, 2, sigma, seed=seed)
            arr = M.array
            off.append(arr[0, 1, 0])
            diag.append(arr[0, 0, 1])
        var_off = np.var(off)
        var_diag = np.var(diag)
        assert abs(var_off - sigma**2 / 2) < 0.05 * sigma**2 / 2
        assert abs(var_diag - sigma**2) < 0.05 * sigma**2
        assert abs(np.mean(off)) < 3 * sigma / math.sqrt(10_000)

    def test_sigma_validation(self):
        with pytest.raises(DomainError):
            sample_subgaussian_M(2, 2, sigma=0.0)


class TestAutocovariance:
    def test_lag_zero_is_biased_variance(self):
        x = np.random.default_rng(0).standard_normal(500)
        gamma = autocovariance(x, 10)
        npt.assert_allclose(gamma[0], x.var(), rtol=1e-12)

    def test_white_noise(self):
        x = np.random.default_rng(1).standard_normal(1_000_000)
        gamma = autocovariance(x, 10)
        assert abs(gamma[0] - 1.0) < 0.02
        stderr = 1.0 / math.sqrt(x.size)
        assert np.all(np.abs(gamma[1:]) < 3 * stderr)

    def test_ar1_closed_form(self):
        T = 300_000
        result = simulate_tprnp(scalar_spec(0.5), T=T, burn_in=1000, seed=2)
        gamma = autocovariance(result.values[:, 0], 10)
        k = np.arange(11)
        theory = (4.0 / 3.0) * 0.5**k
        # per-lag error on the variance scale, plus whole-vector agreement
        assert np.all(np.abs(gamma - theory) < 0.05 * theory[0])
        assert np.linalg.norm(gamma - theory) / np.linalg.norm(theory) < 0.05
        npt.assert_allclose(gamma[:3], theory[:3], rtol=0.05)

    def test_constant_series_all_zero(self):
        gamma = autocovariance(np.full(1000, 7.5), 5)
        npt.assert_array_equal(gamma, 0.0)

    def test_length_precondition(self):
        with pytest.raises(ArgumentError, match="length"):
            autocovariance(np.arange(100.0), 10)
        autocovariance(np.arange(101.0), 10)  # boundary: 101 > 100


class TestHurst:
    def test_known_exponents_recovered(self):
        # theory: H = d + 0.5 for fractional noise
        for d, expected in [(0.0, 0.5), (0.2, 0.7), (0.4, 0.9)]:
            ds = gen_arfima(ArfimaSpec(d=d, T=100_000, seed=1))
            h = hurst_rs(ds.values[:, 0])
            assert abs(h - expected) < 0.1, (d, h)

    def test_short_series_returns_nan(self):
        assert math.isnan(hurst_rs(np.arange(50.0)))

    def test_constant_series_returns_nan(self):
        assert math.isnan(hurst_rs(np.ones(10_000)))


class TestMemoryReport:
    def test_invariant_validation(self):
        good = dict(autocov=np.array([1.0, 0.5]), partial_sums=np.array([1.0, 1.5]),
                    hurst=0.5, verdict=VERDICT_SHORT)
        MemoryReport(**good)
        with pytest.raises(DomainError):
            MemoryReport(**{**good, "autocov": np.array([-1.0, 0.5])})
        with pytest.raises(DomainError):
            MemoryReport(**{**good, "partial_sums": np.array([2.0, 1.5])})
        with pytest.raises(DomainError):
            MemoryReport(**{**good, "hurst": 1.2})
        with pytest.raises(ArgumentError):
            MemoryReport(**{**good, "verdict": "maybe"})
        MemoryReport(**{**good, "hurst": float("nan")})  # NaN allowed

    def test_json_round_trip(self):
        report = MemoryReport(
            autocov=np.array([2.0, 1.0, 0.5]),
            partial_sums=np.array([2.0, 3.0, 3.5]),
            hurst=0.55, verdict=VERDICT_SHORT, divergence_rate=0.25,
        )
        loaded = json.loads(json.dumps(report.to_dict()))
        npt.assert_array_equal(loaded["autocov"], report.autocov)
        assert loaded["verdict"] == VERDICT_SHORT
        assert loaded["divergence_rate"] == 0.25


class TestMemoryDiagnostic:
    def test_ar1_short_memory(self):
        result = simulate_tprnp(scalar_spec(0.5), T=200_000, burn_in=1000, seed=7)
        report = memory_diagnostic(result.values[:, 0], MemoryConfig(max_lag=500))
        assert report.verdict == VERDICT_SHORT
        assert 0.4 <= report.hurst <= 0.6

    def test_arfima_long_memory(self):
        ds = gen_arfima(ArfimaSpec(d=0.4, T=100_000, seed=0))
        report = memory_diagnostic(ds.values[:, 0], MemoryConfig(max_lag=500))
        assert report.verdict == VERDICT_LONG
        assert 0.8 <= report.hurst <= 1.0

    def test_white_noise_hurst_range(self):
        x = np.random.default_rng(3).standard_normal(100_000)
        report = memory_diagnostic(x)
        assert 0.4 <= report.hurst <= 0.6

    def test_partial_sums_cumulative_abs(self):
        x = np.random.default_rng(4).standard_normal(10_000)
        report = memory_diagnostic(x, MemoryConfig(max_lag=20))
        npt.assert_allclose(report.partial_sums,
                            np.cumsum(np.abs(report.autocov)), rtol=1e-15)

    def test_divergent_input_rejected(self):
        x = np.ones(1000)
        x[500] = 2e12
        with pytest.raises(DomainError, match="divergence_rate"):
            memory_diagnostic(x)
        x[500] = float("nan")
        with pytest.raises(DomainError):
            memory_diagnostic(x)


class TestDivergenceTrend:
    def test_rate_nondecreasing_in_p(self):
        noise = NoiseSpec("gaussian", active_dims=1, sigma=1.0)
        rates = [
            divergence_rate_batch(2, p, sigma=0.3, noise=noise, n_seeds=50, T=100)
            for p in (1, 2, 3)
        ]
        assert rates[0] <= rates[1] <= rates[2]
        assert rates[2] > rates[0]


class TestLemma1Check:
    def test_scalar_ar1_agrees(self):
        report = lemma1_check(scalar_spec(0.5))
        npt.assert_allclose(report.norm_value, 0.5, rtol=1e-8)
        assert report.applicable
        assert report.verdict == VERDICT_SHORT
        assert report.agreement is True

    def test_large_norm_inapplicable(self):
        report = lemma1_check(scalar_spec(1.5))
        npt.assert_allclose(report.norm_value, 1.5, rtol=1e-8)
        assert not report.applicable
        assert report.verdict is None
        assert "inapplicable" in report.note

    @pytest.mark.parametrize("seed", [0, 1])
    def test_rescaled_quadratic_tensors_short(self, seed):
        M = sample_subgaussian_M(3, 2, sigma=0.5, seed=seed)
        nrm = spectral_norm(M, seed=seed).value
        spec = ProcessSpec(
            M=M.scaled(0.4 / nrm), p=2,
            noise=NoiseSpec("gaussian", active_dims=1, sigma=1.0), n=3,
        )
        report = lemma1_check(spec, seed=seed)
        assert report.applicable
        assert report.verdict == VERDICT_SHORT
        assert report.agreement is True

    def test_report_serializes(self):
        report = lemma1_check(scalar_spec(1.5))
        dumped = json.loads(json.dumps(report.to_dict()))
        assert dumped["applicable"] is False
