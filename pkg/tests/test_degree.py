"""Tests for the signed power activation, degree controllers and the bound."""

import math

import mpmath
import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tprec.degree import (
    DEFAULT_BOUNDS,
    GRAD_EPS,
    P0,
    DegreeBoundInputs,
    DegreeParam,
    MlpParams,
    controller_step,
    degree_bound,
    init_mlp_params,
    phi,
    phi_grad,
)
from tprec.errors import ArgumentError, DomainError, NumericError, ShapeError


class TestPhi:
    def test_identity_at_p1(self):
        xs = np.array([-3.5, -1.0, 0.0, 0.25, 7.0])
        npt.assert_array_equal(phi(xs, 1.0), xs)

    def test_sign_extraction(self):
        assert phi(-3.0, 2.0) == -9.0
        assert phi(4.0, 0.5) == 2.0
        assert phi(0.0, 2.0) == 0.0

    def test_zero_convention_nonpositive_p(self):
        # documented convention: phi(0, p) = 0 even when p <= 0
        assert phi(0.0, 0.0) == 0.0
        assert phi(0.0, -1.0) == 0.0

    def test_nan_rejected(self):
        with pytest.raises(NumericError):
            phi(float("nan"), 1.0)
        with pytest.raises(NumericError):
            phi(1.0, float("inf"))

    @settings(max_examples=100, deadline=None)
    @given(
        s=st.floats(-50.0, 50.0, allow_nan=False),
        p=st.floats(0.1, 3.0, allow_nan=False),
    )
    def test_odd_exactly(self, s, p):
        assert phi(-s, p) == -phi(s, p)

    def test_strictly_increasing_in_s(self):
        rng = np.random.default_rng(0)
        for p in (0.3, 1.0, 2.5):
            s = np.sort(rng.uniform(-5, 5, size=200))
            v = phi(s, p)
            assert np.all(np.diff(v) > 0)

    def test_inverse_power(self):
        rng = np.random.default_rng(1)
        s = rng.uniform(0.1, 5.0, size=50) * rng.choice([-1.0, 1.0], size=50)
        for p in (0.5, 2.0, 3.0):
            npt.assert_allclose(phi(phi(s, p), 1.0 / p), s, rtol=1e-9)


class TestPhiGrad:
    def test_identity_derivative(self):
        d_s, d_p = phi_grad(2.0, 1.0)
        assert d_s == 1.0
        npt.assert_allclose(d_p, 2.0 * math.log(2.0), rtol=1e-14)

    def test_square_at_minus_three(self):
        d_s, d_p = phi_grad(-3.0, 2.0)
        npt.assert_allclose(d_s, 6.0, rtol=1e-14)
        npt.assert_allclose(d_p, -9.0 * math.log(3.0), rtol=1e-14)

    def test_clamp_keeps_gradients_finite_at_zero(self):
        d_s, d_p = phi_grad(0.0, 0.5)
        assert d_s == 0.5 * GRAD_EPS ** (-0.5)
        assert d_p == 0.0
        assert math.isfinite(d_s)

    def test_matches_finite_differences(self):
        # relative error < 1e-5 away from the clamp region
        rng = np.random.default_rng(2)
        h = 1e-6
        for _ in range(200):
            s = rng.uniform(0.01, 10.0) * rng.choice([-1.0, 1.0])
            p = rng.uniform(0.2, 3.0)
            d_s, d_p = phi_grad(s, p)
            fd_s = (phi(s + h, p) - phi(s - h, p)) / (2 * h)
            fd_p = (phi(s, p + h) - phi(s, p - h)) / (2 * h)
            npt.assert_allclose(d_s, fd_s, rtol=1e-5)
            npt.assert_allclose(d_p, fd_p, rtol=1e-5, atol=1e-8)

    def test_array_broadcast(self):
        s = np.array([1.0, -2.0, 3.0])
        d_s, d_p = phi_grad(s, 2.0)
        npt.assert_allclose(d_s, 2.0 * np.abs(s), rtol=1e-14)
        npt.assert_allclose(d_p, np.sign(s) * s**2 * np.log(np.abs(s)), rtol=1e-14)


class TestDegreeBound:
    def test_zero_excess_radicand(self):
        # C1/(n*sigma2) = C2/n = 0.5 -> radicand 1
        b = degree_bound(DegreeBoundInputs(n=2, sigma2=1.0, c1=1.0, c2=1.0))
        npt.assert_allclose(b, P0 - 1.0, rtol=1e-14)
        npt.assert_allclose(b, -0.594535, atol=5e-7)

    def test_ninety_nine_excess(self):
        # C1/(n*sigma2) - C2/n = 99 -> (p0/2)*11 - 1; C2 = 0 is the
        # degenerate no-second-constant case and must be accepted
        b = degree_bound(DegreeBoundInputs(n=8, sigma2=0.01, c1=7.92, c2=0.0))
        npt.assert_allclose(b, 1.2300580946, atol=1e-9)

    def test_independent_arithmetic_path(self):
        mpmath.mp.dps = 40
        cases = [(4, 0.5, 3.0, 1.0), (8, 0.01, 7.92, 0.5), (100, 2.0, 5.0, 9.0)]
        for n, s2, c1, c2 in cases:
            got = degree_bound(DegreeBoundInputs(n, s2, c1, c2))
            rad = 1 + mpmath.mpf(c1) / (n * mpmath.mpf(s2)) - mpmath.mpf(c2) / n
            want = mpmath.log(mpmath.mpf(3) / 2) / 2 * (1 + mpmath.sqrt(rad)) - 1
            assert abs(got - float(want)) < 1e-12

    def test_negative_radicand_domain_error(self):
        with pytest.raises(DomainError, match="C2"):
            degree_bound(DegreeBoundInputs(n=4, sigma2=100.0, c1=0.001, c2=500.0))

    def test_monotone_decreasing_in_sigma2(self):
        vals = [
            degree_bound(DegreeBoundInputs(n=8, sigma2=s2, c1=2.0, c2=0.5))
            for s2 in (0.01, 0.1, 1.0, 10.0)
        ]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_input_validation(self):
        with pytest.raises(DomainError):
            DegreeBoundInputs(n=4, sigma2=-1.0, c1=1.0, c2=1.0)
        with pytest.raises(ArgumentError):
            DegreeBoundInputs(n=0, sigma2=1.0, c1=1.0, c2=1.0)
        with pytest.raises(DomainError):
            DegreeBoundInputs(n=4, sigma2=1.0, c1=-1.0, c2=1.0)


class TestController:
    def test_fixed_mode_ignores_inputs(self):
        ctrl = DegreeParam(mode="fixed", value=1.0)
        assert controller_step(ctrl, 2.5, np.ones(4), np.ones(2)) == 1.0

    def test_scalar_mode_returns_stored_value(self):
        ctrl = DegreeParam(mode="scalar", value=1.7)
        assert controller_step(ctrl, 0.3, np.zeros(3), np.zeros(1)) == 1.7

    def test_zero_network_returns_clamped_output_bias(self):
        m, l = 3, 2
        for beta, expect in [(0.7, 0.7), (-4.0, 0.1), (9.0, 3.0)]:
            mlp = MlpParams(
                w1=np.zeros((3, 1 + m + l)), b1=np.zeros(3), w2=np.zeros(3), b2=beta
            )
            ctrl = DegreeParam(mode="subnet", value=1.0, subnet=mlp)
            rng = np.random.default_rng(0)
            got = controller_step(ctrl, 1.0, rng.standard_normal(m), rng.standard_normal(l))
            assert got == expect

    def test_output_always_within_bounds(self):
        rng = np.random.default_rng(13)
        m, l = 4, 2
        mlp = init_mlp_params(m, l, seed=13)
        # make the raw output actually exceed the clamp sometimes
        mlp.w2 = mlp.w2 * 50.0
        mlp.b2 = 1.0
        ctrl = DegreeParam(mode="subnet", value=1.0, subnet=mlp)
        lo, hi = ctrl.bounds
        for _ in range(1000):
            p = controller_step(
                ctrl,
                rng.uniform(lo, hi),
                rng.standard_normal(m) * 3,
                rng.standard_normal(l) * 3,
            )
            assert lo <= p <= hi

    def test_shape_mismatch(self):
        mlp = init_mlp_params(m=3, l=2, seed=0)
        ctrl = DegreeParam(mode="subnet", value=1.0, subnet=mlp)
        with pytest.raises(ShapeError):
            controller_step(ctrl, 1.0, np.zeros(5), np.zeros(2))

    def test_mode_subnet_requires_weights(self):
        with pytest.raises(ArgumentError):
            DegreeParam(mode="subnet", value=1.0)
        with pytest.raises(ArgumentError):
            DegreeParam(mode="fixed", value=1.0, subnet=init_mlp_params(2, 1, 0))

    def test_value_clamped_at_construction(self):
        assert DegreeParam(mode="scalar", value=99.0).value == DEFAULT_BOUNDS[1]
        assert DegreeParam(mode="scalar", value=-99.0).value == DEFAULT_BOUNDS[0]

    def test_round_trip(self):
        ctrl = DegreeParam(
            mode="subnet", value=1.2, bounds=(0.2, 2.5), subnet=init_mlp_params(3, 2, 7)
        )
        back = DegreeParam.from_dict(ctrl.to_dict())
        assert back.mode == ctrl.mode and back.bounds == ctrl.bounds
        npt.assert_array_equal(back.subnet.w1, ctrl.subnet.w1)
        npt.assert_array_equal(back.subnet.w2, ctrl.subnet.w2)
