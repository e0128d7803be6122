"""Tests for partially-symmetric tensors, contraction and spectral norms."""

import itertools

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tprec.errors import ArgumentError, NumericError, ResourceError, ShapeError
from tprec.tensor import (
    NormCertificate,
    SymTensor,
    build_from_factors,
    multilinear_form,
    spectral_norm,
    spectral_norm_bruteforce,
    symmetrize_first_p,
    tp_contract,
)


def contract_oracle(arr, z, p):
    """Nested-loop reference for contracting the first p modes with z."""
    n = z.size
    m = arr.shape[-1]
    out = np.zeros(m)
    for idx in itertools.product(range(n), repeat=p):
        out += arr[idx] * np.prod([z[i] for i in idx])
    return out


class TestContract:
    def test_identity_matrix_p1(self):
        G = SymTensor.from_array(np.eye(2), sym_prefix=1)
        npt.assert_array_equal(tp_contract(G, [3.0, -1.0], 1), [3.0, -1.0])

    def test_rank_one_p2_inner_product_square(self):
        G = build_from_factors([[1.0, 1.0]], [[1.0, 0.0]], 2)
        npt.assert_allclose(tp_contract(G, [1.0, 2.0], 2), [9.0, 0.0], rtol=1e-14)

    def test_matrix_case_is_matvec(self):
        rng = np.random.default_rng(0)
        A = rng.standard_normal((4, 3))
        z = rng.standard_normal(4)
        G = SymTensor.from_array(A, sym_prefix=1)
        npt.assert_allclose(tp_contract(G, z, 1), A.T @ z, rtol=1e-13)

    def test_against_nested_loops(self):
        rng = np.random.default_rng(7)
        for p, n, m in [(2, 3, 2), (3, 4, 3), (4, 2, 5)]:
            arr = rng.standard_normal((n,) * p + (m,))
            z = rng.standard_normal(n)
            G = SymTensor.from_array(arr, sym_prefix=0)
            npt.assert_allclose(
                tp_contract(G, z, p), contract_oracle(arr, z, p), rtol=1e-12
            )

    def test_rank_one_tensor_gives_inner_product_power(self):
        rng = np.random.default_rng(3)
        w = rng.standard_normal(5)
        a = rng.standard_normal(2)
        z = rng.standard_normal(5)
        p = 3
        G = build_from_factors([w], [a], p)
        npt.assert_allclose(tp_contract(G, z, p), (w @ z) ** p * a, rtol=1e-12)

    def test_shape_error_names_offending_mode(self):
        G = SymTensor.from_array(np.zeros((3, 3, 2)), sym_prefix=2)
        with pytest.raises(ShapeError, match="mode 1"):
            tp_contract(G, np.zeros(4), 2)
        with pytest.raises(ShapeError):
            tp_contract(G, np.zeros(3), 3)

    @settings(max_examples=40, deadline=None)
    @given(
        c=st.floats(-4.0, 4.0, allow_nan=False),
        seed=st.integers(0, 1000),
        p=st.integers(1, 3),
    )
    def test_degree_p_homogeneity(self, c, seed, p):
        rng = np.random.default_rng(seed)
        n, m = 3, 2
        arr = rng.standard_normal((n,) * p + (m,))
        z = rng.standard_normal(n)
        G = SymTensor.from_array(arr)
        npt.assert_allclose(
            tp_contract(G, c * z, p), c**p * tp_contract(G, z, p),
            rtol=1e-10, atol=1e-12,
        )

    def test_output_bounded_by_norm_times_radius_power(self):
        rng = np.random.default_rng(11)
        p, n, m = 2, 3, 3
        arr = rng.standard_normal((n,) * p + (m,))
        G = symmetrize_first_p(arr, p)
        cert = spectral_norm(G, restarts=8, seed=0)
        for _ in range(50):
            z = rng.standard_normal(n)
            r = np.linalg.norm(z)
            out = tp_contract(G, z, p)
            assert np.linalg.norm(out) <= cert.value * r**p * (1 + 1e-6) + 1e-9


class TestSymmetry:
    def test_symmetrize_matrix_matches_half_sum(self):
        rng = np.random.default_rng(1)
        A = rng.standard_normal((4, 4))
        S = symmetrize_first_p(A, 2)
        npt.assert_array_equal(S.array, (A + A.T) / 2)

    def test_symmetric_matrix_is_fixed_point(self):
        rng = np.random.default_rng(2)
        A = rng.standard_normal((5, 5))
        A = (A + A.T) / 2
        S = symmetrize_first_p(A, 2)
        npt.assert_array_equal(S.array, A)

    def test_full_symmetrization_exhaustive_p3(self):
        rng = np.random.default_rng(4)
        arr = rng.standard_normal((2, 2, 2, 3))
        S = symmetrize_first_p(arr, 3, full_permutations=True).array
        for perm in itertools.permutations(range(3)):
            npt.assert_array_equal(S, np.transpose(S, perm + (3,)))
        # values agree with the straightforward average
        ref = np.zeros_like(arr)
        for perm in itertools.permutations(range(3)):
            ref += np.transpose(arr, perm + (3,))
        ref /= 6.0
        npt.assert_allclose(S, ref, rtol=1e-13)

    def test_cyclic_symmetrization_p3(self):
        rng = np.random.default_rng(5)
        arr = rng.standard_normal((3, 3, 3))
        S = symmetrize_first_p(arr, 3).array
        npt.assert_array_equal(S, np.transpose(S, (1, 2, 0)))
        npt.assert_array_equal(S, np.transpose(S, (2, 0, 1)))
        ref = (
            arr + np.transpose(arr, (1, 2, 0)) + np.transpose(arr, (2, 0, 1))
        ) / 3.0
        npt.assert_allclose(S, ref, rtol=1e-13)

    def test_idempotent_exactly(self):
        rng = np.random.default_rng(6)
        arr = rng.standard_normal((3, 3, 3, 2))
        S1 = symmetrize_first_p(arr, 3)
        S2 = symmetrize_first_p(S1.array, 3)
        npt.assert_array_equal(S1.array, S2.array)
        F1 = symmetrize_first_p(arr, 3, full_permutations=True)
        F2 = symmetrize_first_p(F1.array, 3, full_permutations=True)
        npt.assert_array_equal(F1.array, F2.array)

    def test_constructor_rejects_asymmetric_data(self):
        arr = np.arange(8.0).reshape(2, 2, 2)
        with pytest.raises(ShapeError):
            SymTensor.from_array(arr, sym_prefix=2)

    def test_constructor_rejects_cyclic_only_as_full(self):
        rng = np.random.default_rng(8)
        S = symmetrize_first_p(rng.standard_normal((3, 3, 3)), 3)
        assert S.sym_mode == "cyclic"
        with pytest.raises(ShapeError):
            SymTensor(S.dims, S.data, sym_prefix=3, sym_mode="full")

    def test_build_from_factors_is_fully_symmetric(self):
        rng = np.random.default_rng(9)
        ws = [rng.standard_normal(3) for _ in range(3)]
        outs = [rng.standard_normal(2) for _ in range(3)]
        G = build_from_factors(ws, outs, 3)
        assert G.sym_prefix == 3 and G.sym_mode == "full"
        arr = G.array
        for perm in itertools.permutations(range(3)):
            npt.assert_array_equal(arr, np.transpose(arr, perm + (3,)))

    def test_build_from_factors_values(self):
        w = np.array([1.0, 2.0])
        a = np.array([1.0])
        G = build_from_factors([w], [a], 2).array[..., 0]
        npt.assert_array_equal(G, np.outer(w, w))

    def test_build_single_nonzero_entry(self):
        G = build_from_factors([[1.0, 0.0]], [[1.0]], 2).array
        expected = np.zeros((2, 2, 1))
        expected[0, 0, 0] = 1.0
        npt.assert_array_equal(G, expected)

    def test_scalar_sum_oracle_rank2(self):
        rng = np.random.default_rng(3)
        ws = [rng.standard_normal(2) for _ in range(2)]
        outs = [rng.standard_normal(1) for _ in range(2)]
        G = build_from_factors(ws, outs, 3)
        for _ in range(10):
            z = rng.standard_normal(2)
            want = sum(a[0] * (w @ z) ** 3 for w, a in zip(ws, outs))
            npt.assert_allclose(tp_contract(G, z, 3)[0], want, rtol=1e-12)

    def test_empty_factor_list_rejected(self):
        with pytest.raises(ArgumentError):
            build_from_factors([], [], 2)


class TestRoundTrip:
    def test_json_dict_round_trip(self):
        rng = np.random.default_rng(10)
        G = symmetrize_first_p(rng.standard_normal((3, 3, 2)), 2)
        d = G.to_dict()
        assert d["dims"] == [3, 3, 2] and d["sym_prefix"] == 2
        assert "sym_mode" not in d
        H = SymTensor.from_dict(d)
        npt.assert_array_equal(G.data, H.data)
        assert H.dims == G.dims and H.sym_mode == "full"

    def test_cyclic_mode_survives_round_trip(self):
        rng = np.random.default_rng(12)
        G = symmetrize_first_p(rng.standard_normal((2, 2, 2, 2)), 3)
        H = SymTensor.from_dict(G.to_dict())
        assert H.sym_mode == "cyclic"
        npt.assert_array_equal(G.data, H.data)


class TestSpectralNorm:
    def test_identity_matrix(self):
        G = SymTensor.from_array(np.eye(2), sym_prefix=2)
        cert = spectral_norm(G, restarts=5, seed=1)
        assert isinstance(cert, NormCertificate)
        assert cert.converged
        npt.assert_allclose(cert.value, 1.0, rtol=1e-8)
        npt.assert_allclose(spectral_norm_bruteforce(G), 1.0, rtol=1e-12)

    def test_diagonal_matrix(self):
        G = SymTensor.from_array(np.diag([3.0, 1.0]), sym_prefix=2)
        cert = spectral_norm(G, restarts=5, seed=1)
        npt.assert_allclose(cert.value, 3.0, rtol=1e-8)
        for u in cert.witnesses:
            npt.assert_allclose(np.abs(u), [1.0, 0.0], atol=1e-4)

    def test_matrix_case_matches_svd(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            A = rng.standard_normal((6, 4))
            G = SymTensor.from_array(A)
            cert = spectral_norm(G, restarts=10, seed=2)
            npt.assert_allclose(
                cert.value, np.linalg.svd(A, compute_uv=False)[0], rtol=1e-7
            )

    def test_rank_one_cubic(self):
        u = np.array([2.0, 1.0, 2.0]) / 3.0
        G = build_from_factors([2.0 ** (1.0 / 3.0) * u], [[2.0 ** (1.0 / 3.0)]], 2)
        # G = 2 * u (x) u (x) u with |u| = 1 -> norm exactly 2
        cert = spectral_norm(G, restarts=10, seed=3)
        npt.assert_allclose(cert.value, 2.0, rtol=1e-7)
        bf = spectral_norm_bruteforce(G, grid_resolution=0.01)
        assert abs(bf - 2.0) < 1e-3

    def test_certificate_value_is_attained_form(self):
        rng = np.random.default_rng(14)
        G = symmetrize_first_p(rng.standard_normal((3, 3, 3)), 2)
        cert = spectral_norm(G, restarts=6, seed=4)
        form = multilinear_form(G, cert.witnesses)
        npt.assert_allclose(abs(form), cert.value, rtol=1e-12)
        for u in cert.witnesses:
            npt.assert_allclose(np.linalg.norm(u), 1.0, rtol=1e-12)

    def test_scaling_homogeneity(self):
        rng = np.random.default_rng(15)
        G = symmetrize_first_p(rng.standard_normal((3, 3, 3)), 2)
        c1 = spectral_norm(G, restarts=6, seed=5).value
        c2 = spectral_norm(G.scaled(2.5), restarts=6, seed=5).value
        npt.assert_allclose(c2, 2.5 * c1, rtol=1e-6)

    def test_power_iteration_vs_bruteforce_small_cubics(self):
        rng = np.random.default_rng(16)
        for _ in range(3):
            G = symmetrize_first_p(rng.standard_normal((3, 3, 3)), 2)
            est = spectral_norm(G, restarts=20, seed=6).value
            bf = spectral_norm_bruteforce(G, grid_resolution=0.02)
            assert est >= bf - 1e-8  # grid value is attainable, est is max-seeking
            assert abs(est - bf) / est < 0.01

    def test_nonfinite_rejected(self):
        A = np.full((2, 2), np.nan)
        G = SymTensor((2, 2), A.reshape(-1), sym_prefix=0)
        with pytest.raises(NumericError):
            spectral_norm(G)
        with pytest.raises(NumericError):
            spectral_norm_bruteforce(G)

    def test_bruteforce_resource_guard(self):
        G = SymTensor.from_array(np.zeros((60, 60, 60)), sym_prefix=0)
        with pytest.raises(ResourceError):
            spectral_norm_bruteforce(G)

    def test_deterministic_for_fixed_seed(self):
        rng = np.random.default_rng(17)
        G = symmetrize_first_p(rng.standard_normal((4, 4, 4)), 2)
        a = spectral_norm(G, restarts=5, seed=9)
        b = spectral_norm(G, restarts=5, seed=9)
        assert a.value == b.value
        for u, v in zip(a.witnesses, b.witnesses):
            npt.assert_array_equal(u, v)


class TestMultilinearForm:
    def test_matrix_bilinear(self):
        rng = np.random.default_rng(18)
        A = rng.standard_normal((3, 4))
        u, v = rng.standard_normal(3), rng.standard_normal(4)
        G = SymTensor.from_array(A)
        npt.assert_allclose(multilinear_form(G, [u, v]), u @ A @ v, rtol=1e-12)

    def test_wrong_vector_count(self):
        G = SymTensor.from_array(np.zeros((2, 2)))
        with pytest.raises(ShapeError):
            multilinear_form(G, [np.ones(2)])
