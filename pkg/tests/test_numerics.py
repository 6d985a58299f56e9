import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from onebit_irs.errors import ConfigError, SingularMatrixError
from onebit_irs.numerics import (
    CholeskyFactor, RandomSource, derive_seed, gauss_ratio, hermitian_inverse, hermitian_solve,
    sign_quantize, steering_vector, upa_response,
)

from conftest import random_hpd
from oracles import mills_asymptotic, mills_ratio, mills_ratio_quad

# frozen from a 50-digit mpmath evaluation
MILLS_AT_MINUS_40 = 40.0249688472


class TestSteeringVector:
    @pytest.mark.parametrize("size, freq, expected", [
        (2, 0.0, [1, 1]),
        (2, 1.0, [1, -1]),
        (4, 0.5, [1, -1j, -1, 1j]),
    ])
    def test_examples(self, size, freq, expected):
        np.testing.assert_allclose(steering_vector(size, freq), expected, atol=1e-15)

    def test_zero_size(self):
        with pytest.raises(ConfigError):
            steering_vector(0, 0.3)

    @given(st.integers(1, 64), st.floats(-10, 10))
    def test_unit_modulus(self, size, freq):
        np.testing.assert_allclose(np.abs(steering_vector(size, freq)), 1.0, rtol=1e-12)


class TestUpaResponse:
    @pytest.mark.parametrize("nx, ny, u, v, expected", [
        (1, 1, 0.3, -0.7, [1]),
        (2, 1, 1.0, 0.2, [1, -1]),
        (2, 2, 0.5, 0.5, [1, -1j, -1j, -1]),
    ])
    def test_examples(self, nx, ny, u, v, expected):
        np.testing.assert_allclose(upa_response(nx, ny, u, v), expected, atol=1e-15)

    def test_is_kronecker(self):
        np.testing.assert_allclose(upa_response(3, 4, 0.2, -0.4),
                                   np.kron(steering_vector(3, 0.2), steering_vector(4, -0.4)))


class TestGaussRatio:
    def test_origin(self):
        assert gauss_ratio(0.0) == pytest.approx(0.7978845608, abs=1e-10)

    def test_large_positive_underflows(self):
        assert gauss_ratio(40.0) < 1e-300

    def test_large_negative(self):
        assert gauss_ratio(-40.0) == pytest.approx(MILLS_AT_MINUS_40, abs=1e-6)

    def test_frozen_value_matches_oracle(self):
        assert mills_ratio(-40.0) == pytest.approx(MILLS_AT_MINUS_40, abs=1e-9)

    @pytest.mark.parametrize("x", np.linspace(-30.0, 8.0, 39))
    def test_quadrature_oracle(self, x):
        assert gauss_ratio(x) == pytest.approx(mills_ratio_quad(x), abs=1e-8)

    @pytest.mark.parametrize("x", [-50.0, -200.0, -1e3, -1e5, -1e8])
    def test_asymptotic_tail(self, x):
        assert gauss_ratio(x) == pytest.approx(mills_asymptotic(x), rel=1e-6)

    def test_decreasing_on_grid(self):
        x = np.linspace(-50.0, 50.0, 2001)
        g = gauss_ratio(x)
        d = np.diff(g)
        assert np.all(d <= 0)
        pos = g[1:] > 0
        assert np.all(d[pos] < 0)

    def test_finite_and_nonnegative(self):
        g = gauss_ratio(np.array([-1e8, -1e4, -1.0, 0.0, 1.0, 1e4, 1e8]))
        assert np.all(np.isfinite(g)) and np.all(g >= 0)

    def test_strictly_positive_where_representable(self):
        assert np.all(gauss_ratio(np.linspace(-1e8, 37.0, 101)) > 0)

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            gauss_ratio(np.nan)

    def test_shape_preserved(self):
        assert gauss_ratio(np.zeros((2, 3))).shape == (2, 3)
        assert isinstance(gauss_ratio(1.0), float)


class TestSignQuantize:
    @pytest.mark.parametrize("z, expected", [
        (0.3 - 0.2j, 1 - 1j),
        (0.0, -1 - 1j),
        (-5 + 0.001j, -1 + 1j),
    ])
    def test_examples(self, z, expected):
        assert sign_quantize(z) == expected

    @given(st.lists(st.complex_numbers(allow_nan=False, allow_infinity=False, max_magnitude=1e6),
                    min_size=1, max_size=20))
    def test_idempotent_and_in_alphabet(self, zs):
        r = sign_quantize(np.array(zs))
        np.testing.assert_array_equal(sign_quantize(r), r)
        assert set(np.unique(r)).issubset({1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j})


class TestHermitianInverse:
    def test_identity(self):
        np.testing.assert_allclose(hermitian_inverse(np.eye(4)), np.eye(4), atol=1e-15)

    def test_diagonal(self):
        np.testing.assert_allclose(hermitian_inverse(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]))

    @pytest.mark.parametrize("n", [1, 3, 8, 20])
    def test_dense_oracle(self, rng, n):
        a = random_hpd(rng, n)
        inv = hermitian_inverse(a)
        ref = np.linalg.inv(a)
        assert np.linalg.norm(inv - ref) / np.linalg.norm(ref) < 1e-12
        assert np.linalg.norm(a @ inv - np.eye(n)) / np.sqrt(n) < 1e-10

    def test_result_hermitian(self, rng):
        inv = hermitian_inverse(random_hpd(rng, 6))
        np.testing.assert_array_equal(inv, inv.conj().T)

    def test_symmetrizes_input(self, rng):
        a = random_hpd(rng, 5)
        skew = 1e-9 * (rng.standard_normal((5, 5)))
        np.testing.assert_allclose(hermitian_inverse(a + skew - skew.T),
                                   hermitian_inverse(a), rtol=1e-6)

    @given(st.integers(0, 10_000), st.integers(1, 10))
    @settings(max_examples=30, deadline=None)
    def test_involution(self, seed, n):
        a = random_hpd(np.random.default_rng(seed), n, cond=100.0)
        back = hermitian_inverse(hermitian_inverse(a))
        assert np.linalg.norm(back - a) / np.linalg.norm(a) < 1e-8

    def test_indefinite_reports_pivot(self):
        a = np.diag([1.0, 2.0, -1.0, 3.0])
        with pytest.raises(SingularMatrixError) as info:
            hermitian_inverse(a)
        assert info.value.pivot == 3

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            hermitian_inverse(np.ones((2, 3)))


class TestCholeskyFactor:
    def test_solve_and_diagonal(self, rng):
        a = random_hpd(rng, 7)
        f = CholeskyFactor(a)
        b = rng.standard_normal((7, 2)) + 1j * rng.standard_normal((7, 2))
        np.testing.assert_allclose(f.solve(b), np.linalg.solve(a, b), rtol=1e-12)
        np.testing.assert_allclose(f.inverse_diagonal(), np.diag(np.linalg.inv(a)).real,
                                   rtol=1e-12)

    def test_half_solve_gives_quadratic_form(self, rng):
        a = random_hpd(rng, 6)
        b = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        w = CholeskyFactor(a).half_solve(b)
        expected = np.vdot(b, np.linalg.solve(a, b)).real
        assert np.vdot(w, w).real == pytest.approx(expected, rel=1e-12)

    def test_real_input(self, rng):
        a = random_hpd(rng, 4).real + 4 * np.eye(4)
        np.testing.assert_allclose(hermitian_solve(a, np.ones(4)), np.linalg.solve(a, np.ones(4)))


class TestRandomSource:
    def test_same_seed_same_stream(self):
        a, b = RandomSource(42), RandomSource(42)
        for draw in ("uniform", "normal"):
            np.testing.assert_array_equal(getattr(a, draw)(size=5), getattr(b, draw)(size=5))
        np.testing.assert_array_equal(a.complex_normal(5), b.complex_normal(5))
        np.testing.assert_array_equal(a.qpsk((3, 2)), b.qpsk((3, 2)))

    def test_different_seeds_differ(self):
        assert not np.array_equal(RandomSource(1).normal(5), RandomSource(2).normal(5))

    def test_complex_normal_variance(self):
        z = RandomSource(3).complex_normal(200_000, var=2.0)
        assert np.mean(np.abs(z) ** 2) == pytest.approx(2.0, rel=0.02)
        assert np.var(z.real) == pytest.approx(1.0, rel=0.02)

    def test_qpsk_unit_modulus(self):
        np.testing.assert_allclose(np.abs(RandomSource(4).qpsk(100)), 1.0)

    def test_choice_distinct(self):
        idx = RandomSource(5).choice(10, 10)
        assert sorted(idx.tolist()) == list(range(10))


class TestDeriveSeed:
    def test_deterministic(self):
        assert derive_seed(7, 1, 2) == derive_seed(7, 1, 2)

    @pytest.mark.parametrize("keys", [(1, 2), (2, 1), (1,), (1, 2, 0)])
    def test_distinct_keys(self, keys):
        assert derive_seed(7, *keys) != derive_seed(7, 1, 3)

    def test_order_matters(self):
        assert derive_seed(0, 1, 2) != derive_seed(0, 2, 1)

    def test_64_bit(self):
        s = derive_seed(2**63 + 5, 3)
        assert 0 <= s < 2**64
