"""Kernel tests: RK4 against closed forms, pinv/eig/rank against hand oracles."""

import numpy as np
import pytest

from rsadp.errors import ContractError, IntegrationDivergedError, SingularInputError
from rsadp.numerics import (
    _jacobi_eigvals,
    matrix_rank,
    pinv_full_column_rank,
    rk4_step,
    sym_eig_min,
)


def _decay(t, x):
    return -x


def _integrate(f, x0, h, steps):
    x = np.asarray(x0, dtype=float)
    for i in range(steps):
        x = rk4_step(f, x, i * h, h)
    return x


class TestRk4:
    def test_zero_derivative_fixed_point(self):
        out = rk4_step(lambda t, x: np.zeros(1), np.array([1.0]), 0.0, 0.1)
        assert out == pytest.approx([1.0], abs=0)

    def test_exponential_decay_against_closed_form(self):
        x = _integrate(_decay, [1.0], 0.1, 10)
        assert abs(x[0] - np.exp(-1.0)) < 1e-6

    def test_harmonic_oscillator_half_period(self):
        f = lambda t, x: np.array([x[1], -x[0]])
        n = 314  # h = pi/314 ~ 0.01
        x = _integrate(f, [1.0, 0.0], np.pi / n, n)
        assert np.max(np.abs(x - np.array([-1.0, 0.0]))) < 1e-6

    def test_observed_order_at_least_3_9(self):
        def err(h):
            x = _integrate(_decay, [1.0], h, int(round(1.0 / h)))
            return abs(x[0] - np.exp(-1.0))

        e1, e2, e3 = err(0.1), err(0.05), err(0.025)
        assert np.log2(e1 / e2) >= 3.9
        assert np.log2(e2 / e3) >= 3.9

    def test_nonfinite_stage_raises_with_location(self):
        def bad(t, x):
            return np.array([np.inf]) if t > 0.4 else -x

        with pytest.raises(IntegrationDivergedError) as exc:
            _integrate(bad, [1.0], 0.1, 10)
        assert exc.value.stage in (1, 2, 3, 4)
        assert exc.value.t >= 0.4

    def test_nonpositive_step_rejected(self):
        with pytest.raises(ContractError):
            rk4_step(_decay, np.array([1.0]), 0.0, 0.0)


class TestPinv:
    def test_unit_column(self):
        assert pinv_full_column_rank(np.array([[0.0], [1.0]])) == pytest.approx([[0.0, 1.0]])

    def test_scaled_column_by_hand(self):
        # (G'G)^-1 G' for G = [0, 0.25]': 1/0.0625 * [0, 0.25] = [0, 4]
        P = pinv_full_column_rank(np.array([[0.0], [0.25]]))
        assert P == pytest.approx([[0.0, 4.0]])

    def test_identity(self):
        assert pinv_full_column_rank(np.eye(2)) == pytest.approx(np.eye(2))

    def test_moore_penrose_identities_random(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            n, m = rng.integers(1, 6), rng.integers(1, 6)
            if n < m:
                n, m = m, n
            G = rng.normal(size=(n, m))
            P = pinv_full_column_rank(G)
            assert np.allclose(G @ P @ G, G, atol=1e-9)
            assert np.allclose(P @ G @ P, P, atol=1e-9)
            assert np.allclose((G @ P).T, G @ P, atol=1e-9)
            assert np.allclose((P @ G).T, P @ G, atol=1e-9)

    def test_rank_deficient_rejected(self):
        with pytest.raises(SingularInputError):
            pinv_full_column_rank(np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]))


class TestSymEigMin:
    def test_identity(self):
        assert sym_eig_min(np.eye(3)) == pytest.approx(1.0, abs=1e-12)

    def test_diagonal(self):
        assert sym_eig_min(np.diag([2.0, 5.0])) == pytest.approx(2.0, abs=1e-12)

    def test_2x2_characteristic_roots(self):
        # [[2,1],[1,2]]: roots of (2-l)^2 - 1 are 1 and 3
        assert sym_eig_min(np.array([[2.0, 1.0], [1.0, 2.0]])) == pytest.approx(1.0, abs=1e-10)

    def test_3x3_characteristic_roots(self):
        # circulant [[2,1,1],[1,2,1],[1,1,2]]: eigenvalues 4, 1, 1
        M = np.full((3, 3), 1.0) + np.eye(3)
        assert sym_eig_min(M) == pytest.approx(1.0, abs=1e-10)
        vals = _jacobi_eigvals(M)
        assert vals == pytest.approx([1.0, 1.0, 4.0], abs=1e-10)

    def test_rayleigh_quotient_upper_bound(self):
        rng = np.random.default_rng(3)
        M = rng.normal(size=(5, 5))
        M = M + M.T
        lam = sym_eig_min(M)
        for _ in range(100):
            v = rng.normal(size=5)
            v /= np.linalg.norm(v)
            assert lam <= v @ M @ v + 1e-10

    def test_asymmetric_rejected(self):
        with pytest.raises(ContractError):
            sym_eig_min(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_matches_lapack_on_random(self):
        rng = np.random.default_rng(11)
        for n in (2, 3, 6, 10):
            for _ in range(10):
                M = rng.normal(size=(n, n))
                M = M + M.T
                assert sym_eig_min(M) == pytest.approx(
                    float(np.linalg.eigvalsh(M)[0]), abs=1e-10 * max(1, np.abs(M).max())
                )


class TestMatrixRank:
    def test_zero_matrix(self):
        assert matrix_rank(np.zeros((3, 3))) == 0

    def test_identity(self):
        assert matrix_rank(np.eye(3)) == 3

    def test_proportional_rows(self):
        assert matrix_rank(np.array([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])) == 1

    def test_invariant_under_row_permutation_and_scaling(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            n, m = rng.integers(2, 6), rng.integers(2, 6)
            # random low-ish rank matrix
            r = int(rng.integers(1, min(n, m) + 1))
            M = rng.normal(size=(n, r)) @ rng.normal(size=(r, m))
            base = matrix_rank(M)
            perm = rng.permutation(n)
            scales = rng.uniform(0.1, 10.0, size=n) * rng.choice([-1.0, 1.0], size=n)
            assert matrix_rank(M[perm] * scales[:, None]) == base

    def test_bad_tolerance_rejected(self):
        with pytest.raises(ContractError):
            matrix_rank(np.eye(2), tol=-1.0)
