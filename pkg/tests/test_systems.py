"""Plant-model tests: built-in instances, disturbance split, surrogate dynamics."""

import math

import numpy as np
import pytest

from rsadp.errors import ContractError, UnknownNameError
from rsadp.numerics import pinv_full_column_rank
from rsadp.systems import (
    BUILTIN_NAMES,
    DisturbanceParams,
    auxiliary_deriv,
    builtin,
    sample_disturbance,
    true_deriv,
    unmatched_map,
)


@pytest.fixture(scope="module")
def models():
    return {name: builtin(name) for name in BUILTIN_NAMES}


def h_by_projection(model, x):
    """Oracle route: h = (I - g g^+) k via the pseudoinverse."""
    g = model.g(x)
    return (np.eye(model.n) - g @ pinv_full_column_rank(g)) @ model.k(x)


def test_unknown_name_rejected():
    with pytest.raises(UnknownNameError):
        builtin("segway")


def test_benchmark_drift_values(models):
    m = models["benchmark2"]
    assert m.f(np.array([0.0, 1.0])) == pytest.approx([1.0, 4.0])
    # (cos 2 + 2)^2 = 2.5085907
    assert m.f(np.array([1.0, 1.0])) == pytest.approx([0.0, 0.2542954], abs=1e-6)


def test_benchmark_has_no_disturbance_channel(models):
    m = models["benchmark2"]
    assert m.r == 0
    assert m.k(np.zeros(2)).shape == (2, 0)
    assert m.d_M(np.array([3.0, -1.0])) == 0.0
    assert m.l_M(np.array([3.0, -1.0])) == 0.0


def test_pendulum_bounds_and_maps(models):
    m = models["pendulum"]
    x = np.array([1.0, 1.0])
    assert m.d_M(x) == pytest.approx(1.0)
    assert m.l_M(x) == pytest.approx(0.8)
    assert unmatched_map(m, x) == pytest.approx(np.array([[1.0], [0.0]]))


def test_matched_disturbance_annihilated():
    # synthetic model with k = g: the unmatched map vanishes
    m = builtin("pendulum")
    g = m.g(np.zeros(2))
    h = (np.eye(2) - g @ pinv_full_column_rank(g)) @ g
    assert h == pytest.approx(np.zeros((2, 1)), abs=1e-12)


def test_manipulator_unmatched_equals_k(models):
    m = models["manipulator2dof"]
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.uniform(-1.0, 1.0, size=4)
        assert unmatched_map(m, x) == pytest.approx(m.k(x))


def test_closed_form_unmatched_matches_projection(models):
    rng = np.random.default_rng(1)
    for name in ("pendulum", "manipulator2dof"):
        m = models[name]
        for _ in range(50):
            x = rng.uniform(-1.5, 1.5, size=m.n)
            assert unmatched_map(m, x) == pytest.approx(h_by_projection(m, x), abs=1e-10)


def test_auxiliary_deriv_values(models):
    b = models["benchmark2"]
    assert auxiliary_deriv(b, np.zeros(2), [0.0], []) == pytest.approx([0.0, 0.0])
    assert auxiliary_deriv(b, [1.0, 1.0], [0.0], []) == pytest.approx(
        [0.0, 0.2542954], abs=1e-6
    )
    p = models["pendulum"]
    # [x2 + v, -4.9 sin 2 - 0.2 x2] at x = [2, -2], v = 1
    expect = [-1.0, -4.9 * math.sin(2.0) + 0.4]
    assert auxiliary_deriv(p, [2.0, -2.0], [0.0], [1.0]) == pytest.approx(expect, abs=1e-9)


def test_auxiliary_recomposition_identity(models):
    rng = np.random.default_rng(2)
    for m in models.values():
        for _ in range(20):
            x = rng.uniform(-1.0, 1.0, size=m.n)
            u = rng.normal(size=m.m)
            v = rng.normal(size=m.r)
            expect = m.f(x) + m.g(x) @ u
            if m.r:
                expect = expect + unmatched_map(m, x) @ v
            assert auxiliary_deriv(m, x, u, v) == pytest.approx(expect)


def test_dimension_mismatch_rejected(models):
    with pytest.raises(ContractError):
        auxiliary_deriv(models["pendulum"], [1.0, 2.0, 3.0], [0.0], [0.0])
    with pytest.raises(ContractError):
        true_deriv(
            models["pendulum"], [1.0, 2.0], [0.0, 0.0], DisturbanceParams([0.1, 0.1], 0)
        )


def test_true_deriv_values(models):
    p = models["pendulum"]
    assert true_deriv(p, np.zeros(2), [0.0], DisturbanceParams([0.5, 1.0], 0)) == pytest.approx(
        [0.0, 0.0]
    )
    # d vanishes at x2 = 0
    par = DisturbanceParams([math.sqrt(2) / 2, 2.0], 0)
    assert true_deriv(p, [1.0, 0.0], [0.0], par) == pytest.approx(
        [0.0, -4.9 * math.sin(1.0)]
    )


def test_disturbance_within_declared_bound(models):
    rng = np.random.default_rng(3)
    for name in ("pendulum", "manipulator2dof"):
        m = models[name]
        for i in range(1000):
            x = rng.uniform(-3.0, 3.0, size=m.n)
            params = sample_disturbance(m, seed=i)
            assert np.linalg.norm(m.d(x, params)) <= m.d_M(x) + 1e-12


def test_decomposition_identity(models):
    # g g^+ k d + h d == k d
    rng = np.random.default_rng(4)
    for name in ("pendulum", "manipulator2dof"):
        m = models[name]
        for i in range(200):
            x = rng.uniform(-2.0, 2.0, size=m.n)
            d = m.d(x, sample_disturbance(m, seed=i))
            g = m.g(x)
            matched = g @ pinv_full_column_rank(g) @ m.k(x) @ d
            assert matched + unmatched_map(m, x) @ d == pytest.approx(
                m.k(x) @ d, abs=1e-10
            )


def test_matched_projection_within_l_bound(models):
    rng = np.random.default_rng(5)
    for name in ("pendulum", "manipulator2dof"):
        m = models[name]
        for i in range(200):
            x = rng.uniform(-2.0, 2.0, size=m.n)
            d = m.d(x, sample_disturbance(m, seed=i))
            g = m.g(x)
            proj = pinv_full_column_rank(g) @ m.k(x) @ d
            assert np.linalg.norm(proj) <= m.l_M(x) + 1e-9


def test_param_sampling_respects_ranges(models):
    for name in ("pendulum", "manipulator2dof"):
        m = models[name]
        for seed in range(100):
            vals = sample_disturbance(m, seed=seed).values
            for v, (lo, hi) in zip(vals, m.param_ranges):
                assert lo <= v <= hi


def test_manipulator_overrides():
    m = builtin("manipulator2dof", {"p1": 4.0})
    assert m.params["p1"] == 4.0
    with pytest.raises(ContractError):
        builtin("manipulator2dof", {"mass": 1.0})
    with pytest.raises(ContractError):
        builtin("pendulum", {"p1": 1.0})
