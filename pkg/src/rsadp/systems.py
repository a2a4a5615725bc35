"""Control-affine plant models with additive disturbances.

A plant has the form

    dx/dt = f(x) + g(x) u + k(x) d(x)

with drift ``f``, input map ``g`` (full column rank), disturbance map ``k``
and an unknown state-dependent disturbance ``d`` bounded by a known
envelope ``d_M``.  The disturbance channel splits into a matched part
(inside the span of ``g``) and an unmatched part acting through

    h(x) = (I - g(x) g(x)^+) k(x),

which motivates the disturbance-free surrogate

    dx/dt = f(x) + g(x) u + h(x) v

driven by a fictitious pseudo-control ``v``.  Three concrete plants are
provided: a 2-state benchmark with a known optimal value function, a
damped pendulum, and a 2-DoF manipulator in state-space form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractError, SingularInputError, UnknownNameError
from .numerics import Mat, Vec, pinv_full_column_rank

BUILTIN_NAMES = ("benchmark2", "pendulum", "manipulator2dof")

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class DisturbanceParams:
    """Frozen disturbance parameters for one episode.

    ``values`` holds the per-model parameter vector (e.g. the two gains of
    the pendulum disturbance); ``seed`` records the RNG seed it was drawn
    with so runs can be reproduced bit for bit.
    """

    values: np.ndarray
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))


@dataclass(frozen=True)
class SystemModel:
    """Immutable bundle of plant maps and disturbance bounds.

    ``f(0) = 0`` and ``d(0) = 0`` so the origin is the equilibrium;
    ``d_M`` / ``l_M`` bound the disturbance and its matched projection and
    vanish at the origin.  ``h_map``, when set, is the closed-form
    unmatched map (all built-ins admit one); :func:`unmatched_map` falls
    back to the pseudoinverse formula otherwise.
    """

    name: str
    n: int
    m: int
    r: int
    f: Callable[[Vec], Vec]
    g: Callable[[Vec], Mat]
    k: Callable[[Vec], Mat]
    d: Callable[[Vec, DisturbanceParams], Vec]
    d_M: Callable[[Vec], float]
    l_M: Callable[[Vec], float]
    param_ranges: tuple[tuple[float, float], ...] = ()
    h_map: Callable[[Vec], Mat] | None = None
    params: dict = field(default_factory=dict)


def sample_disturbance(model: SystemModel, seed: int) -> DisturbanceParams:
    """Draw disturbance parameters uniformly from the model's ranges."""
    rng = np.random.default_rng(seed)
    values = np.array([rng.uniform(lo, hi) for lo, hi in model.param_ranges])
    return DisturbanceParams(values=values, seed=seed)


def unmatched_map(model: SystemModel, x: Vec) -> Mat:
    """Unmatched disturbance map h(x) = (I - g g^+) k at the state ``x``."""
    if model.h_map is not None:
        return model.h_map(np.asarray(x, dtype=float))
    x = np.asarray(x, dtype=float)
    g = model.g(x)
    g_pinv = pinv_full_column_rank(g)
    return (np.eye(model.n) - g @ g_pinv) @ model.k(x)


def _check_dims(model: SystemModel, x: Vec, u: Vec, v: Vec | None = None) -> None:
    if len(x) != model.n:
        raise ContractError(f"state length {len(x)} != n={model.n}")
    if len(u) != model.m:
        raise ContractError(f"input length {len(u)} != m={model.m}")
    if v is not None and len(v) != model.r:
        raise ContractError(f"pseudo-control length {len(v)} != r={model.r}")


def auxiliary_deriv(model: SystemModel, x: Vec, u: Vec, v: Vec) -> Vec:
    """Derivative of the disturbance-free surrogate f + g u + h v."""
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    _check_dims(model, x, u, v)
    dx = model.f(x) + model.g(x) @ u
    if model.r:
        dx = dx + unmatched_map(model, x) @ v
    return dx


def true_deriv(model: SystemModel, x: Vec, u: Vec, params: DisturbanceParams) -> Vec:
    """Derivative of the disturbed plant f + g u + k d with frozen params."""
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    _check_dims(model, x, u)
    dx = model.f(x) + model.g(x) @ u
    if model.r:
        dx = dx + model.k(x) @ model.d(x, params)
    return dx


def builtin(name: str, overrides: dict | None = None) -> SystemModel:
    """Construct one of the built-in plants by name.

    ``overrides`` adjusts named physical parameters (currently the
    manipulator inertia constants ``p1``, ``p2``, ``p3``).
    """
    if name == "benchmark2":
        model = _benchmark2()
    elif name == "pendulum":
        model = _pendulum()
    elif name == "manipulator2dof":
        model = _manipulator2dof(overrides or {})
    else:
        raise UnknownNameError(f"unknown model '{name}' (choose from {BUILTIN_NAMES})")
    if overrides and name != "manipulator2dof":
        raise ContractError(f"model '{name}' accepts no overrides, got {overrides}")
    _validate(model)
    return model


def _validate(model: SystemModel) -> None:
    """Equilibrium and shape checks on a freshly built model."""
    x0 = np.zeros(model.n)
    if np.max(np.abs(model.f(x0))) != 0.0:
        raise ContractError(f"{model.name}: f(0) != 0")
    if model.g(x0).shape != (model.n, model.m):
        raise ContractError(f"{model.name}: g shape mismatch")
    if model.k(x0).shape != (model.n, model.r):
        raise ContractError(f"{model.name}: k shape mismatch")
    if model.r:
        params = sample_disturbance(model, seed=0)
        if np.max(np.abs(model.d(x0, params)), initial=0.0) != 0.0:
            raise ContractError(f"{model.name}: d(0) != 0")
    if model.d_M(x0) != 0.0 or model.l_M(x0) != 0.0:
        raise ContractError(f"{model.name}: disturbance bounds must vanish at 0")


def _benchmark2() -> SystemModel:
    """Two-state nonlinear benchmark with a quadratic optimal value function."""

    def f(x):
        c = math.cos(2.0 * x[0]) + 2.0
        return np.array([-x[0] + x[1], -0.5 * x[0] - 0.5 * x[1] * (1.0 - c * c)])

    def g(x):
        return np.array([[0.0], [math.cos(2.0 * x[0]) + 2.0]])

    empty_k = np.zeros((2, 0))
    return SystemModel(
        name="benchmark2",
        n=2,
        m=1,
        r=0,
        f=f,
        g=g,
        k=lambda x: empty_k,
        d=lambda x, p: np.zeros(0),
        d_M=lambda x: 0.0,
        l_M=lambda x: 0.0,
        h_map=lambda x: empty_k,
    )


def _pendulum() -> SystemModel:
    """Damped pendulum with a matched/unmatched state-feedback disturbance."""

    def f(x):
        return np.array([x[1], -4.9 * math.sin(x[0]) - 0.2 * x[1]])

    g_const = np.array([[0.0], [0.25]])
    k_const = np.array([[1.0], [-0.2]])
    h_const = np.array([[1.0], [0.0]])

    def d(x, params):
        w1, w2 = params.values
        return np.array([w1 * x[0] * math.sin(w2 * x[1])])

    return SystemModel(
        name="pendulum",
        n=2,
        m=1,
        r=1,
        f=f,
        g=lambda x: g_const,
        k=lambda x: k_const,
        d=d,
        d_M=lambda x: 0.5 * _SQRT2 * float(np.linalg.norm(x)),
        l_M=lambda x: 0.4 * _SQRT2 * float(np.linalg.norm(x)),
        param_ranges=((-0.5 * _SQRT2, 0.5 * _SQRT2), (-2.0, 2.0)),
        h_map=lambda x: h_const,
    )


# Default two-link inertia constants; implementation defaults, overridable
# through builtin("manipulator2dof", {"p1": ..., ...}).
_MANIP_DEFAULTS = {"p1": 3.473, "p2": 0.196, "p3": 0.242}


def _manipulator2dof(overrides: dict) -> SystemModel:
    unknown = set(overrides) - set(_MANIP_DEFAULTS)
    if unknown:
        raise ContractError(f"unknown manipulator overrides: {sorted(unknown)}")
    p = {**_MANIP_DEFAULTS, **overrides}
    p1, p2, p3 = float(p["p1"]), float(p["p2"]), float(p["p3"])

    def m_inv(x):
        c2 = math.cos(x[1])
        m11 = p1 + 2.0 * p3 * c2
        m12 = p2 + p3 * c2
        det = m11 * p2 - m12 * m12
        if abs(det) < 1e-12:
            raise SingularInputError(f"singular inertia matrix at q2={x[1]:.4f}")
        return np.array([[p2, -m12], [-m12, m11]]) / det

    def f(x):
        s2 = math.sin(x[1])
        qd = x[2:4]
        cor = np.array(
            [
                [-p3 * x[3] * s2, -p3 * (x[2] + x[3]) * s2],
                [p3 * x[2] * s2, 0.0],
            ]
        )
        acc = m_inv(x) @ (-(cor @ qd))
        return np.array([x[2], x[3], acc[0], acc[1]])

    def g(x):
        out = np.zeros((4, 2))
        out[2:, :] = m_inv(x)
        return out

    k_const = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]])

    def d(x, params):
        d1, d2 = params.values
        return np.array([d1 * x[0] * math.sin(x[1]), d2 * x[1] * math.cos(x[0])])

    return SystemModel(
        name="manipulator2dof",
        n=4,
        m=2,
        r=2,
        f=f,
        g=g,
        k=lambda x: k_const,
        d=d,
        d_M=lambda x: float(np.linalg.norm(x)),
        l_M=lambda x: 0.0,
        param_ranges=((-1.0, 1.0), (-1.0, 1.0)),
        h_map=lambda x: k_const,
        params={"p1": p1, "p2": p2, "p3": p3},
    )
