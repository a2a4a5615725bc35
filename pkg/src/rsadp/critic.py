"""Polynomial value-function critic: policies, residuals, weight update laws.

The value function is approximated as V(x) ~ W' Phi(x) with a monomial
basis Phi (every term of total degree >= 2, so Phi(0) = 0).  The control
and pseudo-control policies follow from the critic gradient alone:

    u(x) = -b tanh( (1/2b) R^-1 g'(x) dPhi'(x) W )     (saturated)
    u(x) = -(1/2) R^-1 g'(x) dPhi'(x) W                (quadratic)
    v(x) = -(1/2 rho) h'(x) dPhi'(x) W

Learning is driven by the scalar residual of the linear-in-parameters
stationarity relation: a sample records the regressor
Y = dPhi * (f + g u + h v) and the running cost Theta, whose residual
Theta + W'Y is pushed to zero by gradient flow on the squared residual,
replayed over a buffer of recorded samples.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError, LearningDivergedError
from .numerics import Mat, Vec, sym_eig_min
from .penalty import InputPenalty, RobustnessTerms, StatePenalty, utility
from .systems import SystemModel, auxiliary_deriv, unmatched_map

# Abort threshold for the estimated weight norm.
_W_GUARD = 1e6
# tanh output is clamped this far inside (-1, 1) so saturated policies
# stay strictly within their bounds even for huge critic gradients.
_TANH_INTERIOR = 1.0 - 1e-12

STANDARD_BASES = {
    "benchmark2": ((2, 0), (1, 1), (0, 2)),
    "pendulum": ((2, 0), (1, 1), (0, 2), (0, 3), (1, 2), (2, 1)),
    "manipulator2dof": (
        (2, 0, 0, 0),
        (0, 2, 0, 0),
        (0, 0, 2, 0),
        (0, 0, 0, 2),
        (1, 1, 0, 0),
        (1, 0, 1, 0),
        (1, 0, 0, 1),
        (0, 1, 1, 0),
        (0, 1, 0, 1),
        (0, 0, 1, 1),
    ),
}


@dataclass(frozen=True)
class Basis:
    """Monomial basis descriptor: one exponent tuple per term."""

    n: int
    terms: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        terms = tuple(tuple(int(e) for e in t) for t in self.terms)
        object.__setattr__(self, "terms", terms)
        for t in terms:
            if len(t) != self.n:
                raise ContractError(f"term {t} has {len(t)} exponents, state dim is {self.n}")
            if any(e < 0 for e in t):
                raise ContractError(f"negative exponent in term {t}")
            if sum(t) < 2:
                raise ContractError(f"term {t} has total degree < 2")
        object.__setattr__(self, "_exps", np.array(terms, dtype=float))

    @property
    def N(self) -> int:
        return len(self.terms)


def standard_basis(model_name: str) -> Basis:
    """Monomial basis used by the built-in experiment of the named model."""
    terms = STANDARD_BASES[model_name]
    return Basis(n=len(terms[0]), terms=terms)


def basis_eval(b: Basis, x: Vec) -> Vec:
    """Monomial values Phi(x), in declared term order."""
    x = np.asarray(x, dtype=float)
    return np.prod(x[None, :] ** b._exps, axis=1)


def basis_grad(b: Basis, x: Vec) -> Mat:
    """Analytic Jacobian dPhi(x) of shape (N, n)."""
    x = np.asarray(x, dtype=float)
    exps = b._exps
    grad = np.empty((b.N, b.n))
    for j in range(b.n):
        lowered = exps.copy()
        lowered[:, j] = np.maximum(lowered[:, j] - 1.0, 0.0)
        grad[:, j] = exps[:, j] * np.prod(x[None, :] ** lowered, axis=1)
    return grad


@dataclass(frozen=True)
class CriticState:
    """Critic parameters: weights, learning gains, pseudo-control weight."""

    basis: Basis
    W_hat: np.ndarray
    Gamma: np.ndarray
    k_c: float
    k_e: float
    rho: float

    def __post_init__(self):
        W = np.asarray(self.W_hat, dtype=float)
        G = np.atleast_2d(np.asarray(self.Gamma, dtype=float))
        if W.shape != (self.basis.N,):
            raise ContractError(f"W_hat shape {W.shape} != ({self.basis.N},)")
        if not np.all(np.isfinite(W)):
            raise ContractError("W_hat must be finite")
        if G.shape != (self.basis.N, self.basis.N) or sym_eig_min(G) <= 0.0:
            raise ContractError("Gamma must be symmetric positive definite, N x N")
        if self.k_c <= 0.0 or self.k_e <= 0.0 or self.rho <= 0.0:
            raise ContractError("gains k_c, k_e and rho must be positive")
        object.__setattr__(self, "W_hat", W)
        object.__setattr__(self, "Gamma", G)

    def with_weights(self, W_new: np.ndarray) -> "CriticState":
        return dataclasses.replace(self, W_hat=W_new)


@dataclass(frozen=True)
class Sample:
    """One recorded experience: regressor Y (length N) and cost Theta."""

    Y: np.ndarray
    theta: float

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float)
        if not (np.all(np.isfinite(Y)) and np.isfinite(self.theta)):
            raise ContractError("sample entries must be finite")
        object.__setattr__(self, "Y", Y)


def saturated_policy(a: Vec, r_diag: Vec, beta: float) -> Vec:
    """Bounded policy -b tanh(a / (2 b R)), clamped strictly inside (-b, b)."""
    raw = np.tanh(a / (2.0 * beta * r_diag))
    return -beta * np.clip(raw, -_TANH_INTERIOR, _TANH_INTERIOR)


def policy_u(c: CriticState, model: SystemModel, ip: InputPenalty, x: Vec) -> Vec:
    """Greedy input policy from the critic gradient."""
    a = model.g(np.asarray(x, dtype=float)).T @ (basis_grad(c.basis, x).T @ c.W_hat)
    if ip.mode == "saturated":
        return saturated_policy(a, ip.r_diag, ip.beta)
    return -0.5 * (a / ip.r_diag)


def policy_v(c: CriticState, model: SystemModel, x: Vec) -> Vec:
    """Greedy pseudo-control policy -(1/2 rho) h' dPhi' W."""
    if model.r == 0:
        return np.zeros(0)
    h = unmatched_map(model, np.asarray(x, dtype=float))
    return -(0.5 / c.rho) * (h.T @ (basis_grad(c.basis, x).T @ c.W_hat))


def make_sample(
    c: CriticState,
    model: SystemModel,
    sp: StatePenalty,
    ip: InputPenalty,
    rt: RobustnessTerms,
    x: Vec,
) -> Sample:
    """Experience sample at ``x`` under the current greedy policies."""
    u = policy_u(c, model, ip, x)
    v = policy_v(c, model, x)
    dx = auxiliary_deriv(model, x, u, v)
    Y = basis_grad(c.basis, x) @ dx
    theta = utility(sp, ip, rt, model, x, u, v)
    return Sample(Y=Y, theta=theta)


def bellman_error(c: CriticState, s: Sample) -> float:
    """Residual Theta + W'Y of one sample against the current weights."""
    if s.Y.shape != (c.basis.N,):
        raise ContractError(f"sample regressor length {s.Y.shape} != N={c.basis.N}")
    return float(s.theta + c.W_hat @ s.Y)


def _weight_step(
    c: CriticState, current: Sample, buffer: Sequence[Sample], h: float, buffer_scale: float
) -> CriticState:
    if h <= 0.0:
        raise ContractError(f"step size must be positive, got {h}")
    W = c.W_hat
    resid = current.theta + W @ current.Y
    drive = c.k_c * resid * current.Y
    if buffer:
        Ys = np.stack([s.Y for s in buffer])
        thetas = np.array([s.theta for s in buffer])
        resids = thetas + Ys @ W  # recomputed against the current weights
        drive = drive + buffer_scale * c.k_e * (Ys.T @ resids)
    W_new = W - h * (c.Gamma @ drive)
    if not np.all(np.isfinite(W_new)) or np.linalg.norm(W_new) > _W_GUARD:
        raise LearningDivergedError(
            f"weight update diverged (|W| = {np.linalg.norm(W_new):.3e})"
        )
    return c.with_weights(W_new)


def update_online(
    c: CriticState, current: Sample, buffer: Sequence[Sample], h: float
) -> CriticState:
    """One forward-Euler step of the replay-driven weight law.

    dW/dt = -Gamma k_c Y Theta~  -  sum_l Gamma k_e Y_l Theta~_l
    with every buffered residual recomputed against the current weights.
    """
    return _weight_step(c, current, buffer, h, buffer_scale=1.0)


def update_offline(
    c: CriticState, current: Sample, offline: Sequence[Sample], P: int, h: float
) -> CriticState:
    """Buffer-averaged variant: the replay sum is scaled by 1/P."""
    if P <= 0 or len(offline) != P:
        raise ContractError(f"offline buffer length {len(offline)} != P={P}")
    return _weight_step(c, current, offline, h, buffer_scale=1.0 / P)


def integrate_weights(
    c: CriticState,
    current: Sample,
    buffer_Y: np.ndarray,
    buffer_theta: np.ndarray,
    h: float,
    buffer_scale: float = 1.0,
    gamma_chol: np.ndarray | None = None,
) -> CriticState:
    """Exact step of the weight law with sample data frozen over [t, t+h].

    With the current sample and buffer held fixed, dW/dt = -Gamma (A W + p)
    is linear (A = k_c Y Y' + scale k_e sum Y_l Y_l', p the matching cost
    drive), so the step is solved in closed form through the eigensystem
    of L' A L, Gamma = L L'.  This is the small-h limit of the Euler law
    in :func:`update_online` and stays stable for any step size and any
    regressor magnitude.
    """
    if h <= 0.0:
        raise ContractError(f"step size must be positive, got {h}")
    L = np.linalg.cholesky(c.Gamma) if gamma_chol is None else gamma_chol
    Y = current.Y
    A = c.k_c * np.outer(Y, Y)
    p = c.k_c * current.theta * Y
    if buffer_Y.size:
        A = A + (buffer_scale * c.k_e) * (buffer_Y.T @ buffer_Y)
        p = p + (buffer_scale * c.k_e) * (buffer_Y.T @ buffer_theta)
    S = L.T @ A @ L
    lam, U = np.linalg.eigh(0.5 * (S + S.T))
    lam = np.maximum(lam, 0.0)  # A is PSD; clip eigensolver round-off
    z0 = np.linalg.solve(L, c.W_hat)
    q = L.T @ p
    decay = np.exp(-lam * h)
    # (1 - e^{-lam h}) / lam, continuously extended by h at lam = 0.
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = np.where(lam > 1e-300, (1.0 - decay) / lam, h)
    z_new = U @ (decay * (U.T @ z0) - gain * (U.T @ q))
    W_new = L @ z_new
    if not np.all(np.isfinite(W_new)) or np.linalg.norm(W_new) > _W_GUARD:
        raise LearningDivergedError(
            f"weight update diverged (|W| = {np.linalg.norm(W_new):.3e})"
        )
    return c.with_weights(W_new)


def hjb_residual(
    c: CriticState,
    model: SystemModel,
    sp: StatePenalty,
    ip: InputPenalty,
    rt: RobustnessTerms,
    x: Vec,
) -> float:
    """Stationarity diagnostic r(x,u,v) + (dPhi' W)' (f + g u + h v).

    Zero everywhere exactly when the critic solves the optimal-control
    stationarity equation under its own greedy policies.
    """
    u = policy_u(c, model, ip, x)
    v = policy_v(c, model, x)
    dx = auxiliary_deriv(model, x, u, v)
    grad_v = basis_grad(c.basis, x).T @ c.W_hat
    return float(utility(sp, ip, rt, model, x, u, v) + grad_v @ dx)
