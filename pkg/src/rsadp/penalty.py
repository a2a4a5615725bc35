"""Cost utilities: saturating input penalty, barrier state penalty, robustness terms.

The running cost of an episode is

    r(x, u, v) = l_M(x)^2 + rho * d_M(x)^2  +  rho * v'v  +  W(u)  +  L(x)

where ``W`` penalises inputs and ``L`` penalises states.  In saturated
mode ``W`` is the integral of the inverse saturation curve,

    W_j(u_j) = 2 b R_j u_j atanh(u_j / b) + b^2 R_j log(1 - u_j^2 / b^2),

which diverges like a barrier as |u_j| -> b while matching the quadratic
cost R_j u_j^2 for small inputs.  ``L(x) = x'Qx + sum_i k_i S_i(x)`` adds
log barriers S_i for each state constraint, each weighted by a risk
factor k_i = 1 / (1 + d_i^2) that fades the barrier out away from the
boundary (d_i is the distance to it).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConstraintViolationError, ContractError
from .numerics import Vec, sym_eig_min
from .systems import SystemModel

_LN2 = math.log(2.0)
# |u| within this relative distance of the bound uses the analytic limit
# value 2 b^2 R ln 2 instead of the (inf - inf prone) closed form.
_SAT_EDGE = 1e-9
_ATANH_CLIP = 1.0 - 1e-12

BARRIER_KINDS = ("rect_abs", "circle", "ellipse_coupled")


@dataclass(frozen=True)
class InputPenalty:
    """Input-cost description: plain quadratic u'Ru or the saturating integral."""

    mode: str  # "quadratic" or "saturated"
    R: np.ndarray  # positive diagonal, shape (m, m)
    beta: float | None = None

    def __post_init__(self):
        if self.mode not in ("quadratic", "saturated"):
            raise ContractError(f"unknown input penalty mode '{self.mode}'")
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if R.shape[0] != R.shape[1] or np.any(R != np.diag(np.diag(R))):
            raise ContractError("R must be a square diagonal matrix")
        if np.any(np.diag(R) <= 0.0):
            raise ContractError("all diagonal entries of R must be positive")
        object.__setattr__(self, "R", R)
        if self.mode == "saturated":
            if self.beta is None or self.beta <= 0.0:
                raise ContractError("saturated mode needs a positive bound beta")

    @property
    def r_diag(self) -> np.ndarray:
        return np.diag(self.R)


@dataclass(frozen=True)
class BarrierTerm:
    """One log-barrier over a coordinate region.

    kind "rect_abs":        |x_i| < alpha,  S = log(a^2 / (a^2 - x_i^2))
    kind "circle":          x_i^2 + x_j^2 < radius^2,
                            S = log(rr / (rr - x_i^2 - x_j^2)), rr = radius^2
    kind "ellipse_coupled": x_i^2 + x_j^2 < 1 via the nested form
                            S = log(a(x_j) / (a(x_j) - x_i^2)), a = 1 - x_j^2

    ``distance`` is the Euclidean gap to the boundary (alpha - |x_i| for
    rectangles, radius - ||x_pair|| for the circular shapes).
    """

    kind: str
    indices: tuple[int, ...]
    bound: float = 1.0  # alpha for rect_abs, radius for circle, fixed 1 for ellipse

    def __post_init__(self):
        if self.kind not in BARRIER_KINDS:
            raise ContractError(f"unknown barrier kind '{self.kind}'")
        idx = tuple(int(i) for i in self.indices)
        object.__setattr__(self, "indices", idx)
        need = 1 if self.kind == "rect_abs" else 2
        if len(idx) != need:
            raise ContractError(f"barrier '{self.kind}' needs {need} coordinate indices")
        if self.bound <= 0.0:
            raise ContractError("barrier bound must be positive")
        if self.kind == "ellipse_coupled" and self.bound != 1.0:
            raise ContractError("ellipse_coupled is defined on the unit disk")

    def distance(self, x: Vec) -> float:
        """Signed distance to the boundary; positive strictly inside."""
        if self.kind == "rect_abs":
            return self.bound - abs(float(x[self.indices[0]]))
        i, j = self.indices
        return self.bound - math.hypot(float(x[i]), float(x[j]))

    def value(self, x: Vec) -> float:
        """Barrier value S(x); only meaningful strictly inside the region."""
        if self.kind == "rect_abs":
            a2 = self.bound * self.bound
            return math.log(a2 / (a2 - float(x[self.indices[0]]) ** 2))
        i, j = self.indices
        xi, xj = float(x[i]), float(x[j])
        if self.kind == "circle":
            rr = self.bound * self.bound
            return math.log(rr / (rr - xi * xi - xj * xj))
        a = 1.0 - xj * xj
        return math.log(a / (a - xi * xi))


def rect_abs(alpha: float, index: int) -> BarrierTerm:
    return BarrierTerm(kind="rect_abs", indices=(index,), bound=alpha)


def circle(radius: float, indices: tuple[int, int]) -> BarrierTerm:
    return BarrierTerm(kind="circle", indices=indices, bound=radius)


def ellipse_coupled(indices: tuple[int, int]) -> BarrierTerm:
    return BarrierTerm(kind="ellipse_coupled", indices=indices)


@dataclass(frozen=True)
class StatePenalty:
    """Quadratic state cost plus weighted barriers."""

    Q: np.ndarray
    barriers: tuple[BarrierTerm, ...] = ()

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if Q.shape[0] != Q.shape[1]:
            raise ContractError("Q must be square")
        if sym_eig_min(Q) <= 0.0:  # also rejects asymmetric Q
            raise ContractError("Q must be symmetric positive definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "barriers", tuple(self.barriers))


@dataclass(frozen=True)
class RobustnessTerms:
    """Weight rho of the pseudo-control cost and disturbance envelopes."""

    rho: float

    def __post_init__(self):
        if self.rho <= 0.0:
            raise ContractError("rho must be positive")

    def r_d(self, model: SystemModel, x: Vec) -> float:
        """Disturbance-envelope cost l_M^2 + rho d_M^2."""
        return model.l_M(x) ** 2 + self.rho * model.d_M(x) ** 2


def saturated_penalty_terms(u: np.ndarray, r_diag: np.ndarray, beta: float) -> np.ndarray:
    """Per-channel saturating penalty, vectorised over the last axis of ``u``.

    Assumes |u| <= beta; values within ``1e-9 * beta`` of the bound take
    the analytic limit 2 beta^2 R ln 2.
    """
    s = u / beta
    s_c = np.clip(s, -_ATANH_CLIP, _ATANH_CLIP)
    atanh = 0.5 * np.log((1.0 + s_c) / (1.0 - s_c))
    w = 2.0 * beta * r_diag * u * atanh + beta * beta * r_diag * np.log1p(-s_c * s_c)
    return np.where(np.abs(s) > 1.0 - _SAT_EDGE, 2.0 * beta * beta * r_diag * _LN2, w)


def input_penalty_value(p: InputPenalty, u: Vec) -> float:
    """Input cost W(u); raises if a saturated-mode input exceeds its bound."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if p.mode == "quadratic":
        return float(u @ p.R @ u)
    over = np.flatnonzero(np.abs(u) > p.beta)
    if over.size:
        j = int(over[0])
        raise ConstraintViolationError(
            f"input channel {j} at {u[j]:.6g} exceeds bound {p.beta}", index=j
        )
    return float(np.sum(saturated_penalty_terms(u, p.r_diag, p.beta)))


def risk_weight(b: BarrierTerm, x: Vec) -> float:
    """Barrier weight 1 / (1 + distance^2); 1 in the boundary limit."""
    d = b.distance(x)
    if d < 0.0:
        raise ConstraintViolationError(
            f"state outside barrier region ({b.kind} on coords {b.indices})"
        )
    return 1.0 / (1.0 + d * d)


@dataclass(frozen=True)
class StatePenaltyTerms:
    """Component breakdown of L(x) for logging."""

    quadratic: float
    barrier_terms: np.ndarray  # k_i * S_i per barrier
    margins: np.ndarray  # distance to each boundary

    @property
    def total(self) -> float:
        return self.quadratic + float(np.sum(self.barrier_terms))


def state_penalty_terms(sp: StatePenalty, x: Vec) -> StatePenaltyTerms:
    x = np.asarray(x, dtype=float)
    quad = float(x @ sp.Q @ x)
    terms = np.zeros(len(sp.barriers))
    margins = np.zeros(len(sp.barriers))
    for i, b in enumerate(sp.barriers):
        d = b.distance(x)
        margins[i] = d
        if d <= 0.0:
            raise ConstraintViolationError(
                f"state touches or leaves barrier region {i} ({b.kind}, margin {d:.3e})",
                index=i,
            )
        terms[i] = (1.0 / (1.0 + d * d)) * b.value(x)
    return StatePenaltyTerms(quadratic=quad, barrier_terms=terms, margins=margins)


def state_penalty_value(sp: StatePenalty, x: Vec) -> float:
    """State cost L(x) = x'Qx + sum_i k_i S_i(x), finite strictly inside."""
    return state_penalty_terms(sp, x).total


@dataclass(frozen=True)
class UtilityTerms:
    """Component breakdown of the running cost r(x, u, v)."""

    r_d: float
    pseudo: float  # rho * v'v
    input: float  # W(u)
    state: StatePenaltyTerms

    @property
    def total(self) -> float:
        return self.r_d + self.pseudo + self.input + self.state.total


def utility_terms(
    sp: StatePenalty,
    ip: InputPenalty,
    rt: RobustnessTerms,
    model: SystemModel,
    x: Vec,
    u: Vec,
    v: Vec,
) -> UtilityTerms:
    v = np.atleast_1d(np.asarray(v, dtype=float))
    return UtilityTerms(
        r_d=rt.r_d(model, np.asarray(x, dtype=float)),
        pseudo=rt.rho * float(v @ v),
        input=input_penalty_value(ip, u),
        state=state_penalty_terms(sp, x),
    )


def utility(
    sp: StatePenalty,
    ip: InputPenalty,
    rt: RobustnessTerms,
    model: SystemModel,
    x: Vec,
    u: Vec,
    v: Vec,
) -> float:
    """Running cost r(x, u, v) = r_d + rho v'v + W(u) + L(x)."""
    return utility_terms(sp, ip, rt, model, x, u, v).total
