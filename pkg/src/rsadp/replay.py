"""Experience buffers feeding the critic update laws.

The online buffer keeps at most P samples.  While filling it appends;
once full and while the weights are still moving it replaces the slot
whose substitution by the candidate maximises the smallest eigenvalue of
the regressor Gram matrix sum_l Y_l Y_l' (admitting the candidate only
if that strictly improves on the current value); after the weights have
settled it falls back to cheap FIFO overwrites.  A full-rank stack of
regressors is the excitation condition for weight convergence, so the
Gram eigenvalue doubles as the buffer's richness diagnostic.

The offline buffer is built ahead of time on a grid over an operating
region.  It stores policy-independent factors per grid point x_l

    F = dPhi f,   G = dPhi g,   H = dPhi h,   K = L(x),   R = r_d(x)

from which a sample for any current weights is assembled as
Y = F + G u + H v and Theta = R + rho v'v + W(u) + K with the greedy
policies evaluated straight from the stored factors.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .critic import Basis, CriticState, Sample, basis_grad, saturated_policy
from .errors import ConfigError, ContractError
from .numerics import matrix_rank, sym_eig_min
from .penalty import (
    ConstraintViolationError,
    InputPenalty,
    RobustnessTerms,
    StatePenalty,
    saturated_penalty_terms,
    state_penalty_value,
)
from .systems import SystemModel, unmatched_map

_OFFLINE_FORMAT = "rsadp-offline-buffer v1"


def _gram(Ys: np.ndarray) -> np.ndarray:
    return Ys.T @ Ys


def _gram_min_fast(Ys: np.ndarray) -> float:
    """Smallest Gram eigenvalue via LAPACK; hot-loop twin of gram_min_eig."""
    if Ys.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh(_gram(Ys))[0])


@dataclass
class InsertReport:
    """Outcome of one buffer insertion attempt."""

    accepted: bool
    slot: int | None
    mode: str  # "filling", "prioritized" or "sequential"
    lam_before: float
    lam_after: float


class OnlineBuffer:
    """Fixed-capacity sample store with eigenvalue-prioritized admission."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ContractError("buffer capacity must be at least 1")
        self.capacity = capacity
        self.records: list[Sample] = []
        self.cursor = 0  # next slot for sequential overwrites

    def __len__(self) -> int:
        return len(self.records)

    @property
    def filling(self) -> bool:
        return len(self.records) < self.capacity

    def regressors(self) -> np.ndarray:
        """Stacked regressor matrix, one record per row."""
        if not self.records:
            return np.zeros((0, 0))
        return np.stack([s.Y for s in self.records])

    def insert(self, s: Sample, detector_converged: bool) -> InsertReport:
        """Admit a sample according to the buffer's current phase.

        Filling appends.  When full and not converged, the candidate is
        tried in every slot and committed to the one maximising the
        resulting smallest Gram eigenvalue, but only if that strictly
        exceeds the current value; otherwise it is rejected.  When
        converged the candidate overwrites at the FIFO cursor.
        """
        if self.records and s.Y.shape != self.records[0].Y.shape:
            raise ContractError("sample dimension does not match buffer records")
        if self.filling:
            before = _gram_min_fast(self.regressors())
            self.records.append(s)
            after = _gram_min_fast(self.regressors())
            return InsertReport(True, len(self.records) - 1, "filling", before, after)
        Ys = self.regressors()
        before = _gram_min_fast(Ys)
        if detector_converged:
            slot = self.cursor
            self.records[slot] = s
            self.cursor = (self.cursor + 1) % self.capacity
            Ys[slot] = s.Y
            return InsertReport(True, slot, "sequential", before, _gram_min_fast(Ys))
        # One batched eigensolve over all P candidate replacements.
        base = _gram(Ys)
        outer_new = np.outer(s.Y, s.Y)
        cands = base[None, :, :] - np.einsum("li,lj->lij", Ys, Ys) + outer_new[None, :, :]
        mins = np.linalg.eigvalsh(cands)[:, 0]
        slot = int(np.argmax(mins))
        if mins[slot] > before:
            self.records[slot] = s
            return InsertReport(True, slot, "prioritized", before, float(mins[slot]))
        return InsertReport(False, None, "prioritized", before, before)


def gram_min_eig(b: OnlineBuffer, k_e: float) -> float:
    """Smallest eigenvalue of sum_l k_e Y_l Y_l' over the buffer records."""
    if not b.records:
        raise ContractError("buffer is empty")
    return sym_eig_min(k_e * _gram(b.regressors()))


def rank_ok(b: OnlineBuffer) -> bool:
    """True when the stacked regressors reach full rank N."""
    if not b.records:
        return False
    Ys = b.regressors()
    return matrix_rank(Ys) == Ys.shape[1]


@dataclass
class ConvergenceDetector:
    """Flags weight convergence when successive snapshots stop moving.

    Every ``interval`` calls the current weights are compared with the
    snapshot from the previous check; a Euclidean distance at or below
    ``xi`` reports converged.  Between check boundaries the last verdict
    is held.
    """

    xi: float
    interval: int = 1
    _snapshot: np.ndarray | None = field(default=None, repr=False)
    _count: int = field(default=0, repr=False)
    _last: bool = field(default=False, repr=False)

    def __post_init__(self):
        if self.xi <= 0.0:
            raise ContractError("threshold xi must be positive")
        if self.interval < 1:
            raise ContractError("check interval must be at least 1")

    def check_convergence(self, W_now: np.ndarray) -> bool:
        W_now = np.asarray(W_now, dtype=float)
        if self._snapshot is None:
            self._snapshot = W_now.copy()
            self._count = 0
            return False
        self._count += 1
        if self._count % self.interval == 0:
            self._last = float(np.linalg.norm(W_now - self._snapshot)) <= self.xi
            self._snapshot = W_now.copy()
        return self._last


@dataclass(frozen=True)
class OfflineBuffer:
    """Grid-sampled factor store; see the module docstring for the fields."""

    states: np.ndarray  # (P, n)
    F: np.ndarray  # (P, N)
    G: np.ndarray  # (P, N, m)
    H: np.ndarray  # (P, N, r)
    K: np.ndarray  # (P,)
    R: np.ndarray  # (P,)
    skipped: int  # grid points rejected for leaving a barrier region

    @property
    def P(self) -> int:
        return self.states.shape[0]


def grid_points(
    region: list[tuple[float, float]],
    counts: list[int] | None = None,
    mesh: list[float] | None = None,
) -> np.ndarray:
    """Cartesian product of per-dimension equidistant samples.

    Counts mode places ``c`` points per dimension including both endpoints
    (a single point lands on the interval midpoint).  Mesh mode walks from
    the lower endpoint in steps of ``delta``, keeping every point that
    stays inside the interval (endpoints included when the width divides).
    """
    if (counts is None) == (mesh is None):
        raise ConfigError("exactly one of counts/mesh must be given")
    axes = []
    for dim, (lo, hi) in enumerate(region):
        if hi < lo:
            raise ConfigError(f"empty interval [{lo}, {hi}] in dimension {dim}")
        if counts is not None:
            c = int(counts[dim])
            if c < 1:
                raise ConfigError("each dimension needs at least one point")
            axes.append(np.array([0.5 * (lo + hi)]) if c == 1 else np.linspace(lo, hi, c))
        else:
            delta = float(mesh[dim])
            if delta <= 0.0:
                raise ConfigError("mesh sizes must be positive")
            steps = int(np.floor((hi - lo) / delta + 1e-12))
            axes.append(lo + delta * np.arange(steps + 1))
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def build_offline(
    region: list[tuple[float, float]],
    model: SystemModel,
    basis: Basis,
    sp: StatePenalty,
    rt: RobustnessTerms,
    counts: list[int] | None = None,
    mesh: list[float] | None = None,
) -> OfflineBuffer:
    """Collect the factor buffers over a grid on the operating region.

    Grid points on or outside any barrier region are skipped (they have
    no finite state cost); an entirely empty effective grid is an error.
    """
    pts = grid_points(region, counts=counts, mesh=mesh)
    if pts.shape[1] != model.n:
        raise ConfigError(f"region has {pts.shape[1]} dimensions, model needs {model.n}")
    kept, F, G, H, K, R = [], [], [], [], [], []
    for x in pts:
        try:
            k_val = state_penalty_value(sp, x)
        except ConstraintViolationError:
            continue
        dphi = basis_grad(basis, x)
        kept.append(x)
        F.append(dphi @ model.f(x))
        G.append(dphi @ model.g(x))
        H.append(dphi @ unmatched_map(model, x))
        K.append(k_val)
        R.append(rt.r_d(model, x))
    if not kept:
        raise ConfigError("no grid point lies strictly inside all barrier regions")
    return OfflineBuffer(
        states=np.array(kept),
        F=np.array(F),
        G=np.array(G),
        H=np.array(H),
        K=np.array(K),
        R=np.array(R),
        skipped=len(pts) - len(kept),
    )


def _offline_policies(
    off: OfflineBuffer, c: CriticState, ip: InputPenalty
) -> tuple[np.ndarray, np.ndarray]:
    """Greedy (u, v) at every grid point straight from the stored factors."""
    a = np.einsum("lnm,n->lm", off.G, c.W_hat)  # g' dPhi' W per point
    if ip.mode == "saturated":
        u = saturated_policy(a, ip.r_diag[None, :], ip.beta)
    else:
        u = -0.5 * (a / ip.r_diag[None, :])
    v = -(0.5 / c.rho) * np.einsum("lnr,n->lr", off.H, c.W_hat)
    return u, v


def assemble_all(
    off: OfflineBuffer, c: CriticState, ip: InputPenalty, rt: RobustnessTerms
) -> tuple[np.ndarray, np.ndarray]:
    """Regressors (P, N) and costs (P,) for the whole buffer at once."""
    u, v = _offline_policies(off, c, ip)
    Y = off.F + np.einsum("lnm,lm->ln", off.G, u) + np.einsum("lnr,lr->ln", off.H, v)
    if ip.mode == "saturated":
        w_in = np.sum(saturated_penalty_terms(u, ip.r_diag[None, :], ip.beta), axis=1)
    else:
        w_in = np.einsum("lm,m,lm->l", u, ip.r_diag, u)
    theta = off.R + rt.rho * np.sum(v * v, axis=1) + w_in + off.K
    return Y, theta


def assemble(
    off: OfflineBuffer, l: int, c: CriticState, ip: InputPenalty, rt: RobustnessTerms
) -> Sample:
    """Sample for grid point ``l`` under the current greedy policies."""
    if not 0 <= l < off.P:
        raise ContractError(f"record index {l} out of range [0, {off.P})")
    u, v = _offline_policies(off, c, ip)
    u_l, v_l = u[l], v[l]
    Y = off.F[l] + off.G[l] @ u_l + off.H[l] @ v_l
    if ip.mode == "saturated":
        w_in = float(np.sum(saturated_penalty_terms(u_l, ip.r_diag, ip.beta)))
    else:
        w_in = float(u_l @ ip.R @ u_l)
    theta = float(off.R[l] + rt.rho * (v_l @ v_l) + w_in + off.K[l])
    return Sample(Y=Y, theta=theta)


def save_offline(off: OfflineBuffer, path: str) -> None:
    """Write the buffer as versioned CSV: header lines then one row per point."""
    P, n = off.states.shape
    N = off.F.shape[1]
    m = off.G.shape[2]
    r = off.H.shape[2]
    cols = (
        [f"x{i}" for i in range(n)]
        + [f"F{i}" for i in range(N)]
        + [f"G{i}_{j}" for i in range(N) for j in range(m)]
        + [f"H{i}_{j}" for i in range(N) for j in range(r)]
        + ["K", "R"]
    )
    with open(path, "w") as fh:
        fh.write(f"# {_OFFLINE_FORMAT}\n")
        fh.write(f"# P={P} n={n} N={N} m={m} r={r} skipped={off.skipped}\n")
        fh.write(",".join(cols) + "\n")
        for idx in range(P):
            row = np.concatenate(
                [
                    off.states[idx],
                    off.F[idx],
                    off.G[idx].ravel(),
                    off.H[idx].ravel(),
                    [off.K[idx], off.R[idx]],
                ]
            )
            fh.write(",".join(repr(float(val)) for val in row) + "\n")


def load_offline(path: str) -> OfflineBuffer:
    """Read a buffer written by :func:`save_offline`."""
    with open(path) as fh:
        header = fh.readline().strip()
        if header != f"# {_OFFLINE_FORMAT}":
            raise ConfigError(f"unrecognised offline buffer header: {header!r}")
        meta = dict(
            part.split("=") for part in fh.readline().strip().lstrip("# ").split()
        )
        P, n, N = int(meta["P"]), int(meta["n"]), int(meta["N"])
        m, r = int(meta["m"]), int(meta["r"])
        fh.readline()  # column names
        data = np.loadtxt(io.StringIO(fh.read()), delimiter=",", ndmin=2)
    if data.shape != (P, n + N + N * m + N * r + 2):
        raise ConfigError(f"offline buffer data shape {data.shape} does not match header")
    o = 0
    states = data[:, o : o + n]
    o += n
    F = data[:, o : o + N]
    o += N
    G = data[:, o : o + N * m].reshape(P, N, m)
    o += N * m
    H = data[:, o : o + N * r].reshape(P, N, r)
    o += N * r
    return OfflineBuffer(
        states=states, F=F, G=G, H=H, K=data[:, o], R=data[:, o + 1],
        skipped=int(meta.get("skipped", 0)),
    )
