"""Closed-loop episode engine and the built-in experiment presets.

Each simulation step, in order: evaluate the greedy policies from the
current critic weights, form the experience sample on the disturbance-free
surrogate, feed the buffer (eigenvalue-prioritized online admission or the
averaged offline factors), advance the weight law over the step with the
sample data frozen (exact linear-ODE step, the stable limit of Euler
substepping), then RK4-step the plant under a zero-order hold on the
applied input.  CRSP presets
integrate the disturbed plant (the pseudo-control only shapes the cost and
the learning target, it is never applied), while the critic always learns
from surrogate-system samples.

Every monitored quantity is logged per step; an episode aborts with a
descriptive error if a state leaves its constraint region, the weights
diverge, or integration produces non-finite values.
"""

from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import critic as _critic
from . import penalty as _penalty
from . import replay as _replay
from . import systems as _systems
from .errors import (
    ConfigError,
    ConstraintViolationError,
    RsadpError,
    UnknownNameError,
)
from .numerics import rk4_step


@dataclass(frozen=True)
class EpisodeConfig:
    """Plain-data description of one episode; JSON round-trippable."""

    model: str
    basis_terms: tuple[tuple[int, ...], ...]
    W0: tuple[float, ...]
    Gamma: tuple[tuple[float, ...], ...]
    k_c: float
    k_e: float
    rho: float
    input_mode: str  # "quadratic" | "saturated"
    R: tuple[float, ...]  # diagonal of the input weight
    Q: tuple[tuple[float, ...], ...]
    x0: tuple[float, ...]
    h: float
    T: float
    beta: float | None = None
    barriers: tuple[_penalty.BarrierTerm, ...] = ()
    buffer_mode: str = "online"  # "online" | "offline"
    P: int | None = None
    xi: float = 1e-3
    check_interval: int = 1
    region: tuple[tuple[float, float], ...] | None = None
    counts: tuple[int, ...] | None = None
    mesh: tuple[float, ...] | None = None
    seed: int = 0
    plant: str = "auxiliary"  # "auxiliary" | "true"
    model_overrides: tuple[tuple[str, float], ...] = ()
    resample_disturbance: bool = False

    def __post_init__(self):
        if self.h <= 0.0 or self.T <= 0.0:
            raise ConfigError("step size h and duration T must be positive")
        if self.plant not in ("auxiliary", "true"):
            raise ConfigError(f"unknown plant mode '{self.plant}'")
        if self.buffer_mode not in ("online", "offline"):
            raise ConfigError(f"unknown buffer mode '{self.buffer_mode}'")
        if self.buffer_mode == "online" and (self.P is None or self.P < 1):
            raise ConfigError("online buffer needs a positive capacity P")
        if self.buffer_mode == "offline" and self.region is None:
            raise ConfigError("offline buffer needs a sampling region")


@dataclass
class RuntimeBundle:
    """Live objects built from an :class:`EpisodeConfig`."""

    model: _systems.SystemModel
    basis: _critic.Basis
    critic: _critic.CriticState
    ip: _penalty.InputPenalty
    sp: _penalty.StatePenalty
    rt: _penalty.RobustnessTerms


def build_runtime(cfg: EpisodeConfig) -> RuntimeBundle:
    model = _systems.builtin(cfg.model, dict(cfg.model_overrides) or None)
    basis = _critic.Basis(n=model.n, terms=cfg.basis_terms)
    critic = _critic.CriticState(
        basis=basis,
        W_hat=np.array(cfg.W0),
        Gamma=np.array(cfg.Gamma),
        k_c=cfg.k_c,
        k_e=cfg.k_e,
        rho=cfg.rho,
    )
    ip = _penalty.InputPenalty(mode=cfg.input_mode, R=np.diag(cfg.R), beta=cfg.beta)
    sp = _penalty.StatePenalty(Q=np.array(cfg.Q), barriers=cfg.barriers)
    rt = _penalty.RobustnessTerms(rho=cfg.rho)
    x0 = np.array(cfg.x0)
    if len(x0) != model.n:
        raise ConfigError(f"x0 has length {len(x0)}, model state dimension is {model.n}")
    _penalty.state_penalty_value(sp, x0)  # raises if x0 is not strictly inside
    return RuntimeBundle(model=model, basis=basis, critic=critic, ip=ip, sp=sp, rt=rt)


@dataclass
class TrajectoryLog:
    """Per-step record of everything plotted or monitored, plus a summary."""

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    v: np.ndarray
    W: np.ndarray
    bellman: np.ndarray
    gram_min_eig: np.ndarray
    margins: np.ndarray  # (steps, n_barriers) distance to each boundary
    equiv_margin: np.ndarray
    cost_rd: np.ndarray
    cost_pseudo: np.ndarray
    cost_input: np.ndarray
    cost_state: np.ndarray
    converged: np.ndarray
    violations: int
    convergence_time: float | None

    @property
    def final_W(self) -> np.ndarray:
        return self.W[-1]

    def column_names(self) -> list[str]:
        n, m = self.x.shape[1], self.u.shape[1]
        r, N, nb = self.v.shape[1], self.W.shape[1], self.margins.shape[1]
        return (
            ["t"]
            + [f"x{i}" for i in range(n)]
            + [f"u{j}" for j in range(m)]
            + [f"v{j}" for j in range(r)]
            + [f"W{i}" for i in range(N)]
            + ["bellman", "gram_min_eig"]
            + [f"margin{i}" for i in range(nb)]
            + ["equiv_margin", "cost_rd", "cost_pseudo", "cost_input", "cost_state"]
            + ["converged"]
        )

    def to_csv(self, path: str) -> None:
        """One row per step; columns per :meth:`column_names`."""
        table = np.column_stack(
            [
                self.t,
                self.x,
                self.u,
                self.v,
                self.W,
                self.bellman,
                self.gram_min_eig,
                self.margins,
                self.equiv_margin,
                self.cost_rd,
                self.cost_pseudo,
                self.cost_input,
                self.cost_state,
                self.converged.astype(float),
            ]
        )
        with open(path, "w") as fh:
            fh.write(",".join(self.column_names()) + "\n")
            for row in table:
                fh.write(",".join(repr(float(val)) for val in row) + "\n")

    def summary(self) -> dict:
        return {
            "final_weights": [float(w) for w in self.final_W],
            "convergence_time_s": self.convergence_time,
            "violations": int(self.violations),
            "min_equivalence_margin": float(np.min(self.equiv_margin)),
            "min_gram_eig": float(np.min(self.gram_min_eig)),
        }


def equivalence_margin(
    sp: _penalty.StatePenalty,
    rt: _penalty.RobustnessTerms,
    c: _critic.CriticState,
    model: _systems.SystemModel,
    x: np.ndarray,
) -> float:
    """Monitored slack L(x) - 2 rho v'v of the stabilization condition.

    Negative values are flagged in the log as warnings, not errors: the
    underlying sufficient condition carries an extra offset that is not
    computable from runtime data.
    """
    v = _critic.policy_v(c, model, x)
    return _penalty.state_penalty_value(sp, x) - 2.0 * rt.rho * float(v @ v)


def _convergence_time(t: np.ndarray, flags: np.ndarray) -> float | None:
    """Start of the trailing all-converged stretch, None if absent."""
    if flags.size == 0 or not flags[-1]:
        return None
    not_conv = np.flatnonzero(~flags)
    if not_conv.size == 0:
        return float(t[0])
    return float(t[not_conv[-1] + 1])


def run_episode(cfg: EpisodeConfig) -> TrajectoryLog:
    """Simulate one closed-loop learning episode; see the module docstring."""
    rtb = build_runtime(cfg)
    model, ip, sp, rt = rtb.model, rtb.ip, rtb.sp, rtb.rt
    c = rtb.critic
    r_diag = ip.r_diag
    online = cfg.buffer_mode == "online"
    steps = int(round(cfg.T / cfg.h))
    h = cfg.h

    detector = _replay.ConvergenceDetector(xi=cfg.xi, interval=cfg.check_interval)
    if online:
        buf = _replay.OnlineBuffer(cfg.P)
        off = None
    else:
        off = _replay.build_offline(
            list(cfg.region), model, rtb.basis, sp, rt,
            counts=list(cfg.counts) if cfg.counts else None,
            mesh=list(cfg.mesh) if cfg.mesh else None,
        )
        buf = None

    params = _systems.sample_disturbance(model, cfg.seed)
    param_rng = np.random.default_rng(cfg.seed) if cfg.resample_disturbance else None
    gamma_chol = np.linalg.cholesky(c.Gamma)

    x = np.array(cfg.x0, dtype=float)
    nb = len(sp.barriers)
    log_t = np.arange(steps) * h
    log_x = np.empty((steps, model.n))
    log_u = np.empty((steps, model.m))
    log_v = np.empty((steps, model.r))
    log_W = np.empty((steps, c.basis.N))
    log_bell = np.empty(steps)
    log_lam = np.empty(steps)
    log_margin = np.empty((steps, nb))
    log_eq = np.empty(steps)
    log_rd = np.empty(steps)
    log_pv = np.empty(steps)
    log_in = np.empty(steps)
    log_st = np.empty(steps)
    log_conv = np.zeros(steps, dtype=bool)

    for i in range(steps):
        t = i * h
        if param_rng is not None:
            params = _systems.DisturbanceParams(
                values=np.array(
                    [param_rng.uniform(lo, hi) for lo, hi in model.param_ranges]
                ),
                seed=cfg.seed,
            )
        # Greedy policies and the surrogate-system sample at the current state.
        dphi = _critic.basis_grad(c.basis, x)
        grad_v = dphi.T @ c.W_hat
        g_x = model.g(x)
        a = g_x.T @ grad_v
        if ip.mode == "saturated":
            u = _critic.saturated_policy(a, r_diag, ip.beta)
        else:
            u = -0.5 * (a / r_diag)
        if model.r:
            h_x = _systems.unmatched_map(model, x)
            v = -(0.5 / c.rho) * (h_x.T @ grad_v)
        else:
            h_x = None
            v = np.zeros(0)
        try:
            terms = _penalty.utility_terms(sp, ip, rt, model, x, u, v)
        except ConstraintViolationError as exc:
            exc.step = i
            raise
        dx_sur = model.f(x) + g_x @ u
        if model.r:
            dx_sur = dx_sur + h_x @ v
        sample = _critic.Sample(Y=dphi @ dx_sur, theta=terms.total)

        converged = detector.check_convergence(c.W_hat)
        if online:
            report = buf.insert(sample, converged)
            lam = report.lam_after
            c_next = _critic.integrate_weights(
                c, sample, buf.regressors(),
                np.array([s.theta for s in buf.records]),
                h, gamma_chol=gamma_chol,
            )
        else:
            Ys, thetas = _replay.assemble_all(off, c, ip, rt)
            lam = _replay._gram_min_fast(Ys)
            c_next = _critic.integrate_weights(
                c, sample, Ys, thetas, h,
                buffer_scale=1.0 / off.P, gamma_chol=gamma_chol,
            )

        log_x[i] = x
        log_u[i] = u
        log_v[i] = v
        log_W[i] = c.W_hat
        log_bell[i] = sample.theta + c.W_hat @ sample.Y
        log_lam[i] = lam
        log_margin[i] = terms.state.margins
        log_eq[i] = terms.state.total - 2.0 * rt.rho * float(v @ v)
        log_rd[i] = terms.r_d
        log_pv[i] = terms.pseudo
        log_in[i] = terms.input
        log_st[i] = terms.state.total
        log_conv[i] = converged

        # Plant step under zero-order hold of the applied quantities.
        if cfg.plant == "true" and model.r:
            d_held = model.d(x, params)
            deriv = lambda _t, xs: model.f(xs) + model.g(xs) @ u + model.k(xs) @ d_held
        else:
            deriv = lambda _t, xs: (
                model.f(xs)
                + model.g(xs) @ u
                + (_systems.unmatched_map(model, xs) @ v if model.r else 0.0)
            )
        x = rk4_step(deriv, x, t, h)
        c = c_next

    return TrajectoryLog(
        t=log_t,
        x=log_x,
        u=log_u,
        v=log_v,
        W=log_W,
        bellman=log_bell,
        gram_min_eig=log_lam,
        margins=log_margin,
        equiv_margin=log_eq,
        cost_rd=log_rd,
        cost_pseudo=log_pv,
        cost_input=log_in,
        cost_state=log_st,
        converged=log_conv,
        violations=int(np.sum(np.any(log_margin <= 0.0, axis=1))) if nb else 0,
        convergence_time=_convergence_time(log_t, log_conv),
    )


@dataclass
class EpisodeOutcome:
    """Result slot of a sweep: either a log or the error that ended the run."""

    x0: tuple[float, ...]
    log: TrajectoryLog | None = None
    error: str | None = None
    error_type: str | None = None

    @property
    def ok(self) -> bool:
        return self.log is not None


def _run_one(args: tuple[EpisodeConfig, tuple[float, ...]]) -> EpisodeOutcome:
    cfg, x0 = args
    sub = dataclasses.replace(cfg, x0=tuple(x0))
    try:
        return EpisodeOutcome(x0=tuple(x0), log=run_episode(sub))
    except RsadpError as exc:
        return EpisodeOutcome(x0=tuple(x0), error=str(exc), error_type=type(exc).__name__)


def sweep_initial_states(
    cfg: EpisodeConfig, states: list, workers: int = 1
) -> list[EpisodeOutcome]:
    """Independent episodes from several starts; errors collected per slot.

    All episodes share the full config, including the disturbance seed (one
    realization, many starts); results keep input order.
    """
    jobs = [(cfg, tuple(float(s) for s in np.atleast_1d(st))) for st in states]
    if workers <= 1 or len(jobs) <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


def _example1_common(**kw) -> dict:
    base = dict(
        model="benchmark2",
        basis_terms=_critic.STANDARD_BASES["benchmark2"],
        # Stabilizing start: the quadratic form with these coefficients is an
        # admissible initial value estimate; the zero vector destabilizes the
        # open-loop-unstable x2 channel before learning can correct it.
        W0=(1.4, 1.4, 1.4),
        k_c=1.0,
        k_e=1.0,
        rho=1.0,
        input_mode="quadratic",
        R=(1.0,),
        Q=((1.0, 0.0), (0.0, 1.0)),
        x0=(1.0, 1.0),
        h=1e-3,
        T=10.0,
        plant="auxiliary",
    )
    base.update(kw)
    return base


def _eye(n: int) -> tuple[tuple[float, ...], ...]:
    return tuple(tuple(float(v) for v in row) for row in np.eye(n))


_PENDULUM_COMMON = dict(
    model="pendulum",
    basis_terms=_critic.STANDARD_BASES["pendulum"],
    W0=(1.0,) * 6,
    Gamma=_eye(6),
    k_c=0.01,
    k_e=0.001,
    rho=0.1,
    x0=(2.0, -2.0),
    h=1e-3,
    T=40.0,
    buffer_mode="online",
    P=9,
    xi=1e-3,
    plant="true",
)


def _presets() -> dict:
    return {
        "example1_online": (
            "2-state benchmark regulation, eigenvalue-prioritized online buffer",
            EpisodeConfig(
                **_example1_common(
                    Gamma=((2.0, 0, 0), (0, 1.4, 0), (0, 0, 1.0)),
                    buffer_mode="online",
                    P=5,
                    xi=1e-3,
                )
            ),
        ),
        "example1_offline": (
            "2-state benchmark regulation, 10x10 grid factor buffer",
            EpisodeConfig(
                **_example1_common(
                    Gamma=((5.0, 0, 0), (0, 0.5, 0), (0, 0, 0.01)),
                    buffer_mode="offline",
                    region=((-2.0, 2.0), (-4.0, 4.0)),
                    counts=(10, 10),
                )
            ),
        ),
        "pendulum_crsp": (
            "disturbed pendulum, saturating input cost and state barriers",
            EpisodeConfig(
                **_PENDULUM_COMMON,
                input_mode="saturated",
                R=(1.0,),
                beta=1.5,
                Q=_eye(2),
                barriers=(_penalty.rect_abs(2.01, 0), _penalty.rect_abs(4.0, 1)),
            ),
        ),
        "pendulum_rop": (
            "disturbed pendulum, plain quadratic cost (no input/state limits)",
            EpisodeConfig(
                **_PENDULUM_COMMON,
                input_mode="quadratic",
                R=(1.0,),
                Q=_eye(2),
            ),
        ),
        "manipulator_crsp": (
            "2-DoF manipulator set-point reach inside the unit joint disk",
            EpisodeConfig(
                model="manipulator2dof",
                basis_terms=_critic.STANDARD_BASES["manipulator2dof"],
                # Position-heavy start with per-joint position/velocity cross
                # terms: the cross-to-damping ratio must beat the worst
                # disturbance slope on the joint-position channels, while the
                # quadratic form stays positive definite.
                W0=(3.0, 3.0, 1.0, 1.0, 0.0, 2.5, 0.0, 0.0, 2.5, 0.0),
                Gamma=_eye(10),
                k_c=0.01,
                k_e=0.001,
                rho=0.1,
                input_mode="saturated",
                R=(1.0, 1.0),
                beta=3.0,
                Q=_eye(4),
                barriers=(_penalty.circle(1.0, (0, 1)),),
                buffer_mode="online",
                P=12,
                xi=1e-3,
                x0=(0.9, 0.0, 0.0, 0.0),
                h=1e-3,
                T=30.0,
                plant="true",
            ),
        ),
    }


PRESET_NAMES = tuple(_presets().keys())


def preset(name: str) -> EpisodeConfig:
    """Full parameterization of one built-in experiment."""
    try:
        return _presets()[name][1]
    except KeyError:
        raise UnknownNameError(
            f"unknown preset '{name}' (choose from {PRESET_NAMES})"
        ) from None


def preset_description(name: str) -> str:
    return _presets()[name][0]


# --- JSON (de)serialization of EpisodeConfig ---------------------------------

_TOP_KEYS = {"model", "critic", "penalty", "buffer", "sim"}


def config_to_json(cfg: EpisodeConfig) -> dict:
    """Canonical JSON document for an episode configuration."""
    doc = {
        "model": {
            "name": cfg.model,
            "overrides": {k: v for k, v in cfg.model_overrides},
            "resample_disturbance": cfg.resample_disturbance,
        },
        "critic": {
            "basis": [list(t) for t in cfg.basis_terms],
            "W0": list(cfg.W0),
            "Gamma": [list(row) for row in cfg.Gamma],
            "k_c": cfg.k_c,
            "k_e": cfg.k_e,
            "rho": cfg.rho,
        },
        "penalty": {
            "input": {
                "mode": cfg.input_mode,
                "R": list(cfg.R),
                **({"beta": cfg.beta} if cfg.beta is not None else {}),
            },
            "state": {
                "Q": [list(row) for row in cfg.Q],
                "barriers": [
                    {"kind": b.kind, "indices": list(b.indices), "bound": b.bound}
                    for b in cfg.barriers
                ],
            },
        },
        "buffer": _buffer_doc(cfg),
        "sim": {
            "x0": list(cfg.x0),
            "h": cfg.h,
            "T": cfg.T,
            "seed": cfg.seed,
            "plant": cfg.plant,
        },
    }
    return doc


def _buffer_doc(cfg: EpisodeConfig) -> dict:
    if cfg.buffer_mode == "online":
        return {
            "mode": "online",
            "P": cfg.P,
            "xi": cfg.xi,
            "check_interval": cfg.check_interval,
        }
    doc = {
        "mode": "offline",
        "region": [list(iv) for iv in cfg.region],
        "xi": cfg.xi,
        "check_interval": cfg.check_interval,
    }
    if cfg.counts is not None:
        doc["counts"] = list(cfg.counts)
    if cfg.mesh is not None:
        doc["mesh"] = list(cfg.mesh)
    return doc


def _take(doc: dict, section: str, known: set) -> dict:
    sub = doc.get(section)
    if not isinstance(sub, dict):
        raise ConfigError(f"config section '{section}' missing or not an object")
    unknown = set(sub) - known
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {sorted(unknown)}")
    return sub


def config_from_json(doc: dict) -> EpisodeConfig:
    """Parse and validate a JSON config document; unknown keys are errors."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    mdl = _take(doc, "model", {"name", "overrides", "resample_disturbance"})
    cri = _take(doc, "critic", {"basis", "W0", "Gamma", "k_c", "k_e", "rho"})
    pnl = _take(doc, "penalty", {"input", "state"})
    buf = _take(
        doc, "buffer", {"mode", "P", "xi", "check_interval", "region", "counts", "mesh"}
    )
    sim = _take(doc, "sim", {"x0", "h", "T", "seed", "plant"})
    inp = pnl.get("input", {})
    sta = pnl.get("state", {})
    unknown = (set(inp) - {"mode", "R", "beta"}) | (set(sta) - {"Q", "barriers"})
    if unknown:
        raise ConfigError(f"unknown keys in 'penalty': {sorted(unknown)}")
    barriers = []
    for b in sta.get("barriers", []):
        extra = set(b) - {"kind", "indices", "bound"}
        if extra:
            raise ConfigError(f"unknown keys in barrier: {sorted(extra)}")
        barriers.append(
            _penalty.BarrierTerm(
                kind=b["kind"],
                indices=tuple(b["indices"]),
                bound=float(b.get("bound", 1.0)),
            )
        )
    try:
        return EpisodeConfig(
            model=mdl["name"],
            model_overrides=tuple(sorted((k, float(v)) for k, v in mdl.get("overrides", {}).items())),
            resample_disturbance=bool(mdl.get("resample_disturbance", False)),
            basis_terms=tuple(tuple(int(e) for e in t) for t in cri["basis"]),
            W0=tuple(float(w) for w in cri["W0"]),
            Gamma=tuple(tuple(float(v) for v in row) for row in cri["Gamma"]),
            k_c=float(cri["k_c"]),
            k_e=float(cri["k_e"]),
            rho=float(cri["rho"]),
            input_mode=inp["mode"],
            R=tuple(float(v) for v in inp["R"]),
            beta=float(inp["beta"]) if "beta" in inp else None,
            Q=tuple(tuple(float(v) for v in row) for row in sta["Q"]),
            barriers=tuple(barriers),
            buffer_mode=buf["mode"],
            P=int(buf["P"]) if buf.get("P") is not None else None,
            xi=float(buf.get("xi", 1e-3)),
            check_interval=int(buf.get("check_interval", 1)),
            region=tuple((float(lo), float(hi)) for lo, hi in buf["region"])
            if "region" in buf
            else None,
            counts=tuple(int(v) for v in buf["counts"]) if "counts" in buf else None,
            mesh=tuple(float(v) for v in buf["mesh"]) if "mesh" in buf else None,
            x0=tuple(float(v) for v in sim["x0"]),
            h=float(sim["h"]),
            T=float(sim["T"]),
            seed=int(sim.get("seed", 0)),
            plant=sim.get("plant", "auxiliary"),
        )
    except KeyError as exc:
        raise ConfigError(f"missing config key: {exc}") from None


def load_config(path: str) -> EpisodeConfig:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    return config_from_json(doc)
