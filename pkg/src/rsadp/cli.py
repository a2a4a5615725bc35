"""Command-line front end: run presets or JSON configs, build offline buffers.

Commands:
  run           simulate one episode, write trajectory.csv / summary.json /
                plots.gp into the output directory
  list          show the built-in experiment presets
  buffer-build  sample an offline factor buffer over a region and cache it

Exit codes: 0 success, 2 configuration problems, 3 constraint violation
during a run, 4 learning or integration divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import critic as _critic
from . import penalty as _penalty
from . import replay as _replay
from . import sim as _sim
from .errors import (
    ConfigError,
    ConstraintViolationError,
    IntegrationDivergedError,
    LearningDivergedError,
    RsadpError,
    UnknownNameError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONSTRAINT = 3
EXIT_DIVERGED = 4

OUT_ROOT_ENV = "RSADP_OUT_ROOT"


@dataclass
class RunManifest:
    """Validated `run` invocation: where the config comes from, what to emit."""

    preset: str | None
    config_path: str | None
    out_dir: str
    seed: int | None = None
    workers: int = 1
    emit: tuple[str, ...] = ("csv", "summary", "plot")
    dump_config: bool = False

    def __post_init__(self):
        if (self.preset is None) == (self.config_path is None):
            raise ConfigError("exactly one of --preset / --config must be given")
        unknown = set(self.emit) - {"csv", "summary", "plot"}
        if unknown:
            raise ConfigError(f"unknown emit targets: {sorted(unknown)}")

    def load(self) -> _sim.EpisodeConfig:
        cfg = (
            _sim.preset(self.preset)
            if self.preset
            else _sim.load_config(self.config_path)
        )
        if self.seed is not None:
            cfg = dataclasses.replace(cfg, seed=self.seed)
        return cfg


def _prepare_out_dir(path: str) -> str:
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise ConfigError(f"parent of output directory does not exist: {parent}")
    os.makedirs(path, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory not writable: {path}")
    return path


def _plot_script(csv_name: str, cfg: _sim.EpisodeConfig, names: list[str]) -> str:
    """gnuplot script plotting weights, states and inputs from the CSV."""
    col = {name: i + 1 for i, name in enumerate(names)}  # gnuplot is 1-based
    n = len(cfg.x0)
    N = len(cfg.W0)
    m = len(cfg.R)
    w_plots = ", ".join(
        f"'{csv_name}' using 1:{col[f'W{i}']} with lines title 'W{i}'" for i in range(N)
    )
    x_plots = ", ".join(
        f"'{csv_name}' using 1:{col[f'x{i}']} with lines title 'x{i}'" for i in range(n)
    )
    u_plots = ", ".join(
        f"'{csv_name}' using 1:{col[f'u{j}']} with lines title 'u{j}'" for j in range(m)
    )
    return "\n".join(
        [
            "set datafile separator ','",
            "set key outside",
            "set xlabel 't [s]'",
            "set terminal pngcairo size 900,600",
            "set output 'weights.png'",
            f"plot {w_plots}",
            "set output 'states.png'",
            f"plot {x_plots}",
            "set output 'inputs.png'",
            f"plot {u_plots}",
            "",
        ]
    )


def cmd_run(manifest: RunManifest) -> int:
    """Execute one episode per the manifest; write the requested artifacts."""
    cfg = manifest.load()
    out = _prepare_out_dir(manifest.out_dir)
    if manifest.dump_config:
        with open(os.path.join(out, "config.json"), "w") as fh:
            json.dump(_sim.config_to_json(cfg), fh, indent=2)
    log = _sim.run_episode(cfg)
    if "csv" in manifest.emit:
        log.to_csv(os.path.join(out, "trajectory.csv"))
    if "summary" in manifest.emit:
        with open(os.path.join(out, "summary.json"), "w") as fh:
            json.dump(log.summary(), fh, indent=2)
    if "plot" in manifest.emit:
        with open(os.path.join(out, "plots.gp"), "w") as fh:
            fh.write(_plot_script("trajectory.csv", cfg, log.column_names()))
    conv = log.convergence_time
    print(
        f"steps={len(log.t)} violations={log.violations} "
        f"convergence_time={'%.3f' % conv if conv is not None else 'none'} "
        f"final_W={np.array2string(log.final_W, precision=4)}"
    )
    return EXIT_OK


def cmd_list() -> int:
    """Print the preset table."""
    rows = [(name, _sim.preset_description(name)) for name in _sim.PRESET_NAMES]
    width = max(len(name) for name, _ in rows)
    for name, desc in rows:
        print(f"{name:<{width}}  {desc}")
    return EXIT_OK


def cmd_buffer_build(
    model_name: str,
    region: list,
    out_path: str,
    counts: list | None = None,
    mesh: list | None = None,
    basis_terms: list | None = None,
) -> int:
    """Build and cache an offline factor buffer; report its size and richness."""
    model = _systems_builtin(model_name)
    terms = (
        tuple(tuple(int(e) for e in t) for t in basis_terms)
        if basis_terms
        else _critic.STANDARD_BASES[model_name]
    )
    basis = _critic.Basis(n=model.n, terms=terms)
    sp = _penalty.StatePenalty(Q=np.eye(model.n))
    rt = _penalty.RobustnessTerms(rho=1.0)
    off = _replay.build_offline(
        [tuple(iv) for iv in region], model, basis, sp, rt,
        counts=counts, mesh=mesh,
    )
    _replay.save_offline(off, out_path)
    # Gram richness of the zero-policy regressors (Y_l = F_l).
    gram = off.F.T @ off.F
    lam = _replay.sym_eig_min(0.5 * (gram + gram.T))
    print(f"P={off.P} skipped={off.skipped} lambda_min={lam:.6g} -> {out_path}")
    return EXIT_OK


def _systems_builtin(name: str):
    from . import systems

    return systems.builtin(name)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rsadp", description="Constrained robust learning-control simulator"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="simulate one episode")
    run_p.add_argument("--preset", help="built-in experiment name (see `list`)")
    run_p.add_argument("--config", help="path to a JSON episode config")
    run_p.add_argument(
        "--out",
        default=None,
        help=f"output directory (default: ${OUT_ROOT_ENV} or ./out)",
    )
    run_p.add_argument("--seed", type=int, default=None, help="override the seed")
    run_p.add_argument("--workers", type=int, default=1)
    run_p.add_argument(
        "--emit", default="csv,summary,plot", help="comma list of csv,summary,plot"
    )
    run_p.add_argument(
        "--dump-config", action="store_true", help="also write config.json"
    )

    sub.add_parser("list", help="list the built-in presets")

    buf_p = sub.add_parser("buffer-build", help="cache an offline factor buffer")
    buf_p.add_argument("--model", required=True)
    buf_p.add_argument("--region", required=True, help="JSON [[lo,hi],...]")
    buf_p.add_argument("--counts", help="comma list of per-dimension point counts")
    buf_p.add_argument("--mesh", help="comma list of per-dimension mesh sizes")
    buf_p.add_argument("--basis", help="JSON list of exponent tuples (optional)")
    buf_p.add_argument("--out", required=True, help="output file path")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "list":
            return cmd_list()
        if args.command == "run":
            out = args.out or os.environ.get(OUT_ROOT_ENV) or "out"
            manifest = RunManifest(
                preset=args.preset,
                config_path=args.config,
                out_dir=out,
                seed=args.seed,
                workers=args.workers,
                emit=tuple(s for s in args.emit.split(",") if s),
                dump_config=args.dump_config,
            )
            return cmd_run(manifest)
        if args.command == "buffer-build":
            region = json.loads(args.region)
            counts = [int(c) for c in args.counts.split(",")] if args.counts else None
            mesh = [float(v) for v in args.mesh.split(",")] if args.mesh else None
            basis = json.loads(args.basis) if args.basis else None
            return cmd_buffer_build(
                args.model, region, args.out, counts=counts, mesh=mesh,
                basis_terms=basis,
            )
        raise ConfigError(f"unknown command {args.command}")
    except (ConfigError, UnknownNameError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConstraintViolationError as exc:
        print(f"constraint violation: {exc}", file=sys.stderr)
        return EXIT_CONSTRAINT
    except (LearningDivergedError, IntegrationDivergedError) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except RsadpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
