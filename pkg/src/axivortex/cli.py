"""Batch entry point.

    python3 -m axivortex {validate,solve,simulate,oracle,report}
        [--config PATH] [--out DIR] [--seed N] [--atoms PATH.csv]

Exit codes: 0 success, 1 oracle check failed, 2 invalid config or failed
assumption, 3 dual solver did not converge, 4 theorem precondition or
support bound violated.  VORTEX_LOG sets the log level (default WARNING).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ORACLE_SIGMA, RunConfig, load_config, parse_config, random_sigma
from .core import ConfigError, validate_assumptions
from .dual import SolverError, solve_dual
from .dynamics import ModelBreakdown, PreconditionError, SupportBoundError, simulate
from .measure import MeasureError, ParticleMeasure
from .oracle import run_oracle_suite
from .reconstruction import meridional_vw, reconstruct

log = logging.getLogger("axivortex")

EXIT_OK, EXIT_ORACLE, EXIT_CONFIG, EXIT_SOLVER, EXIT_BOUND = 0, 1, 2, 3, 4
SERIES_KEYS = ("t", "J", "K", "m2", "gap", "mass", "support_radius", "w1_step",
               "boundary_residual")


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


class Run:
    """Output directory bookkeeping: artifact list and per-phase wall clock."""

    def __init__(self, args, rc: RunConfig | None):
        self.args = args
        self.rc = rc
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts: list[str] = []
        self.timings: dict[str, float] = {}

    def path(self, name: str) -> Path:
        if name not in self.artifacts:
            self.artifacts.append(name)
        return self.out / name

    def phase(self, name: str):
        run = self

        class _Timer:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                run.timings[name] = run.timings.get(name, 0.0) + time.perf_counter() - self.t
                return False

        return _Timer()

    def manifest(self, status: int) -> None:
        m = {"command": self.args.command, "version": __version__, "seed": self.args.seed,
             "config_path": self.args.config, "atoms_path": self.args.atoms,
             "config": self.rc.raw if self.rc else {}, "artifacts": sorted(self.artifacts),
             "exit_code": status, "wall_clock_s": self.timings}
        write_json(self.out / "manifest.json", m)


def _load(args) -> RunConfig:
    return load_config(args.config) if args.config else parse_config("")


def _sigma(args, rc: RunConfig) -> ParticleMeasure:
    if args.atoms:
        return ParticleMeasure.from_csv(args.atoms)
    return random_sigma(rc.sigma, args.seed)


def _write_fields(run: Run, state, k: int) -> None:
    f = reconstruct(state, n_r=run.rc.fields_n_r, n_z=run.rc.fields_n_z)
    f.to_csv(run.path(f"fields_t{k}.csv"))


def _write_psi(path, sigma, psi) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "upsilon", "zed", "psi"])
        for i, ((u, z), p) in enumerate(zip(sigma.atoms, psi)):
            w.writerow([i, repr(float(u)), repr(float(z)), repr(float(p))])


def cmd_validate(run: Run) -> int:
    rc = run.rc
    with run.phase("validate"):
        rep = validate_assumptions(rc.model, rc.ambient, rc.forcing)
    out = {"passed": rep.passed, "failures": rep.failures, "checks": rep.to_dict(),
           "theorem_precondition": rc.model.theorem_precondition()}
    write_json(run.path("assumptions.json"), out)
    for c in rep.checks:
        print(f"{c.name:14s} {'pass' if c.passed else 'FAIL'}  margin {c.margin:.6g}")
    print(f"theorem precondition exp(4MT)(4 l0 + 1) < l + 1: {rc.model.theorem_precondition()}")
    return EXIT_OK if rep.passed else EXIT_CONFIG


def cmd_solve(run: Run) -> int:
    rc = run.rc
    sigma = _sigma(run.args, rc)
    sigma.to_csv(run.path("particles.csv"))
    status = EXIT_OK
    with run.phase("solve"):
        try:
            state, rep = solve_dual(sigma, rc.model, rc.ambient, rc.solver)
        except SolverError as exc:
            log.error("%s", exc)
            state, rep, status = exc.state, exc.report, EXIT_SOLVER
    out = rep.to_dict() if rep is not None else {"converged": False}
    if rep is not None:
        out["max_mass_error"] = rep.max_mass_error
    write_json(run.path("solve_report.json"), out)
    if state is not None:
        state.boundary.to_csv(run.path("boundary.csv"), rc.model)
        _write_psi(run.path("psi.csv"), sigma, state.psi)
        if status == EXIT_OK:
            with run.phase("fields"):
                _write_fields(run, state, 0)
    print(f"converged={out.get('converged')} gap={out.get('gap')} "
          f"boundary_residual={out.get('boundary_residual')}")
    return status


def cmd_simulate(run: Run) -> int:
    rc = run.rc
    sigma = _sigma(run.args, rc)
    status = EXIT_OK
    traj = None
    with run.phase("simulate"):
        try:
            traj = simulate(sigma, rc.model, rc.ambient, rc.forcing, rc.solver)
        except PreconditionError as exc:
            log.error("precondition: %s", exc)
            print(f"precondition violated: {exc}")
            return EXIT_BOUND
        except (SupportBoundError, ModelBreakdown) as exc:
            log.error("%s", exc)
            traj, status = getattr(exc, "trajectory", None), EXIT_BOUND
        except SolverError as exc:
            log.error("%s", exc)
            traj, status = getattr(exc, "trajectory", None), EXIT_SOLVER
    if traj is None:
        return status
    for p in traj.write(run.out):
        run.path(p.name)
    with run.phase("fields"):
        for k, st in enumerate(traj.states):
            _write_fields(run, st, k)
            if rc.meridional and k + 1 < len(traj.states):
                r, z, v, w = meridional_vw(traj, k)
                with open(run.path(f"meridional_t{k}.csv"), "w", newline="") as fh:
                    wr = csv.writer(fh, lineterminator="\n")
                    wr.writerow(["r", "z", "v", "w"])
                    for row in zip(r, z, v, w):
                        wr.writerow([repr(float(x)) for x in row])
    print(f"steps={len(traj) - 1} final support radius="
          f"{traj.diagnostics[-1]['support_radius']:.6g} exit={status}")
    return status


def cmd_oracle(run: Run) -> int:
    rc = run.rc
    if run.args.atoms:
        sigma = ParticleMeasure.from_csv(run.args.atoms)
    else:
        sigma = random_sigma(ORACLE_SIGMA, run.args.seed)
    sigma.to_csv(run.path("oracle_particles.csv"))
    with run.phase("oracle"):
        try:
            res = run_oracle_suite(sigma, rc.model, rc.ambient, seed=run.args.seed, opts=rc.solver)
        except SolverError as exc:
            log.error("%s", exc)
            return EXIT_SOLVER
    write_json(run.path("oracle.json"), res)
    for c in res["checks"]:
        print(f"{c['name']:22s} {'pass' if c['passed'] else 'FAIL'}  "
              f"value {c['value']:.3e}  tol {c['tol']:.1e}")
    return EXIT_OK if res["passed"] else EXIT_ORACLE


def cmd_report(run: Run) -> int:
    src = run.out / "diagnostics.json"
    if not src.is_file():
        raise ConfigError(f"{src} not found; run simulate first")
    with open(src) as fh:
        diags = json.load(fh)
    with open(run.path("series.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_KEYS)
        for d in diags:
            w.writerow(["" if d.get(k) is None else repr(float(d[k])) for k in SERIES_KEYS])

    def col(key):
        return np.array([d[key] for d in diags if d.get(key) is not None], dtype=float)

    lines = [f"steps: {len(diags) - 1}", f"final time: {diags[-1]['t']:.6g}"]
    for key, how in (("gap", "max abs"), ("boundary_residual", "max"),
                     ("support_radius", "max"), ("w1_step", "max"), ("mass", "max dev from 1")):
        v = col(key)
        if not len(v):
            continue
        if how == "max abs":
            val = np.max(np.abs(v))
        elif how == "max dev from 1":
            val = np.max(np.abs(v - 1.0))
        else:
            val = np.max(v)
        lines.append(f"{key} ({how}): {val:.6e}")
    J = col("J")
    if len(J):
        lines.append(f"J range: [{J.min():.10g}, {J.max():.10g}]")
    text = "\n".join(lines) + "\n"
    with open(run.path("summary.txt"), "w") as fh:
        fh.write(text)
    print(text, end="")
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "solve": cmd_solve, "simulate": cmd_simulate,
            "oracle": cmd_oracle, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="axivortex", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="INI run configuration (defaults when omitted)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=0, help="seed of the random initial atoms")
    p.add_argument("--atoms", help="CSV of atoms (i,upsilon,zed,weight) instead of random ones")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def run_cli(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = os.environ.get("VORTEX_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed < 0 or args.seed >= 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    rc = None
    try:
        rc = None if args.command == "report" else _load(args)
        run = Run(args, rc)
        status = COMMANDS[args.command](run)
    except (ConfigError, MeasureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_CONFIG
        if rc is None:
            return status
        run = Run(args, rc)
    run.manifest(status)
    return status


def main() -> None:
    sys.exit(run_cli())
