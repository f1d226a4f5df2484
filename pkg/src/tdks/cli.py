"""Command-line front end: ``tdks solve | verify | study | reference | presets``.

Exit codes: 0 success, 2 invalid configuration or artifact mismatch, 3 solver
failure, 4 a mandatory check (energy estimates, norm conservation) failed.
``--config`` takes an INI file or the name of a bundled preset. The worker
count of studies comes from the ``TDKS_WORKERS`` environment variable.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .fixedpoint import PicardError, ScheduleError, SolveError, check_pieces, estimate_checker, solve_regularized, solve_tdks
from .galerkin import IntegrationError, ReferenceConvergenceError, Trajectory, assemble, integrate_reference
from .io import read_json_file, read_snapshot_series, write_json, write_snapshot, write_snapshot_series, write_trajectory_csv
from .potentials import XcEvaluationError, measure_constants
from .presets import PRESETS, preset, preset_names
from .studies import STUDIES, run_study

log = logging.getLogger("tdks")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4
CONSERVATION_TOL = 1e-8
SOLVER_ERRORS = (SolveError, PicardError, ScheduleError, IntegrationError, ReferenceConvergenceError, XcEvaluationError, FloatingPointError)


class UsageError(Exception):
    """Bad input files or flags; maps to exit code 2."""


# ---------------------------------------------------------------------------
# configuration


def load_config(spec: str) -> RunConfig:
    path = Path(spec)
    if path.is_file():
        return RunConfig.from_file(path)
    if spec in PRESETS:
        return preset(spec)
    raise ConfigError(f"config {spec!r} is neither a file nor a preset ({', '.join(preset_names())})")


def apply_flags(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "mode", None):
        cfg = cfg.override("fixedpoint", "mode", args.mode)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.override("cli", "seed", args.seed)
    if getattr(args, "eps", None) is not None:
        cfg = cfg.override("cli", "epsilon", args.eps)
    return cfg


def _out_dir(cfg: RunConfig, args) -> Path:
    out = Path(args.out or cfg.values["cli"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _workers() -> int:
    text = os.environ.get("TDKS_WORKERS", "1")
    try:
        n = int(text)
    except ValueError:
        raise ConfigError(f"TDKS_WORKERS must be an integer, got {text!r}") from None
    if n < 1:
        raise ConfigError("TDKS_WORKERS must be >= 1")
    return n


def _lemma(cfg: RunConfig, problem):
    eps = cfg.epsilon
    if eps is None:
        return None
    return cfg.lemma(problem.domain, problem.rough_psi0, [eps])


def _with_measured_lipschitz(problem):
    if problem.lipschitz is not None:
        return problem
    lip = measure_constants(problem.domain, problem.m, problem.nonlinearity, trials=problem.lipschitz_trials, seed=problem.seed)
    return replace(problem, lipschitz=lip)


# ---------------------------------------------------------------------------
# commands


def conservation(traj: Trajectory, applicable: bool = True) -> dict:
    """Norm drift along the trajectory.

    The smoothed rough xc term is not a real multiplier of Psi, so the
    regularized problem with that term does not conserve the norm; the
    check is then reported but not mandatory.
    """
    l2 = traj.norm_series()["l2"]
    drift = float(np.max(np.abs(l2 - l2[0])))
    ok = drift <= CONSERVATION_TOL
    return {"initial_norm": float(l2[0]), "max_norm_drift": drift, "tolerance": CONSERVATION_TOL, "applicable": applicable, "passed": ok or not applicable}


def cmd_solve(args) -> int:
    cfg = apply_flags(load_config(args.config), args)
    problem = _with_measured_lipschitz(cfg.problem())
    lemma = _lemma(cfg, problem)
    out = _out_dir(cfg, args)
    digest = cfg.hash
    meta = {"config_hash": digest}
    try:
        report = solve_tdks(problem) if cfg.epsilon is None else solve_regularized(problem, cfg.epsilon, lemma)
    except SolveError as exc:
        payload = {"config_hash": digest, "error": str(exc)}
        if exc.report is not None:
            payload["partial"] = exc.report.as_dict()
        write_json(out / "solve_report.json", payload)
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    traj = report.trajectory
    (out / "config.ini").write_text(cfg.to_ini(absolute_paths=True))
    write_snapshot_series(out / "trajectory.bin", traj.domain, traj.times, traj.coeffs)
    write_json(
        out / "trajectory.json",
        {"config_hash": digest, "epsilon": cfg.epsilon, "mode": report.mode, "nodes": [i["nodes"] for i in report.intervals], "boundaries": [[i["start"], i["end"]] for i in report.intervals]},
    )
    write_trajectory_csv(out / "trajectory.csv", traj.times, traj.coeffs, meta)
    write_snapshot(out / "endpoint.bin", traj.endpoint)
    cons = conservation(traj, applicable=cfg.epsilon is None or not problem.nonlinearity.rough_xc.active)
    payload = {"config_hash": digest, "conservation": cons, **report.as_dict()}
    write_json(out / "solve_report.json", payload)
    if report.estimates is not None:
        report.estimates.write_csv(out / "estimates.csv", meta)
        write_json(out / "estimate_report.json", {"config_hash": digest, **report.estimates.as_dict()})
    ok = report.estimates_passed and cons["passed"]
    print(f"solve: {len(report.intervals)} subinterval(s), estimates {'pass' if report.estimates_passed else 'FAIL'}, norm drift {cons['max_norm_drift']:.2e}, out={out}")
    if report.estimates is not None and not report.estimates_passed:
        for row in report.estimates.failures()[:5]:
            log.error("estimate %s violated at t=%.6g: %.6g > %.6g", row.estimate, row.time, row.observed, row.bound)
    if cons["max_norm_drift"] > CONSERVATION_TOL:
        (log.error if cons["applicable"] else log.info)("norm drift %.3g exceeds %.1g", cons["max_norm_drift"], CONSERVATION_TOL)
    return EXIT_OK if ok else EXIT_CHECK


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def cmd_verify(args) -> int:
    cfg = apply_flags(load_config(args.config), args)
    path = Path(args.trajectory)
    try:
        side = read_json_file(_sidecar(path))
        domain, times, coeffs = read_snapshot_series(path)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read trajectory {path}: {exc}") from exc
    if side.get("config_hash") != cfg.hash:
        raise UsageError(f"config hash mismatch: trajectory {side.get('config_hash')!r}, config {cfg.hash!r}")
    problem = _with_measured_lipschitz(cfg.problem())
    if domain != problem.domain or coeffs.shape[1] != problem.m:
        raise UsageError("trajectory domain or order differs from the configuration")
    nodes = side.get("nodes") or [[0, times.size - 1]]
    if nodes[-1][1] != times.size - 1 or nodes[0][0] != 0:
        raise UsageError("subinterval nodes do not match the trajectory length")
    traj = Trajectory(domain, times, coeffs)
    checker = estimate_checker(problem, cfg.epsilon, _lemma(cfg, problem), problem.lipschitz)
    report = check_pieces(traj, nodes, checker)
    out = Path(args.out) if args.out else path.parent
    out.mkdir(parents=True, exist_ok=True)
    meta = {"config_hash": cfg.hash}
    report.write_csv(out / "estimates_verify.csv", meta)
    write_json(out / "estimate_report_verify.json", {"config_hash": cfg.hash, **report.as_dict()})
    print(f"verify: {len(report.rows)} checks, {'pass' if report.passed else 'FAIL'}")
    for row in report.failures()[:5]:
        log.error("estimate %s violated at t=%.6g: %.6g > %.6g", row.estimate, row.time, row.observed, row.bound)
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_study(args) -> int:
    cfg = apply_flags(load_config(args.config), args)
    out = _out_dir(cfg, args)
    result = run_study(args.kind, cfg, workers=_workers())
    table, meta = result.write(out, cfg.hash)
    print(f"study {args.kind}: {len(result.rows)} rows -> {table}")
    for k, v in result.summary.items():
        if not isinstance(v, (list, dict)):
            print(f"  {k}: {v}")
    return EXIT_OK


def cmd_reference(args) -> int:
    """Endpoint of the splitting reference integrator at dt / ``--factor``."""
    cfg = apply_flags(load_config(args.config), args)
    if cfg.epsilon is not None:
        raise ConfigError("the reference integrator runs the unregularized problem; drop cli.epsilon")
    problem = cfg.problem()
    out = _out_dir(cfg, args)
    system = assemble(problem.domain, problem.m, problem.potentials, horizon=problem.T)
    dt_ref = problem.dt / args.factor
    traj = integrate_reference(system, problem.nonlinearity, problem.psi0, (0.0, problem.T), dt_ref)
    write_snapshot(out / "reference_endpoint.bin", traj.endpoint)
    write_json(out / "reference.json", {"config_hash": cfg.hash, "dt_ref": dt_ref, "T": problem.T})
    print(f"reference: dt_ref={dt_ref:.3g}, endpoint -> {out / 'reference_endpoint.bin'}")
    return EXIT_OK


def cmd_presets(args) -> int:
    if args.name:
        print(load_config(args.name).to_ini())
    else:
        for name in preset_names():
            print(name)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tdks", description="Spectral Galerkin solver for the time-dependent Kohn-Sham equations.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", required=True, help="INI file or preset name")
        if out:
            sp.add_argument("--out", help="output directory (default: cli.out of the config)")
        sp.add_argument("--mode", choices=("certified", "practical"))
        sp.add_argument("--seed", type=int)
        sp.add_argument("--eps", type=float, help="mollifier width; runs the regularized problem")

    sp = sub.add_parser("solve", help="solve and check the a priori estimates")
    common(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("verify", help="re-run the estimate checks on a stored trajectory")
    sp.add_argument("trajectory", help="trajectory.bin written by solve")
    common(sp)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("study", help="convergence and certification studies")
    sp.add_argument("kind", choices=sorted(STUDIES))
    common(sp)
    sp.set_defaults(func=cmd_study)

    sp = sub.add_parser("reference", help="endpoint of the splitting reference integrator")
    common(sp)
    sp.add_argument("--factor", type=int, default=64, help="dt_ref = dt / factor")
    sp.set_defaults(func=cmd_reference)

    sp = sub.add_parser("presets", help="list bundled presets or print one")
    sp.add_argument("name", nargs="?")
    sp.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
