"""Convergence and certification studies driven by a :class:`~tdks.config.RunConfig`.

Each study returns a :class:`StudyResult`: a table (one row per ladder
entry) plus a summary of derived quantities and pass/fail checks. Ladder
entries are independent jobs; ``workers > 1`` runs them in separate
processes, which does not change any number.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .config import RunConfig
from .energy import constants
from .fixedpoint import (
    BallSpec,
    TDKSProblem,
    apply_A,
    certified_length,
    contraction_factor,
    covering_schedule,
    picard_solve,
    solve_regularized,
    solve_tdks,
)
from .galerkin import Trajectory, assemble, time_lattice
from .io import write_json
from .potentials import (
    MollifierSpec,
    lipschitz_probe,
    measure_constants,
    mollifier_norms,
    mollify,
    pair_sampler,
    probe_quotient,
    random_field,
)
from .spectral import SpectralField, grid_norms

__all__ = ["StudyResult", "STUDIES", "run_study", "modes_study", "timestep_study", "epsilon_study", "lipschitz_study", "schedule_study", "contraction_study"]


@dataclass
class StudyResult:
    kind: str
    columns: list
    rows: list
    summary: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v for k, v in self.summary.items() if k.endswith("_ok"))

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def write(self, out_dir, config_hash: str = "") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        table = out / f"study_{self.kind}.csv"
        with open(table, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([_cell(r.get(c)) for c in self.columns])
        meta = out / f"study_{self.kind}.json"
        write_json(meta, {"kind": self.kind, "config_hash": config_hash, "passed": self.passed, "summary": self.summary})
        return table, meta


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return v


def _map(func: Callable, items: list, workers: int = 1) -> list:
    if workers <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(func, items))


def _slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def _with_lipschitz(cfg: RunConfig, problem: TDKSProblem) -> TDKSProblem:
    lip = problem.lipschitz or measure_constants(problem.domain, problem.m, problem.nonlinearity, trials=problem.lipschitz_trials, seed=problem.seed)
    return replace(problem, lipschitz=lip)


# ---------------------------------------------------------------------------
# modes


def _modes_job(args):
    cfg, m = args
    prob = replace(cfg.override("spectral", "m", m).problem(), check=False)
    return solve_tdks(prob).trajectory.endpoint


def modes_study(cfg: RunConfig, workers: int = 1) -> StudyResult:
    """Endpoint L2 error of the m-ladder against a high-order run (same dt)."""
    ladder = sorted(cfg.values["cli"]["study_m"])
    m_ref = cfg.values["cli"]["study_m_ref"] or 4 * ladder[-1]
    ends = _map(_modes_job, [(cfg, m) for m in ladder + [m_ref]], workers)
    ref = ends[-1]
    rows = []
    for m, end in zip(ladder, ends[:-1]):
        err = float(np.linalg.norm(end.pad(m_ref).coeffs - ref.coeffs))
        rows.append({"m": m, "m_ref": m_ref, "error_l2": err})
    for prev, row in zip(rows, rows[1:]):
        row["ratio"] = prev["error_l2"] / row["error_l2"] if row["error_l2"] > 0 else math.inf
    ratios = [r["ratio"] for r in rows[1:]]
    summary = {"m_ref": m_ref, "min_ratio": min(ratios) if ratios else None}
    summary["spectral_decay_ok"] = bool(ratios) and min(ratios) >= 10.0
    return StudyResult("modes", ["m", "m_ref", "error_l2", "ratio"], rows, summary)


# ---------------------------------------------------------------------------
# timestep


def _breakpoint_free_horizon(cfg: RunConfig) -> float:
    if cfg.values["cli"]["study_T"] is not None:
        return cfg.values["cli"]["study_T"]
    bps = cfg.potentials().breakpoints
    inner = [b for b in bps if 0 < b < cfg.T]
    return min(inner) if inner else cfg.T


def _timestep_job(args):
    problem, dt = args
    return solve_tdks(replace(problem, dt=dt, check=False)).trajectory.endpoint


def timestep_study(cfg: RunConfig, workers: int = 1) -> StudyResult:
    """Endpoint error of the dt-ladder on a breakpoint-free horizon and the fitted order."""
    T = _breakpoint_free_horizon(cfg)
    ladder = sorted(cfg.values["cli"]["study_dt"] or [cfg.dt * f for f in (8, 4, 2, 1)], reverse=True)
    dt_ref = ladder[-1] / 16
    base = _with_lipschitz(cfg, replace(cfg.problem(), T=T))
    ends = _map(_timestep_job, [(base, dt) for dt in ladder + [dt_ref]], workers)
    ref = ends[-1]
    rows = [{"dt": dt, "error_l2": float(np.linalg.norm(e.coeffs - ref.coeffs))} for dt, e in zip(ladder, ends[:-1])]
    for prev, row in zip(rows, rows[1:]):
        row["order"] = math.log(prev["error_l2"] / row["error_l2"]) / math.log(prev["dt"] / row["dt"])
    slope = _slope([r["dt"] for r in rows], [r["error_l2"] for r in rows])
    summary = {"horizon": T, "dt_ref": dt_ref, "slope": slope, "order_ok": abs(slope - 2.0) <= 0.2}
    return StudyResult("timestep", ["dt", "error_l2", "order"], rows, summary)


# ---------------------------------------------------------------------------
# epsilon


def _epsilon_job(args):
    problem, eps, lemma = args
    return solve_regularized(problem, eps, lemma)


def epsilon_study(cfg: RunConfig, workers: int = 1) -> StudyResult:
    """Regularized solves along the epsilon ladder: bounds, smoothing laws and Cauchy behavior."""
    ladder = sorted(cfg.values["cli"]["study_eps"], reverse=True)
    problem = _with_lipschitz(cfg, cfg.problem())
    dom = problem.domain
    rough = problem.rough_psi0
    lemma = cfg.lemma(dom, rough, ladder)
    reports = _map(_epsilon_job, [(problem, eps, lemma) for eps in ladder], workers)
    base = grid_norms(rough, dom)
    rows = []
    for eps, rep in zip(ladder, reports):
        spec = MollifierSpec(eps, dom.dim)
        l1, g1 = mollifier_norms(spec)
        smoothed = mollify(rough, spec, dom, "odd")
        sm = grid_norms(smoothed, dom)
        nb = rep.extras["no_eps_bounds"]
        rows.append(
            {
                "epsilon": eps,
                "max_l2": nb["max_l2"],
                "max_grad": nb["max_grad"],
                "max_lap": nb["max_lap"],
                "C_eps": rep.extras["constants"]["C_eps"],
                "phi1_l1": l1,
                "grad_phi_l1": g1,
                "smoothing_error": float(grid_norms(smoothed - rough, dom).l2),
                "lemma_l2_ok": sm.l2 <= lemma["C0"] * l1 * base.l2 * (1 + 1e-12),
                "lemma_grad_ok": sm.grad <= lemma["C1"] * l1 * base.grad * (1 + 1e-12),
                "lemma_lap_ok": sm.lap <= lemma["C2"] * g1 * base.h1 * (1 + 1e-12),
                "estimates_passed": rep.estimates_passed,
            }
        )
    for i in range(len(rows) - 1):
        rows[i + 1]["y_difference"] = reports[i].trajectory.time_difference(reports[i + 1].trajectory, "l2")
    spread = lambda key: (max(r[key] for r in rows) - min(r[key] for r in rows)) / min(r[key] for r in rows)
    ydiff = [r["y_difference"] for r in rows[1:]]
    grad_ratios = [rows[i + 1]["grad_phi_l1"] / rows[i]["grad_phi_l1"] for i in range(len(rows) - 1) if abs(ladder[i] / ladder[i + 1] - 2.0) < 1e-12]
    smoothing = [r["smoothing_error"] for r in rows]
    c_eps = [r["C_eps"] for r in rows]
    summary = {
        "lemma": lemma,
        "max_l2_variation": spread("max_l2"),
        "max_grad_variation": spread("max_grad"),
        "grad_phi_ratios": grad_ratios,
        "eps_independent_ok": spread("max_l2") <= 0.05 and spread("max_grad") <= 0.05,
        "C_eps_growth_ok": all(b > a for a, b in zip(c_eps, c_eps[1:])),
        "cauchy_ok": all(b < a for a, b in zip(ydiff, ydiff[1:])),
        "grad_phi_scaling_ok": all(abs(r - 2.0) <= 1e-6 for r in grad_ratios),
        "smoothing_monotone_ok": all(b < a for a, b in zip(smoothing, smoothing[1:])),
        "lemma_ok": all(r["lemma_l2_ok"] and r["lemma_grad_ok"] and r["lemma_lap_ok"] for r in rows),
        "estimates_ok": all(r["estimates_passed"] for r in rows),
    }
    cols = ["epsilon", "max_l2", "max_grad", "max_lap", "C_eps", "phi1_l1", "grad_phi_l1", "smoothing_error", "y_difference", "lemma_l2_ok", "lemma_grad_ok", "lemma_lap_ok", "estimates_passed"]
    return StudyResult("epsilon", cols, rows, summary)


# ---------------------------------------------------------------------------
# lipschitz

PROBED = ("lipschitz1", "lipschitz_h2", "hartree_gradient")


def phase_variation(inequality: str, domain, m: int, nonlinearity, pairs: int = 20, seed: int = 0) -> float:
    """Largest relative change of a quotient under a joint global phase rotation of the pair."""
    rng = np.random.default_rng(seed)
    draw = pair_sampler(domain, m)
    worst = 0.0
    for _ in range(pairs):
        phi, lam = draw(rng)
        rot = np.exp(1j * rng.uniform(0, 2 * math.pi))
        q0 = probe_quotient(inequality, phi, lam, nonlinearity)
        q1 = probe_quotient(inequality, phi * rot, lam * rot, nonlinearity)
        if q0 is None or q0 == 0:
            continue
        worst = max(worst, abs(q1 - q0) / abs(q0))
    return worst


def lipschitz_study(cfg: RunConfig, workers: int = 1) -> StudyResult:
    """Empirical constants of the nonlinear estimates with the stabilization check."""
    problem = cfg.problem()
    dom, m, nl = problem.domain, problem.m, problem.nonlinearity
    trials = cfg.values["cli"]["study_trials"]
    seed = cfg.values["cli"]["seed"]
    sampler = pair_sampler(dom, m)
    probed = list(PROBED)
    if nl.xc.active:
        probed += ["xc_l2", "xc_h2"]
    if nl.rough_xc.active:
        probed += ["rough_xc_l2", "rough_xc_h1"]
    rows = []
    for ineq in probed:
        rep = lipschitz_probe(ineq, sampler, trials, nl, seed=seed)
        row = rep.as_dict()
        row["stabilized"] = rep.stabilized()
        row["phase_variation"] = phase_variation(ineq, dom, m, nl, seed=seed)
        rows.append(row)
    summary = {
        "trials": trials,
        "stabilized_ok": all(r["stabilized"] for r in rows if r["inequality"] in PROBED),
        "phase_ok": all(r["phase_variation"] <= 1e-10 for r in rows),
        "max_phase_variation": max(r["phase_variation"] for r in rows),
    }
    cols = ["inequality", "constant", "trials", "skipped", "max", "mean", "stabilized", "phase_variation"]
    return StudyResult("lipschitz", cols, rows, summary)


# ---------------------------------------------------------------------------
# schedule


def schedule_study(cfg: RunConfig, workers: int = 1) -> StudyResult:
    """The covering schedule with a_k read from one practical solve of the whole horizon.

    By uniqueness the solution on each scheduled subinterval is the
    restriction of the global one, so a_k = ||Delta Psi(t_k)||^2 is read from
    the global trajectory (linear interpolation between samples).
    """
    problem = _with_lipschitz(cfg, replace(cfg.problem(), mode="practical", check=False))
    T = cfg.values["cli"]["study_T"] or problem.T
    traj = solve_tdks(replace(problem, T=T)).trajectory
    consts = constants(problem.potentials, T, problem.domain)
    lam = traj.norm_series()["lap"] ** 2

    def advance(st):
        return float(np.interp(st.end, traj.times, lam))

    states = covering_schedule(T, problem.psi0, consts, problem.lipschitz, problem.policy, dt=problem.dt, advance=advance, max_steps=problem.max_steps)
    rows = []
    for st in states:
        rows.append(
            {
                "k": st.k,
                "start": st.start,
                "a_prev": st.a_prev,
                "b_k": st.b,
                "T_pre": st.T_pre,
                "halvings": st.halvings,
                "T_d": st.T_d,
                "g_k": st.g,
                "B_circ": st.B_circ,
                "C_circ": st.C_circ,
                "invariance_ok": st.invariance_ok,
                "clipped": st.clipped,
                "snapped": st.snapped,
                "a_k": st.a,
            }
        )
    total = math.fsum(st.T_d for st in states)  # exact sum of the emitted lengths
    rule = all(st.b == 1.0 / (st.k * st.a_prev**3) for st in states)
    summary = {
        "steps": len(states),
        "horizon": T,
        "sum_T_d": total,
        "end": states[-1].end if states else 0.0,
        "halved_steps": sum(1 for st in states if st.halvings),
        "b_rule_ok": rule,
        "g_below_one_ok": all(st.g < 1.0 for st in states),
        "covers_ok": bool(states) and states[-1].clipped and total == T,
    }
    cols = ["k", "start", "a_prev", "b_k", "T_pre", "halvings", "T_d", "g_k", "B_circ", "C_circ", "invariance_ok", "clipped", "snapped", "a_k"]
    return StudyResult("schedule", cols, rows, summary)


# ---------------------------------------------------------------------------
# contraction


def _ball_trajectory(rng, psi0: SpectralField, times: np.ndarray, C_circ: float) -> Trajectory:
    """Random trajectory in time with sup ||Delta Lambda||^2 <= C_circ."""
    dom, m = psi0.domain, psi0.order
    a = random_field(rng, dom, m).coeffs
    b = random_field(rng, dom, m).coeffs
    s = (times - times[0]) / max(times[-1] - times[0], 1e-300)
    coeffs = psi0.coeffs[None, :] + np.outer(np.cos(math.pi * s), a) + np.outer(s, b)
    traj = Trajectory(dom, times, coeffs)
    lap = traj.sup_norm("lap")
    scale = rng.uniform(0.2, 1.0) * math.sqrt(C_circ) / lap
    return Trajectory(dom, times, coeffs * scale)


def contraction_study(cfg: RunConfig, workers: int = 1, pairs: int = 50, target: float = 0.5, steps: int = 32) -> StudyResult:
    """Measured contraction of A on random in-ball pairs at the horizon where g = ``target``."""
    problem = _with_lipschitz(cfg, cfg.problem())
    dom, psi0, lip = problem.domain, problem.psi0, problem.lipschitz
    consts = constants(problem.potentials, problem.T, dom)
    B_circ = problem.policy.B
    T_hat = certified_length(consts, lip, psi0, B_circ, target)
    ball = BallSpec.build(B_circ, T_hat, psi0, consts)
    g = contraction_factor(T_hat, consts, ball.C_circ, lip)
    dt = T_hat / steps
    system = assemble(dom, problem.m, problem.potentials, horizon=problem.T)
    times = time_lattice(0.0, T_hat, dt, system.breakpoints)
    rng = np.random.default_rng(problem.seed)
    rows = []
    for i in range(pairs):
        l1 = _ball_trajectory(rng, psi0, times, ball.C_circ)
        l2 = _ball_trajectory(rng, psi0, times, ball.C_circ)
        a1 = apply_A(l1, psi0, (0.0, T_hat), dt, problem.nonlinearity, system=system)
        a2 = apply_A(l2, psi0, (0.0, T_hat), dt, problem.nonlinearity, system=system)
        den = l1.difference(l2, "lap")
        rows.append({"pair": i, "input_difference": den, "output_difference": a1.difference(a2, "lap"), "ratio": a1.difference(a2, "lap") / den, "in_ball": ball.contains(l1) and ball.contains(l2)})
    _, log = picard_solve(psi0, (0.0, T_hat), dt, problem.tol, problem.max_iter, nonlinearity=problem.nonlinearity, system=system)
    ratios = [r["ratio"] for r in rows]
    summary = {
        "T_hat": T_hat,
        "g": g,
        "C_circ": ball.C_circ,
        "dt": dt,
        "max_ratio": max(ratios),
        "picard_differences": log.differences,
        "picard_ratios": log.ratios,
        "g_target_ok": abs(g - target) <= 0.1,
        "in_ball_ok": all(r["in_ball"] for r in rows),
        "contraction_ok": max(ratios) <= g * (1 + 1e-6),
        "picard_ok": log.converged and log.max_ratio <= g,
    }
    return StudyResult("contraction", ["pair", "input_difference", "output_difference", "ratio", "in_ball"], rows, summary)


STUDIES = {
    "modes": modes_study,
    "timestep": timestep_study,
    "epsilon": epsilon_study,
    "lipschitz": lipschitz_study,
    "schedule": schedule_study,
    "contraction": contraction_study,
}


def run_study(kind: str, cfg: RunConfig, workers: int = 1) -> StudyResult:
    try:
        func = STUDIES[kind]
    except KeyError:
        raise ValueError(f"unknown study {kind!r}; choose from {', '.join(STUDIES)}") from None
    return func(cfg, workers=workers)
