"""Fixed-point map, contraction certificates, covering schedule and the nonlinear solver.

The map A sends a trajectory Lambda to the solution of the linear auxiliary
problem with forcing F(Lambda) and the fixed initial state. Its fixed point
is the solution of the nonlinear problem. On the discrete lattice the forcing
is sampled at step midpoints from the linearly interpolated Lambda, so the
fixed point is the implicit-midpoint discretization of the nonlinear system.

Certified step lengths come from the explicit contraction factor g, which is
usually very pessimistic; the ``practical`` mode instead picks the largest
dyadic step on which Picard iteration contracts with a measured ratio below
1/2, and records the certified length alongside.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .energy import EstimateConstants, EstimateReport, check_estimates, constants, bound_constants
from .galerkin import NonlinearForcing, OdeSystem, Trajectory, assemble, integrate_linear, time_lattice
from .potentials import (
    LipschitzConstants,
    MollifierSpec,
    Nonlinearity,
    PotentialSpec,
    XcModel,
    measure_constants,
    mollify,
)
from .spectral import BoxDomain, SpectralField, grid_norms, norms, project

__all__ = [
    "BallSpec",
    "ball_radius",
    "invariance_bound",
    "contraction_factor",
    "certified_length",
    "apply_A",
    "PicardLog",
    "PicardError",
    "picard_solve",
    "fixed_point_residual",
    "BPolicy",
    "ScheduleState",
    "ScheduleError",
    "covering_schedule",
    "TDKSProblem",
    "SolveReport",
    "SolveError",
    "solve_tdks",
    "solve_regularized",
    "regularize",
    "estimate_checker",
    "check_pieces",
]


# ---------------------------------------------------------------------------
# ball and contraction formulas


def _at_horizon(consts: EstimateConstants, T: float) -> EstimateConstants:
    """Copy of ``consts`` with the horizon-dependent constants re-evaluated at T."""
    if T == consts.T:
        return consts
    C_grad, C1, C2, C3 = bound_constants(consts.V_inf, consts.gradV_inf, consts.lapV_inf, consts.C_PF, T)
    return replace(consts, T=T, C_grad=C_grad, C1_lap=C1, C2_lap=C2, C3_lap=C3)


def ball_radius(B_circ: float, T_ref: float, lap_sq: float, grad_sq: float, consts: EstimateConstants) -> float:
    """C_circ = exp(C1 T) [B + ||Delta Psi0||^2 + T C2 ||grad Psi0||^2] with C2 at T."""
    c = _at_horizon(consts, T_ref)
    return math.exp(c.C1_lap * T_ref) * (B_circ + lap_sq + T_ref * c.C2_lap * grad_sq)


def invariance_bound(B_circ: float, consts: EstimateConstants, C_circ: float, lipschitz: LipschitzConstants) -> float:
    """Largest horizon on which A maps the ball of radius C_circ into itself."""
    inner = lipschitz.C_b * consts.C_Z**3 * C_circ**3 + lipschitz.K_tilde * consts.C_Z * C_circ
    if inner == 0.0:
        return consts.T
    return min(consts.T, B_circ / (consts.C3_lap * inner**2))


def contraction_factor(T_hat: float, consts: EstimateConstants, C_circ: float, lipschitz: LipschitzConstants) -> float:
    """g(T) = C_Z (K_tilde + 2 C_c C_circ) sqrt(exp(C1 T) T C3(T))."""
    if T_hat <= 0.0:
        return 0.0
    c = _at_horizon(consts, T_hat)
    cc = lipschitz.K_tilde + 2.0 * lipschitz.C_c * C_circ
    return c.C_Z * cc * math.sqrt(math.exp(c.C1_lap * T_hat) * T_hat * c.C3_lap)


@dataclass(frozen=True)
class BallSpec:
    B_circ: float
    T_ref: float
    C_circ: float
    T_hat: float

    @classmethod
    def build(cls, B_circ: float, T_ref: float, psi0: SpectralField, consts: EstimateConstants, T_hat: Optional[float] = None):
        n = norms(psi0)
        return cls(B_circ, T_ref, ball_radius(B_circ, T_ref, n.lap**2, n.grad**2, consts), T_ref if T_hat is None else T_hat)

    def contains(self, traj: Trajectory) -> bool:
        return float(np.max(traj.norm_series()["lap"] ** 2)) <= self.C_circ


def certified_length(
    consts: EstimateConstants, lipschitz: LipschitzConstants, psi0: SpectralField, B_circ: float = 1.0, target: float = 1.0, upper: Optional[float] = None
) -> float:
    """Horizon T with g(T) = ``target`` (ball radius evaluated at T), by bisection."""
    if lipschitz.K_tilde == 0.0 and lipschitz.C_c == 0.0:
        return math.inf  # g vanishes identically
    n = norms(psi0)
    lap_sq, grad_sq = n.lap**2, n.grad**2

    def g(T):
        try:
            return contraction_factor(T, consts, ball_radius(B_circ, T, lap_sq, grad_sq, consts), lipschitz)
        except OverflowError:
            return math.inf

    hi = upper or 1.0
    while g(hi) < target:
        hi *= 2.0
        if hi > 1e6:
            return math.inf
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return lo


# ---------------------------------------------------------------------------
# the map A and Picard iteration


def _system_for(psi0: SpectralField, system: Optional[OdeSystem], potentials: Optional[PotentialSpec]) -> OdeSystem:
    if system is not None:
        return system
    return assemble(psi0.domain, psi0.order, potentials)


def constant_trajectory(psi0: SpectralField, interval, dt: float, breakpoints=()) -> Trajectory:
    times = time_lattice(interval[0], interval[1], dt, breakpoints)
    return Trajectory(psi0.domain, times, np.repeat(psi0.coeffs[None, :], times.size, axis=0))


def apply_A(
    lam: Trajectory,
    psi0: SpectralField,
    interval,
    dt: float,
    nonlinearity: Optional[Nonlinearity] = None,
    *,
    system: Optional[OdeSystem] = None,
    potentials: Optional[PotentialSpec] = None,
) -> Trajectory:
    """Solve the auxiliary problem with forcing F(Lambda); the result starts at psi0."""
    system = _system_for(psi0, system, potentials)
    G = NonlinearForcing(lam, nonlinearity) if nonlinearity is not None and nonlinearity.active else None
    return integrate_linear(system, psi0, G, interval, dt, allow_coarse=True)


class PicardError(RuntimeError):
    """Picard iteration stopped without reaching the tolerance."""

    def __init__(self, message: str, log: "PicardLog"):
        super().__init__(message)
        self.log = log


@dataclass
class PicardLog:
    """differences[0] is the change of the initial solve; later entries are successive changes."""

    differences: list = field(default_factory=list)
    converged: bool = False
    tol: float = 0.0
    floor: float = 0.0

    @property
    def iterations(self) -> int:
        """Iterations past the initial solve."""
        return max(0, len(self.differences) - 1)

    @property
    def ratios(self) -> list:
        d = self.differences
        return [d[i] / d[i - 1] for i in range(1, len(d)) if d[i - 1] > self.floor and d[i] > self.floor]

    @property
    def max_ratio(self) -> float:
        r = self.ratios
        return max(r) if r else 0.0

    def as_dict(self) -> dict:
        return {"differences": list(self.differences), "ratios": self.ratios, "iterations": self.iterations, "converged": self.converged, "tol": self.tol}


def picard_solve(
    psi0: SpectralField,
    interval,
    dt: float,
    tol: float = 1e-11,
    max_iter: int = 100,
    *,
    nonlinearity: Optional[Nonlinearity] = None,
    system: Optional[OdeSystem] = None,
    potentials: Optional[PotentialSpec] = None,
    lam0: Optional[Trajectory] = None,
    ratio_limit: Optional[float] = None,
) -> tuple[Trajectory, PicardLog]:
    """Iterate Lambda <- A(Lambda) from the constant-in-time psi0 until the sup-in-time H2 change is below tol.

    With ``ratio_limit`` the iteration gives up early (PicardError) once two
    consecutive measured ratios exceed the limit.
    """
    system = _system_for(psi0, system, potentials)
    lam = lam0 if lam0 is not None else constant_trajectory(psi0, interval, dt, system.breakpoints)
    scale = max(1.0, norms(psi0).h2)
    log = PicardLog(tol=tol, floor=1e3 * np.finfo(float).eps * scale)
    for _ in range(max_iter + 1):
        new = apply_A(lam, psi0, interval, dt, nonlinearity, system=system)
        if new.times.shape != lam.times.shape:
            lam = Trajectory(lam.domain, new.times, lam.interpolate(new.times))
        diff = new.difference(lam, "h2")
        log.differences.append(diff)
        lam = new
        if len(log.differences) > 1 and diff < tol:
            log.converged = True
            break
        if diff < log.floor and len(log.differences) > 1:
            log.converged = True
            break
        if ratio_limit is not None:
            r = log.ratios
            if len(r) >= 2 and r[-1] > ratio_limit and r[-2] > ratio_limit:
                raise PicardError(f"contraction ratio {r[-1]:.3g} above {ratio_limit}", log)
        if not math.isfinite(diff):
            raise PicardError("Picard iterate became non-finite", log)
    if not log.converged:
        raise PicardError(
            f"no convergence in {max_iter} iterations on [{interval[0]:.6g}, {interval[1]:.6g}]; last change {log.differences[-1]:.3g}, ratios {log.ratios[-5:]}",
            log,
        )
    lam.metadata.update({"picard_iterations": log.iterations})
    return lam, log


def fixed_point_residual(traj: Trajectory, nonlinearity: Optional[Nonlinearity], system: OdeSystem, dt: float) -> float:
    """sup-in-time H2 norm of Psi - A(Psi)."""
    out = apply_A(traj, traj.initial, (traj.start, traj.end), dt, nonlinearity, system=system)
    return traj.difference(out, "h2")


# ---------------------------------------------------------------------------
# covering schedule


class ScheduleError(RuntimeError):
    """The covering schedule could not advance."""


@dataclass(frozen=True)
class BPolicy:
    """Radius policy B_circ,k = min(B, c T_k)."""

    B: float = 1.0
    c: float = 1.0

    def radius(self, T: float) -> float:
        return min(self.B, self.c * T)


@dataclass
class ScheduleState:
    k: int
    start: float
    a_prev: float
    b: float
    T_pre: float
    T_d: float
    B_circ: float
    C_circ: float
    g: float
    halvings: int
    invariance_ok: bool
    clipped: bool = False
    snapped: bool = False
    a: Optional[float] = None
    end: Optional[float] = None

    def __post_init__(self):
        if self.end is None:
            self.end = self.start + self.T_d

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _schedule_terms(T, a, B_circ, consts, lip):
    c = _at_horizon(consts, T)
    C_circ = math.exp(c.C1_lap * T) * (B_circ + a * (1.0 + T * c.C2_lap))
    g = contraction_factor(T, consts, C_circ, lip) if T > 0 else 0.0
    inner = lip.C_b * c.C_Z**3 * C_circ**3 + lip.K_tilde * c.C_Z * C_circ
    inv = T * c.C3_lap * inner**2 <= B_circ
    return C_circ, g, inv


def schedule_step(k: int, a_prev: float, consts: EstimateConstants, lip: LipschitzConstants, policy: BPolicy, min_length: float = 1e-12):
    """Certified length for step k: b_k = 1/(k a^3), T = b_k / C1, halved until g < 1."""
    b = 1.0 / (k * a_prev**3)
    T_pre = b / consts.C1_lap
    T = T_pre
    halvings = 0
    while True:
        B_circ = policy.radius(T)
        C_circ, g, inv = _schedule_terms(T, a_prev, B_circ, consts, lip)
        if g < 1.0:
            break
        T *= 0.5
        halvings += 1
        if T < min_length:
            raise ScheduleError(f"step {k}: length fell below {min_length:g} before g < 1 (a={a_prev:.4g}); constants too pessimistic")
    return b, T_pre, T, B_circ, C_circ, g, halvings, inv


def predicted_growth(a_prev: float, T: float, B_circ: float, consts: EstimateConstants, lip: LipschitzConstants) -> float:
    """f(a, b, B): the energy bound on ||Delta Psi||^2 at the end of a step of length T."""
    c = _at_horizon(consts, T)
    C_circ = math.exp(c.C1_lap * T) * (B_circ + a_prev * (1.0 + T * c.C2_lap))
    source = lip.C_b * c.C_Z**3 * C_circ**3 + lip.K_tilde * c.C_Z * C_circ
    return math.exp(c.C1_lap * T) * (a_prev * (1.0 + T * c.C2_lap) + T * c.C3_lap * source)


def covering_schedule(
    T: float,
    psi0,
    consts: EstimateConstants,
    lipschitz: LipschitzConstants,
    policy: BPolicy = BPolicy(),
    *,
    dt: Optional[float] = None,
    advance: Optional[Callable[[ScheduleState], float]] = None,
    start: float = 0.0,
    max_steps: int = 1_000_000,
) -> list[ScheduleState]:
    """Subintervals covering [start, T] by the step rule of the existence proof.

    ``psi0`` is the initial field or directly ||Delta Psi0||^2. ``advance``
    receives each emitted state and returns the observed ||Delta Psi||^2 at
    its end; without it the energy bound f(a, b, B) is used as the
    prediction. The a values entering b_k are floored at 1. End times are
    snapped down to the dt lattice when the step is at least dt long, and the
    last step is clipped to end exactly at T.
    """
    a0 = norms(psi0).lap ** 2 if isinstance(psi0, SpectralField) else float(psi0)
    a_prev = max(1.0, a0)
    lengths = [float(start)]
    t = float(start)
    states = []
    k = 0
    while t < T:
        k += 1
        if k > max_steps:
            raise ScheduleError(f"schedule did not reach T={T} within {max_steps} steps (t={t:.6g})")
        b, T_pre, Td, B_circ, C_circ, g, h, inv = schedule_step(k, a_prev, consts, lipschitz, policy)
        clipped = snapped = False
        if t + Td >= T * (1 - 1e-14):
            Td = T - t
            # T - t can round when t < T/2; nudge by the exactly rounded residual
            for _ in range(4):
                resid = math.fsum([T, -Td] + [-x for x in lengths])
                if resid == 0.0:
                    break
                Td += resid
            clipped = True
        elif dt is not None and Td >= dt:
            end = math.floor((t + Td) / dt + 1e-9) * dt
            if end > t + 0.5 * dt:
                snapped = end < t + Td
                Td = end - t
        if Td != T_pre or clipped or snapped:
            B_circ = policy.radius(Td)
            C_circ, g, inv = _schedule_terms(Td, a_prev, B_circ, consts, lipschitz)
        # the end is the next start, so pieces abut exactly and the last ends at T
        end = T if clipped else math.fsum(lengths + [Td])
        st = ScheduleState(k, t, a_prev, b, T_pre, Td, B_circ, C_circ, g, h, inv, clipped, snapped, end=end)
        a = advance(st) if advance is not None else predicted_growth(a_prev, Td, B_circ, consts, lipschitz)
        st.a = float(a)
        states.append(st)
        a_prev = max(1.0, st.a)
        lengths.append(Td)
        # start times from the exactly rounded running sum, so the clipped total is T
        t = end
    return states


# ---------------------------------------------------------------------------
# the nonlinear solver


class SolveError(RuntimeError):
    def __init__(self, message: str, report: Optional["SolveReport"] = None):
        super().__init__(message)
        self.report = report


@dataclass
class TDKSProblem:
    """Everything needed to solve the nonlinear problem on [0, T].

    ``rough_psi0`` (grid samples) and the rough parts of ``potentials`` and
    ``nonlinearity`` are used by :func:`solve_regularized`.
    """

    psi0: SpectralField
    T: float
    dt: float
    potentials: Optional[PotentialSpec] = None
    nonlinearity: Nonlinearity = field(default_factory=lambda: Nonlinearity(hartree=False))
    mode: str = "practical"
    tol: float = 1e-11
    max_iter: int = 200
    policy: BPolicy = BPolicy()
    lipschitz: Optional[LipschitzConstants] = None
    lipschitz_trials: int = 100
    seed: int = 0
    rough_psi0: Optional[np.ndarray] = None
    check: bool = True
    max_steps: int = 100_000

    def __post_init__(self):
        if self.mode not in ("certified", "practical"):
            raise ValueError(f"mode must be 'certified' or 'practical', got {self.mode!r}")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError("T must be positive and finite")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")

    @property
    def domain(self) -> BoxDomain:
        return self.psi0.domain

    @property
    def m(self) -> int:
        return self.psi0.order


@dataclass
class SolveReport:
    mode: str
    trajectory: Trajectory
    intervals: list
    estimates: Optional[EstimateReport]
    lipschitz: LipschitzConstants
    certified: bool
    elapsed: float = 0.0
    epsilon: Optional[float] = None
    extras: dict = field(default_factory=dict)

    @property
    def estimates_passed(self) -> bool:
        return self.estimates is None or self.estimates.passed

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "certified": self.certified,
            "epsilon": self.epsilon,
            "samples": int(self.trajectory.times.size),
            "intervals": self.intervals,
            "lipschitz": self.lipschitz.as_dict(),
            "estimates": None if self.estimates is None else self.estimates.as_dict(),
            "extras": self.extras,
        }


def _lipschitz_for(problem: TDKSProblem) -> LipschitzConstants:
    if problem.lipschitz is not None:
        return problem.lipschitz
    return measure_constants(problem.domain, problem.m, problem.nonlinearity, trials=problem.lipschitz_trials, seed=problem.seed)


def _run(problem: TDKSProblem, system: OdeSystem, plain_consts: Callable, lip: LipschitzConstants, checker: Optional[Callable], certify: bool):
    """Shared subinterval loop; ``checker(traj, k)`` returns an EstimateReport."""
    T, dt = problem.T, problem.dt
    nl = problem.nonlinearity
    base = plain_consts(T)
    parts, intervals = [], []
    state = problem.psi0
    t = 0.0
    j = 0  # practical step exponent: length T / 2^j

    def solve_piece(t0, t1, ratio_limit=None):
        return picard_solve(state, (t0, t1), dt, problem.tol, problem.max_iter, nonlinearity=nl, system=system, ratio_limit=ratio_limit)

    def record(k, t0, t1, log, sched=None):
        n = norms(state)
        info = {"k": k, "start": t0, "end": t1, "length": t1 - t0, "picard": log.as_dict()}
        if certify:
            a_prev = max(1.0, n.lap**2)
            try:
                b, T_pre, Td, B_c, C_c, g, h, inv = schedule_step(k, a_prev, base, lip, problem.policy)
                info["certified_length"] = Td
            except ScheduleError as exc:
                info["certified_length"] = None
                info["certified_note"] = str(exc)
            length = t1 - t0
            C_circ = ball_radius(problem.policy.radius(length), length, n.lap**2, n.grad**2, base)
            g_here = contraction_factor(length, base, C_circ, lip)
            info["g"] = g_here
            info["ratio_certified"] = bool(g_here < 1.0 and log.max_ratio <= g_here * (1 + 1e-6))
        if sched is not None:
            info["schedule"] = sched.as_dict()
        return info

    try:
        if problem.mode == "certified":

            def advance(st: ScheduleState) -> float:
                nonlocal state
                traj, log = solve_piece(st.start, st.end)
                parts.append(traj)
                info = record(st.k, st.start, st.end, log, st)
                intervals.append(info)
                state = traj.endpoint
                return norms(state).lap ** 2

            covering_schedule(T, state, base, lip, problem.policy, dt=dt, advance=advance, max_steps=problem.max_steps)
        else:
            k = 0
            while t < T * (1 - 1e-14):
                k += 1
                if k > problem.max_steps:
                    raise SolveError(f"more than {problem.max_steps} subintervals")
                j = max(0, j - 1)
                while True:
                    length = T / 2**j
                    t1 = min(T, t + length)
                    if T - t1 < 1e-12 * T:
                        t1 = T
                    if t1 - t < 1e-12 * T:
                        raise SolveError(f"practical step length underflow at t={t:.6g}")
                    try:
                        traj, log = solve_piece(t, t1, ratio_limit=0.5)
                    except PicardError:
                        j += 1
                        continue
                    if log.max_ratio < 0.5:
                        break
                    j += 1
                parts.append(traj)
                intervals.append(record(k, t, t1, log))
                state = traj.endpoint
                t = t1
    except (PicardError, ScheduleError) as exc:
        partial = Trajectory.concatenate(parts) if parts else Trajectory(problem.domain, [0.0], problem.psi0.coeffs[None])
        raise SolveError(str(exc), SolveReport(problem.mode, partial, intervals, None, lip, False)) from exc
    traj = Trajectory.concatenate(parts)
    traj.metadata.update({"dt": dt, "m": problem.m, "mode": problem.mode})
    first = 0
    for info, part in zip(intervals, parts):
        info["nodes"] = [first, first + part.times.size - 1]
        first += part.times.size - 1
    estimates = check_pieces(traj, [i["nodes"] for i in intervals], checker) if checker is not None else None
    certified = bool(certify and problem.mode == "certified" and intervals and all(i.get("ratio_certified", False) for i in intervals))
    return traj, intervals, estimates, certified


def check_pieces(traj: Trajectory, nodes, checker: Callable) -> EstimateReport:
    """Run ``checker(piece, k)`` on each subinterval slice [i0, i1] of ``traj`` and merge the reports."""
    reports = []
    for k, (i0, i1) in enumerate(nodes, start=1):
        piece = Trajectory(traj.domain, traj.times[i0 : i1 + 1], traj.coeffs[i0 : i1 + 1])
        reports.append(checker(piece, k))
    return EstimateReport.merge(reports)


def estimate_checker(problem: TDKSProblem, eps: Optional[float] = None, lemma: Optional[dict] = None, lipschitz: Optional[LipschitzConstants] = None) -> Callable:
    """The per-subinterval estimate check used by the solvers.

    The first subinterval starts from the (regularized) initial data of the
    problem; later ones from their own first sample.
    """
    if eps is None:
        pots = problem.potentials or PotentialSpec.build(problem.domain, problem.T)
        nl = problem.nonlinearity
        psi0 = problem.psi0

        def checker(traj, k):
            G = NonlinearForcing(traj, nl) if nl.active else None
            start = psi0 if k == 1 else traj.initial
            return check_estimates(traj, G, start, constants(pots, traj.end - traj.start, problem.domain), "plain")

        return checker

    mol = MollifierSpec(eps, problem.domain.dim)
    smooth = regularize(problem, mol)
    rough_pots = problem.potentials or PotentialSpec.build(problem.domain, problem.T)
    system = assemble(smooth.domain, smooth.m, smooth.potentials, horizon=problem.T)
    lip = lipschitz or _lipschitz_for(problem)
    rough_initial = grid_norms(smooth.rough_psi0, problem.domain)
    nl = smooth.nonlinearity
    smooth_part = replace(nl, rough_xc=XcModel(), mollifier=None)
    rough_part = Nonlinearity(hartree=False, rough_xc=nl.rough_xc, mollifier=mol)

    def checker(traj, k):
        G = NonlinearForcing(traj, smooth_part) if smooth_part.active else None
        return check_estimates(
            traj,
            G,
            smooth.psi0 if k == 1 else traj.initial,
            constants(rough_pots, traj.end - traj.start, problem.domain, mollifier=mol, lipschitz=lip, lemma=lemma),
            "epsilon",
            system=system,
            rough_term=rough_part,
            rough_initial=rough_initial if k == 1 else None,
        )

    return checker


def solve_tdks(problem: TDKSProblem) -> SolveReport:
    """Solve the nonlinear problem on [0, T] subinterval by subinterval."""
    t_start = time.perf_counter()
    system = assemble(problem.domain, problem.m, problem.potentials, horizon=problem.T)
    pots = problem.potentials or PotentialSpec.build(problem.domain, problem.T)
    lip = _lipschitz_for(problem)

    def plain_consts(T):
        return constants(pots, T, problem.domain)

    checker = estimate_checker(problem) if problem.check else None
    traj, intervals, estimates, certified = _run(problem, system, plain_consts, lip, checker, certify=True)
    return SolveReport(problem.mode, traj, intervals, estimates, lip, certified, time.perf_counter() - t_start)


def regularize(problem: TDKSProblem, mollifier: MollifierSpec) -> TDKSProblem:
    """The smoothed problem: mollified initial data (odd extension) and rough potential (even extension)."""
    dom, m = problem.domain, problem.m
    pots = problem.potentials or PotentialSpec.build(dom, problem.T)
    rough = problem.rough_psi0 if problem.rough_psi0 is not None else problem.psi0.basis.to_grid(problem.psi0.coeffs)
    psi_eps = project(mollify(rough, mollifier, dom, "odd"), dom, m)
    if pots.has_rough_part:
        W0 = mollify(pots.W0, mollifier, dom, "even")
        Wu = mollify(pots.Wu, mollifier, dom, "even")
        pots = pots.with_rough_part(W0, Wu)
    nl = replace(problem.nonlinearity, mollifier=mollifier)
    return replace(problem, psi0=psi_eps, potentials=pots, nonlinearity=nl, rough_psi0=rough)


def solve_regularized(problem: TDKSProblem, eps: float, lemma: Optional[dict] = None) -> SolveReport:
    """Solve the epsilon-regularized problem and check the regularized energy bounds."""
    t_start = time.perf_counter()
    mol = MollifierSpec(eps, problem.domain.dim)
    smooth = regularize(problem, mol)
    rough_pots = problem.potentials or PotentialSpec.build(problem.domain, problem.T)
    system = assemble(smooth.domain, smooth.m, smooth.potentials, horizon=problem.T)
    lip = _lipschitz_for(problem)

    def plain_consts(T):
        return constants(smooth.potentials, T, problem.domain)

    def eps_consts(T):
        return constants(rough_pots, T, problem.domain, mollifier=mol, lipschitz=lip, lemma=lemma)

    checker = estimate_checker(problem, eps, lemma, lip) if problem.check else None
    certify = not smooth.nonlinearity.rough_xc.active
    traj, intervals, estimates, certified = _run(smooth, system, plain_consts, lip, checker, certify=certify)
    ns = traj.norm_series()
    final = eps_consts(problem.T)
    extras = {
        "no_eps_bounds": {
            "max_l2": float(ns["l2"].max()),
            "max_grad": float(ns["grad"].max()),
            "max_lap": float(ns["lap"].max()),
        },
        "constants": final.as_dict(),
        "lemma": dict(final.lemma),
    }
    return SolveReport(problem.mode, traj, intervals, estimates, lip, certified, time.perf_counter() - t_start, eps, extras)
