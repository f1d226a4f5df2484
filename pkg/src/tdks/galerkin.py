"""Galerkin ODE system i gamma' = A(t) gamma + g(t), its integrators and a reference solver.

The generator A(t) = diag(lambda) + M_V0 + u(t) M_Vu + M_W0 + w(t) M_Wu is
Hermitian and piecewise constant in time (the controls are piecewise
constant). Time steps are placed on the global lattice {k dt} refined by the
control breakpoints and the interval ends, so a step never straddles a
control switch and runs over subintervals reproduce the global step pattern.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from .potentials import ControlSignal, Nonlinearity, PotentialSpec
from .spectral import BoxDomain, SpectralField, basis

__all__ = [
    "OdeSystem",
    "Trajectory",
    "IntegrationError",
    "ReferenceConvergenceError",
    "Forcing",
    "SampledForcing",
    "FunctionForcing",
    "NonlinearForcing",
    "as_forcing",
    "assemble",
    "time_lattice",
    "integrate_linear",
    "solve_auxiliary",
    "weak_residual",
    "integrate_reference",
    "CN_INTEGRATOR",
    "REFERENCE_INTEGRATOR",
]

CN_INTEGRATOR = "crank-nicolson/midpoint-frozen"
REFERENCE_INTEGRATOR = "strang/exact-laplacian+implicit-midpoint"


class IntegrationError(RuntimeError):
    """A time step could not be carried out."""


class ReferenceConvergenceError(RuntimeError):
    """The inner fixed point of the reference integrator did not converge."""


@dataclass(eq=False)
class OdeSystem:
    """Projected generator of the Galerkin system."""

    domain: BoxDomain
    m: int
    lap_diag: np.ndarray
    M_V0: np.ndarray
    M_Vu: np.ndarray
    M_W0: np.ndarray
    M_Wu: np.ndarray
    u: ControlSignal
    w: ControlSignal
    _steppers: dict = field(default_factory=dict, repr=False)

    @property
    def horizon(self) -> float:
        return self.u.horizon

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return tuple(sorted(set(self.u.breakpoints) | set(self.w.breakpoints)))

    def levels(self, t: float) -> tuple[float, float]:
        return float(self.u(t)), float(self.w(t))

    def potential_matrix(self, t: float) -> np.ndarray:
        a, b = self.levels(t)
        return self.M_V0 + a * self.M_Vu + self.M_W0 + b * self.M_Wu

    def matrix(self, t: float) -> np.ndarray:
        """A(t) including the Laplacian eigenvalues."""
        return np.diag(self.lap_diag) + self.potential_matrix(t)

    def stepper(self, t_mid: float, h: float):
        """Crank-Nicolson propagators (P, Q): gamma+ = P gamma + Q g_mid."""
        a, b = self.levels(t_mid)
        return self.stepper_at(a, b, h, t_mid)

    def stepper_at(self, a: float, b: float, h: float, t_mid: float = math.nan):
        """Propagators for control levels (a, b) and step h."""
        key = (a, b, round(float(h), 15))
        hit = self._steppers.get(key)
        if hit is not None:
            return hit
        A = np.diag(self.lap_diag) + self.M_V0 + a * self.M_Vu + self.M_W0 + b * self.M_Wu
        eye = np.eye(self.m)
        lhs = eye + 0.5j * h * A
        try:
            lu = scipy.linalg.lu_factor(lhs, check_finite=True)
            P = scipy.linalg.lu_solve(lu, eye - 0.5j * h * A)
            Q = scipy.linalg.lu_solve(lu, -1j * h * eye)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise IntegrationError(f"step matrix at t={t_mid:.6g}, h={h:.3g} could not be factored: {exc}") from exc
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(Q))):
            raise IntegrationError(f"non-finite propagator at t={t_mid:.6g}, h={h:.3g}")
        if len(self._steppers) > 256:
            self._steppers.clear()
        self._steppers[key] = (P, Q)
        return P, Q


def _projection_matrix(domain: BoxDomain, m: int, potential: np.ndarray, synth: np.ndarray) -> np.ndarray:
    v = np.asarray(potential, dtype=float).reshape(-1)
    if not np.any(v):
        return np.zeros((m, m))
    M = domain.cell_volume * (synth * v) @ synth.T
    return 0.5 * (M + M.T)


def assemble(domain: BoxDomain, m: int, potentials: Optional[PotentialSpec] = None, horizon: Optional[float] = None) -> OdeSystem:
    """Galerkin matrices (V psi_k, psi_j) by exact discrete quadrature on the grid."""
    b = basis(domain, m)  # raises on aliasing-guard violation
    if potentials is None:
        T = math.inf if horizon is None else horizon
        potentials = PotentialSpec.build(domain, T)
    if potentials.domain != domain:
        raise ValueError("potentials are defined on a different domain")
    synth = b.to_grid(np.eye(m)).reshape(m, -1).real
    mats = [_projection_matrix(domain, m, f, synth) for f in (potentials.V0, potentials.Vu, potentials.W0, potentials.Wu)]
    for M in mats:
        M.setflags(write=False)
    return OdeSystem(domain, m, b.eigenvalues, *mats, potentials.u, potentials.w)


def time_lattice(t0: float, t1: float, dt: float, breakpoints: Sequence[float] = ()) -> np.ndarray:
    """Step nodes on [t0, t1]: global multiples of dt plus breakpoints and ends.

    Lattice points closer than 1e-9 dt to a breakpoint or an end are dropped.
    """
    if not t1 > t0:
        raise ValueError(f"empty interval [{t0}, {t1}]")
    if not dt > 0:
        raise ValueError("dt must be positive")
    tol = 1e-9 * dt
    special = np.array(sorted({t0, t1} | {float(b) for b in breakpoints if t0 + tol < b < t1 - tol}))
    k0 = math.floor(t0 / dt) + 1
    k1 = math.ceil(t1 / dt) - 1
    lattice = np.arange(k0, k1 + 1) * dt if k1 >= k0 else np.empty(0)
    lattice = lattice[(lattice > t0) & (lattice < t1)]
    if lattice.size and special.size:
        dist = np.min(np.abs(lattice[:, None] - special[None, :]), axis=1)
        lattice = lattice[dist > tol]
    return np.union1d(special, lattice)


# ---------------------------------------------------------------------------
# forcing


class Forcing:
    """Time-dependent coefficient vector g(t); subclasses implement ``sample``."""

    m: int

    def sample(self, times: np.ndarray) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError


class SampledForcing(Forcing):
    """Piecewise-linear interpolation of coefficient samples."""

    def __init__(self, times, coeffs):
        self.times = np.asarray(times, dtype=float)
        self.coeffs = np.asarray(coeffs, dtype=complex)
        if self.coeffs.ndim != 2 or self.coeffs.shape[0] != self.times.size:
            raise ValueError("forcing needs one coefficient row per sample time")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("forcing sample times must be strictly increasing")
        self.m = self.coeffs.shape[1]

    def sample(self, times):
        return _interpolate(self.times, self.coeffs, np.asarray(times, dtype=float))


class FunctionForcing(Forcing):
    """Forcing given by a callable t -> coefficient vector."""

    def __init__(self, func: Callable[[float], np.ndarray], m: int):
        self.func = func
        self.m = m

    def sample(self, times):
        times = np.asarray(times, dtype=float)
        out = np.empty((times.size, self.m), dtype=complex)
        for i, t in enumerate(times):
            out[i] = self.func(float(t))
        return out


class NonlinearForcing(Forcing):
    """g(t) = F(Lambda(t)) with Lambda interpolated linearly in time."""

    def __init__(self, lam: "Trajectory", nonlinearity: Nonlinearity):
        self.lam = lam
        self.nonlinearity = nonlinearity
        self.m = lam.order

    def sample(self, times):
        states = self.lam.interpolate(np.asarray(times, dtype=float))
        return self.nonlinearity.apply(states, self.lam.domain)


def _interpolate(times: np.ndarray, values: np.ndarray, at: np.ndarray) -> np.ndarray:
    if times.size == 1:
        if np.any(np.abs(at - times[0]) > 1e-12 * max(1.0, abs(times[0]))):
            raise ValueError("single-sample series queried away from its time")
        return np.repeat(values[:1], at.size, axis=0)
    span = times[-1] - times[0]
    slack = 1e-9 * span
    if np.any(at < times[0] - slack) or np.any(at > times[-1] + slack):
        raise ValueError(
            f"time grid mismatch: requested [{at.min():.6g}, {at.max():.6g}] outside samples "
            f"[{times[0]:.6g}, {times[-1]:.6g}]"
        )
    idx = np.clip(np.searchsorted(times, at, side="right") - 1, 0, times.size - 2)
    w = ((at - times[idx]) / (times[idx + 1] - times[idx]))[:, None]
    return (1.0 - w) * values[idx] + w * values[idx + 1]


def as_forcing(G, m: int) -> Optional[Forcing]:
    """Normalize the accepted forcing inputs (None, Forcing, Trajectory, callable)."""
    if G is None:
        return None
    if isinstance(G, Forcing):
        out = G
    elif isinstance(G, Trajectory):
        out = SampledForcing(G.times, G.coeffs)
    elif isinstance(G, SpectralField):
        c = G.coeffs
        out = FunctionForcing(lambda t: c, G.order)
    elif callable(G):
        out = FunctionForcing(G, m)
    else:
        raise TypeError(f"unsupported forcing type {type(G).__name__}")
    if out.m != m:
        raise ValueError(f"forcing has {out.m} modes, system has {m}")
    return out


# ---------------------------------------------------------------------------
# trajectories


@dataclass(eq=False)
class Trajectory:
    """Coefficient samples gamma(t_n) of a spectral field on a time grid."""

    domain: BoxDomain
    times: np.ndarray
    coeffs: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.ndim != 2 or self.coeffs.shape[0] != self.times.size:
            raise ValueError("trajectory needs one coefficient row per time")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    @property
    def order(self) -> int:
        return self.coeffs.shape[1]

    @property
    def start(self) -> float:
        return float(self.times[0])

    @property
    def end(self) -> float:
        return float(self.times[-1])

    def state(self, i: int) -> SpectralField:
        return SpectralField(self.domain, self.coeffs[i])

    @property
    def states(self) -> list[SpectralField]:
        return [self.state(i) for i in range(self.times.size)]

    @property
    def initial(self) -> SpectralField:
        return self.state(0)

    @property
    def endpoint(self) -> SpectralField:
        return self.state(-1)

    def interpolate(self, times) -> np.ndarray:
        return _interpolate(self.times, self.coeffs, np.atleast_1d(np.asarray(times, dtype=float)))

    def at(self, t: float) -> SpectralField:
        return SpectralField(self.domain, self.interpolate([t])[0])

    def norm_series(self) -> dict:
        """Per-sample l2, grad, lap and h2 norms."""
        b = basis(self.domain, self.order)
        a = np.abs(self.coeffs) ** 2
        lam, k2 = b.eigenvalues, b.wavenumbers_sq
        second = (k2**2).sum(axis=1)
        for i in range(k2.shape[1]):
            for k in range(i + 1, k2.shape[1]):
                second = second + k2[:, i] * k2[:, k]
        l2 = a.sum(axis=1)
        grad = a @ lam
        return {
            "l2": np.sqrt(l2),
            "grad": np.sqrt(grad),
            "lap": np.sqrt(a @ lam**2),
            "h1": np.sqrt(l2 + grad),
            "h2": np.sqrt(l2 + grad + a @ second),
            "h_minus1": np.sqrt(a @ (1.0 / (1.0 + lam))),
        }

    def time_norm(self, kind: str = "l2") -> float:
        """(integral over time of the squared ``kind`` norm)^(1/2), trapezoidal in the samples."""
        vals = self.norm_series()[kind] ** 2
        if self.times.size < 2:
            return 0.0
        return math.sqrt(float(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(self.times))))

    def sup_norm(self, kind: str = "h2") -> float:
        return float(np.max(self.norm_series()[kind]))

    def difference(self, other: "Trajectory", kind: str = "h2") -> float:
        """max over this trajectory's times of the ``kind`` norm of self - other."""
        if other.domain != self.domain or other.order != self.order:
            raise ValueError("trajectories differ in domain or order")
        if other.times.shape == self.times.shape and np.array_equal(other.times, self.times):
            oc = other.coeffs
        else:
            oc = other.interpolate(self.times)
        diff = Trajectory(self.domain, self.times, self.coeffs - oc)
        return diff.sup_norm(kind)

    def time_difference(self, other: "Trajectory", kind: str = "l2") -> float:
        """Time-integrated ``kind`` norm of self - other on this trajectory's samples."""
        if other.domain != self.domain or other.order != self.order:
            raise ValueError("trajectories differ in domain or order")
        oc = other.coeffs if np.array_equal(other.times, self.times) else other.interpolate(self.times)
        return Trajectory(self.domain, self.times, self.coeffs - oc).time_norm(kind)

    def restrict(self, t0: float, t1: float) -> "Trajectory":
        keep = (self.times >= t0 - 1e-12) & (self.times <= t1 + 1e-12)
        return Trajectory(self.domain, self.times[keep], self.coeffs[keep], dict(self.metadata))

    @staticmethod
    def concatenate(parts: Sequence["Trajectory"]) -> "Trajectory":
        """Join consecutive trajectories, dropping duplicated handoff samples."""
        if not parts:
            raise ValueError("nothing to concatenate")
        times, coeffs = [parts[0].times], [parts[0].coeffs]
        for prev, nxt in zip(parts, parts[1:]):
            if abs(nxt.start - prev.end) > 1e-12 * max(1.0, abs(prev.end)):
                raise ValueError("trajectories are not consecutive")
            times.append(nxt.times[1:])
            coeffs.append(nxt.coeffs[1:])
        meta = dict(parts[0].metadata)
        return Trajectory(parts[0].domain, np.concatenate(times), np.concatenate(coeffs), meta)


# ---------------------------------------------------------------------------
# integrators


def _cn_run(system: OdeSystem, gamma0: np.ndarray, forcing: Optional[Forcing], times: np.ndarray) -> np.ndarray:
    mids = 0.5 * (times[:-1] + times[1:])
    steps = np.diff(times)
    g = forcing.sample(mids) if forcing is not None else None
    ua = np.atleast_1d(system.u(mids)).tolist()
    wa = np.atleast_1d(system.w(mids)).tolist()
    out = np.empty((times.size, system.m), dtype=complex)
    out[0] = gamma0
    gam = out[0]
    with np.errstate(invalid="ignore", over="ignore"):
        for n in range(steps.size):
            P, Q = system.stepper_at(ua[n], wa[n], steps[n], mids[n])
            gam = P @ gam if g is None else P @ gam + Q @ g[n]
            out[n + 1] = gam
    bad = ~np.isfinite(out).all(axis=1)
    if bad.any():
        n = int(np.argmax(bad))
        raise IntegrationError(f"non-finite state after step {n - 1} (t={times[n]:.6g})")
    return out


def integrate_linear(
    system: OdeSystem,
    gamma0,
    G=None,
    interval: tuple[float, float] = (0.0, 1.0),
    dt: float = 1e-3,
    *,
    allow_coarse: bool = False,
) -> Trajectory:
    """Crank-Nicolson solution of i gamma' = A(t) gamma + g(t) on ``interval``.

    A is frozen at each step midpoint and g is sampled there. ``dt`` larger
    than the interval is rejected unless ``allow_coarse`` (then one step per
    control segment is taken).
    """
    t0, t1 = map(float, interval)
    if not dt > 0:
        raise ValueError("dt must be positive")
    if dt > (t1 - t0) * (1 + 1e-12) and not allow_coarse:
        raise ValueError(f"dt={dt} exceeds the interval length {t1 - t0}")
    g0 = gamma0.coeffs if isinstance(gamma0, SpectralField) else np.asarray(gamma0, dtype=complex)
    if g0.shape != (system.m,):
        raise ValueError(f"initial coefficients must have {system.m} entries")
    forcing = as_forcing(G, system.m)
    times = time_lattice(t0, t1, dt, system.breakpoints)
    coeffs = _cn_run(system, g0, forcing, times)
    meta = {"integrator": CN_INTEGRATOR, "dt": dt, "m": system.m}
    return Trajectory(system.domain, times, coeffs, meta)


def solve_auxiliary(
    G,
    psi0: SpectralField,
    interval: tuple[float, float],
    dt: float,
    potentials: Optional[PotentialSpec] = None,
    *,
    system: Optional[OdeSystem] = None,
    allow_coarse: bool = False,
) -> Trajectory:
    """Solution of the linear auxiliary problem with forcing G and data psi0."""
    if system is None:
        system = assemble(psi0.domain, psi0.order, potentials, horizon=interval[1])
    return integrate_linear(system, psi0, G, interval, dt, allow_coarse=allow_coarse)


def weak_residual(traj: Trajectory, system: OdeSystem, G=None) -> np.ndarray:
    """Per-step max over modes of |i (gamma_{n+1}-gamma_n)/h - A gamma_mid - g_mid|."""
    forcing = as_forcing(G, system.m)
    t = traj.times
    mids = 0.5 * (t[:-1] + t[1:])
    g = forcing.sample(mids) if forcing is not None else np.zeros((mids.size, system.m))
    out = np.empty(mids.size)
    for n in range(mids.size):
        A = system.matrix(mids[n])
        mid = 0.5 * (traj.coeffs[n] + traj.coeffs[n + 1])
        r = 1j * (traj.coeffs[n + 1] - traj.coeffs[n]) / (t[n + 1] - t[n]) - A @ mid - g[n]
        out[n] = np.max(np.abs(r))
    return out


def integrate_reference(
    system: OdeSystem,
    nonlinearity: Optional[Nonlinearity],
    gamma0,
    interval: tuple[float, float],
    dt_ref: float,
    save_times: Optional[Sequence[float]] = None,
    tol: float = 1e-14,
    max_iter: int = 50,
) -> Trajectory:
    """Strang-splitting oracle for i gamma' = A(t) gamma + F(gamma).

    Half steps of the exact Laplacian phase exp(-i lambda h/2) surround a full
    implicit-midpoint step for the potential matrix and the nonlinearity,
    solved by fixed-point iteration to ``tol`` (relative). Steps are uniform
    between consecutive save times and control breakpoints.
    """
    t0, t1 = map(float, interval)
    g = gamma0.coeffs if isinstance(gamma0, SpectralField) else np.asarray(gamma0, dtype=complex)
    save = np.array(sorted({t0, t1} | {float(s) for s in (() if save_times is None else save_times) if t0 < s < t1}))
    cuts = np.union1d(save, [b for b in system.breakpoints if t0 < b < t1])
    nl = nonlinearity if nonlinearity is not None and nonlinearity.active else None
    F = nl.bind(system.domain, system.m) if nl else None
    out = [g.copy()]
    lam = system.lap_diag
    for a, b in zip(cuts[:-1], cuts[1:]):
        n = max(1, int(math.ceil((b - a) / dt_ref - 1e-9)))
        h = (b - a) / n
        M = system.potential_matrix(0.5 * (a + b))
        half = np.exp(-0.5j * h * lam)
        rhs = None
        for _ in range(n):
            g = half * g
            if rhs is None:
                rhs = M @ g + (F(g) if F else 0.0)
            # predictor: the previous step's midpoint right-hand side
            new = g - 1j * h * rhs
            scale = max(1.0, math.sqrt(float(np.vdot(g, g).real)))
            for it in range(max_iter):
                mid = 0.5 * (g + new)
                rhs = M @ mid + (F(mid) if F else 0.0)
                nxt = g - 1j * h * rhs
                d = nxt - new
                change = math.sqrt(float(np.vdot(d, d).real))
                new = nxt
                if change <= tol * scale:
                    break
            else:
                raise ReferenceConvergenceError(
                    f"inner fixed point did not converge in {max_iter} iterations near t={a:.6g} (last change {change:.3g})"
                )
            g = half * new
        if np.any(np.isclose(b, save, rtol=0, atol=1e-12 * max(1.0, abs(b)))):
            out.append(g.copy())
    meta = {"integrator": REFERENCE_INTEGRATOR, "dt": dt_ref, "m": system.m}
    return Trajectory(system.domain, save, np.array(out), meta)
