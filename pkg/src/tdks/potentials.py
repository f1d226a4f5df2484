"""Potentials: linear controls, Hartree and exchange-correlation terms, mollifiers.

Also hosts the empirical Lipschitz probes that measure the constants of the
nonlinear terms (Hartree growth and Lipschitz bounds, xc Lipschitz bounds,
Hardy-type convolution bounds).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.fft
import scipy.integrate
import scipy.signal

from .spectral import (
    BoxDomain,
    SpectralField,
    basis,
    grid_norms,
    norms,
)

__all__ = [
    "ControlSignal",
    "PotentialNorms",
    "PotentialSpec",
    "profile",
    "eval_V",
    "eval_W",
    "hartree",
    "hartree_grid",
    "XcModel",
    "XcEvaluationError",
    "Nonlinearity",
    "nonlinear_F",
    "MollifierSpec",
    "mollifier_norms",
    "mollifier_stencil",
    "mollify",
    "fit_mollifier_constants",
    "LipschitzReport",
    "LipschitzConstants",
    "INEQUALITIES",
    "random_field",
    "pair_sampler",
    "probe_quotient",
    "lipschitz_probe",
    "measure_constants",
]


# ---------------------------------------------------------------------------
# controls


@dataclass(frozen=True)
class ControlSignal:
    """Piecewise-constant, right-continuous control on [0, horizon].

    ``values[0]`` holds on [0, breakpoints[0]), ``values[k]`` on
    [breakpoints[k-1], breakpoints[k]), the last value up to the horizon.
    """

    breakpoints: tuple[float, ...]
    values: tuple[float, ...]
    horizon: float

    def __post_init__(self):
        bps = tuple(float(b) for b in self.breakpoints)
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "horizon", float(self.horizon))
        if not self.horizon > 0:
            raise ValueError("control horizon must be positive")
        if len(vals) != len(bps) + 1:
            raise ValueError("a control needs exactly one more value than breakpoints")
        if any(not math.isfinite(v) for v in vals):
            raise ValueError("control values must be finite")
        if any(b <= 0 or b >= self.horizon for b in bps):
            raise ValueError("breakpoints must lie strictly inside (0, horizon)")
        if any(b2 <= b1 for b1, b2 in zip(bps, bps[1:])):
            raise ValueError("breakpoints must be strictly increasing")

    @classmethod
    def constant(cls, value: float, horizon: float) -> "ControlSignal":
        return cls((), (value,), horizon)

    @classmethod
    def from_pairs(cls, pairs, horizon: float) -> "ControlSignal":
        """Build from ``(start_time, value)`` rows; the first start must be 0."""
        pairs = sorted((float(t), float(v)) for t, v in pairs)
        if not pairs or abs(pairs[0][0]) > 0:
            raise ValueError("control table must start at time 0")
        return cls(tuple(t for t, _ in pairs[1:]), tuple(v for _, v in pairs), horizon)

    @classmethod
    def from_csv(cls, path, horizon: float) -> "ControlSignal":
        data = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
        if data.shape[1] != 2:
            raise ValueError(f"{path}: control CSV needs two columns (breakpoint, value)")
        return cls.from_pairs(data.tolist(), horizon)

    def to_csv(self, path) -> None:
        rows = np.column_stack([(0.0,) + self.breakpoints, self.values])
        np.savetxt(path, rows, delimiter=",", header="breakpoint,value", fmt="%.17g")

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        slack = 1e-12 * self.horizon
        if np.any(t_arr < -slack) or np.any(t_arr > self.horizon + slack):
            raise ValueError(f"time outside control horizon [0, {self.horizon}]")
        idx = np.searchsorted(np.asarray(self.breakpoints), t_arr, side="right")
        out = np.asarray(self.values)[idx]
        return float(out) if np.ndim(out) == 0 else out

    @property
    def sup_abs(self) -> float:
        return max(abs(v) for v in self.values)

    def segment_starts(self) -> tuple[float, ...]:
        return (0.0,) + self.breakpoints


# ---------------------------------------------------------------------------
# potential profiles


_PROFILE_PARAMS = {
    "zero": set(),
    "constant": {"value"},
    "harmonic": {"kappa", "center"},
    "gaussian-well": {"depth", "width", "center"},
    "cosine": {"amplitude", "wavenumber"},
    "linear": {"slope", "center"},
    "kink": {"amplitude", "center"},
}


def profile(name: str, **params) -> Callable:
    """Named real-valued spatial profile, evaluated on coordinate arrays.

    ``zero``, ``constant(value)``, ``harmonic(kappa, center)``,
    ``gaussian-well(depth, width, center)``, ``cosine(amplitude, wavenumber)``,
    ``linear(slope, center)``, ``kink(amplitude, center)``.
    Centers default to the box center when called through a spec builder.
    """
    name = name.lower()
    allowed = _PROFILE_PARAMS.get(name)
    if allowed is None:
        raise ValueError(f"unknown profile {name!r}")
    unknown = set(params) - allowed
    if unknown:
        raise ValueError(f"profile {name!r} takes no parameter(s) {sorted(unknown)}")
    center = params.get("center")

    def _offsets(coords):
        c = center if center is not None else [0.0] * len(coords)
        c = np.broadcast_to(np.asarray(c, dtype=float), (len(coords),))
        return [np.asarray(x) - ci for x, ci in zip(coords, c)]

    if name == "zero":
        return lambda *x: np.zeros(np.broadcast(*x).shape)
    if name == "constant":
        value = float(params.get("value", 1.0))
        return lambda *x: np.full(np.broadcast(*x).shape, value)
    if name == "harmonic":
        kappa = float(params.get("kappa", 1.0))
        return lambda *x: kappa * sum(d**2 for d in _offsets(x))
    if name == "gaussian-well":
        depth = float(params.get("depth", 1.0))
        width = float(params.get("width", 0.5))
        return lambda *x: -depth * np.exp(-sum(d**2 for d in _offsets(x)) / (2 * width**2))
    if name == "cosine":
        amp = float(params.get("amplitude", 1.0))
        k = float(params.get("wavenumber", 2.0))
        return lambda *x: amp * sum(np.cos(k * xi) for xi in x)
    if name == "linear":
        slope = float(params.get("slope", 1.0))
        return lambda *x: slope * sum(_offsets(x))
    if name == "kink":
        amp = float(params.get("amplitude", 1.0))
        return lambda *x: amp * sum(np.abs(d) for d in _offsets(x))
    raise ValueError(f"unknown profile {name!r}")


def _closed_mesh(domain: BoxDomain, refine: int):
    axes = [np.linspace(0.0, L, refine * (n + 1) + 1) for L, n in zip(domain.lengths, domain.grid_points)]
    spacing = tuple(a[1] - a[0] for a in axes)
    return np.meshgrid(*axes, indexing="ij"), spacing


def _derivatives(f: np.ndarray, spacing):
    """Gradient components and Laplacian of a sampled field."""
    if f.ndim == 1:
        g = [np.gradient(f, spacing[0], edge_order=2)]
    else:
        g = list(np.gradient(f, *spacing, edge_order=2))
    lap = sum(np.gradient(gi, spacing[i], axis=i, edge_order=2) for i, gi in enumerate(g))
    return g, lap


@dataclass(frozen=True)
class PotentialNorms:
    """Grid estimates of sup-norms (sup over t via the control levels).

    ``V_*`` refer to the smooth part, ``W_*`` to the rough part, ``total_*``
    to the full linear potential V + W. The ``1,inf`` norm is the max of the
    value and gradient sup-norms; the ``2,inf`` norm additionally includes
    the Laplacian.
    """

    V_inf: float
    gradV_inf: float
    lapV_inf: float
    W_inf: float
    gradW_inf: float
    total_inf: float
    total_grad_inf: float
    total_lap_inf: float

    @property
    def V_1inf(self) -> float:
        return max(self.V_inf, self.gradV_inf)

    @property
    def V_2inf(self) -> float:
        return max(self.V_inf, self.gradV_inf, self.lapV_inf)

    @property
    def W_1inf(self) -> float:
        return max(self.W_inf, self.gradW_inf)

    def as_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out.update(V_1inf=self.V_1inf, V_2inf=self.V_2inf, W_1inf=self.W_1inf)
        return out


def _sup_norms(samples, spacing, rows):
    """Max value, gradient and Laplacian magnitude over coefficient rows."""
    derivs = [_derivatives(f, spacing) for f in samples]
    best = [0.0, 0.0, 0.0]
    for row in rows:
        val = sum(c * f for c, f in zip(row, samples))
        grad = [sum(c * d[0][i] for c, d in zip(row, derivs)) for i in range(len(spacing))]
        lap = sum(c * d[1] for c, d in zip(row, derivs))
        best[0] = max(best[0], float(np.max(np.abs(val))))
        best[1] = max(best[1], float(np.max(np.sqrt(sum(g**2 for g in grad)))))
        best[2] = max(best[2], float(np.max(np.abs(lap))))
    return best


def _as_field(value, domain: BoxDomain, mesh, name):
    """Return (interior grid samples, samples on ``mesh``) for a field spec."""
    if value is None:
        value = 0.0
    if callable(value):
        grid = np.broadcast_to(value(*domain.mesh()), domain.grid_points).astype(float)
        fine = np.broadcast_to(value(*mesh), mesh[0].shape).astype(float) if mesh else None
        return grid, fine
    if np.iscomplexobj(value):
        raise ValueError(f"{name}: potentials must be real")
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        grid = np.full(domain.grid_points, float(arr))
        fine = np.full(mesh[0].shape, float(arr)) if mesh else None
        return grid, fine
    if arr.shape != domain.grid_points:
        raise ValueError(f"{name}: grid field of shape {arr.shape} does not match {domain.grid_points}")
    return arr.copy(), None


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    """Linear potential V0 + u(t) Vu (smooth) plus W0 + w(t) Wu (rough).

    Build with :meth:`build`, which samples callables on the domain grid and,
    for norm estimation, on a refined closed grid.
    """

    domain: BoxDomain
    horizon: float
    V0: np.ndarray
    Vu: np.ndarray
    W0: np.ndarray
    Wu: np.ndarray
    u: ControlSignal
    w: ControlSignal
    norms: PotentialNorms

    @classmethod
    def build(
        cls,
        domain: BoxDomain,
        horizon: float,
        V0=None,
        Vu=None,
        u: Optional[ControlSignal] = None,
        W0=None,
        Wu=None,
        w: Optional[ControlSignal] = None,
        refine: int = 2,
    ) -> "PotentialSpec":
        u = u if u is not None else ControlSignal.constant(0.0, horizon)
        w = w if w is not None else ControlSignal.constant(0.0, horizon)
        for name, c in (("u", u), ("w", w)):
            if abs(c.horizon - horizon) > 1e-12 * horizon:
                raise ValueError(f"control {name} horizon {c.horizon} differs from {horizon}")
        mesh, fine_spacing = _closed_mesh(domain, refine)
        parts = [_as_field(v, domain, mesh, n) for n, v in (("V0", V0), ("Vu", Vu), ("W0", W0), ("Wu", Wu))]
        samples, spacing = [], fine_spacing
        if all(fine is not None for _, fine in parts):
            samples = [fine for _, fine in parts]
        else:
            samples, spacing = [grid for grid, _ in parts], domain.spacing
        for name, s in zip(("V0", "Vu", "W0", "Wu"), samples):
            if not np.all(np.isfinite(s)):
                raise ValueError(f"{name} has non-finite values")
        times = sorted(set(u.segment_starts()) | set(w.segment_starts()))
        levels = [(float(u(t)), float(w(t))) for t in times]
        V = _sup_norms(samples[:2], spacing, {(1.0, a) for a, _ in levels})
        W = _sup_norms(samples[2:], spacing, {(1.0, b) for _, b in levels})
        tot = _sup_norms(samples, spacing, {(1.0, a, 1.0, b) for a, b in levels})
        pn = PotentialNorms(V[0], V[1], V[2], W[0], W[1], tot[0], tot[1], tot[2])
        grids = [g for g, _ in parts]
        for g in grids:
            g.setflags(write=False)
        return cls(domain, float(horizon), *grids, u, w, pn)

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return tuple(sorted(set(self.u.breakpoints) | set(self.w.breakpoints)))

    @property
    def has_rough_part(self) -> bool:
        return bool(np.any(self.W0) or (np.any(self.Wu) and self.w.sup_abs > 0))

    def with_rough_part(self, W0: np.ndarray, Wu: np.ndarray) -> "PotentialSpec":
        """Copy with W0, Wu replaced by grid arrays; norms recomputed on the grid."""
        return PotentialSpec.build(self.domain, self.horizon, self.V0, self.Vu, self.u, W0, Wu, self.w)


def eval_V(spec: PotentialSpec, t: float) -> np.ndarray:
    """Smooth potential V0 + u(t) Vu on the grid."""
    return spec.V0 + spec.u(t) * spec.Vu


def eval_W(spec: PotentialSpec, t: float) -> np.ndarray:
    """Rough potential W0 + w(t) Wu on the grid."""
    return spec.W0 + spec.w(t) * spec.Wu


# ---------------------------------------------------------------------------
# Hartree


def _cell_average_inverse_distance(spacing) -> float:
    """Mean of 1/|x| over the cell centred at the origin (3D)."""
    a, b, c = spacing
    val, _ = scipy.integrate.dblquad(
        lambda z, y: np.arcsinh(0.5 * a / np.hypot(y, z)),
        0.0,
        0.5 * b,
        0.0,
        0.5 * c,
        epsabs=1e-14,
        epsrel=1e-13,
    )
    return 8.0 * val / (a * b * c)


_DENSE_HARTREE_LIMIT = 1024


@functools.lru_cache(maxsize=16)
def _hartree_kernel(domain: BoxDomain, softening: Optional[float]):
    shape = domain.grid_points
    padded = tuple(scipy.fft.next_fast_len(2 * n - 1, real=True) for n in shape)
    offsets = []
    for n, p, h in zip(shape, padded, domain.spacing):
        k = np.arange(p)
        k = np.where(k < n, k, k - p)  # wrap negative offsets
        offsets.append(k * h)
    r2 = sum(o**2 for o in np.meshgrid(*offsets, indexing="ij"))
    if softening is None:
        with np.errstate(divide="ignore"):
            kern = 1.0 / np.sqrt(r2)
        kern[(0,) * domain.dim] = _cell_average_inverse_distance(domain.spacing)
    else:
        kern = 1.0 / np.sqrt(r2 + softening**2)
    kern *= domain.cell_volume
    dense = None
    if int(np.prod(shape)) <= _DENSE_HARTREE_LIMIT:
        # gather the Toeplitz matrix K[n, n'] = kern(x_n - x_n') from the wrapped table
        idx = np.stack(np.meshgrid(*[np.arange(n) for n in shape], indexing="ij"), axis=-1).reshape(-1, len(shape))
        delta = (idx[:, None, :] - idx[None, :, :]) % np.asarray(padded)
        dense = kern[tuple(delta[..., i] for i in range(len(shape)))]
        dense.setflags(write=False)
    return scipy.fft.rfftn(kern), padded, dense


def _resolve_softening(domain: BoxDomain, softening: Optional[float]) -> Optional[float]:
    if softening is not None:
        if not softening > 0:
            raise ValueError("softening length must be positive")
        return float(softening)
    if domain.dim < 3:
        return 1.0
    return None


def hartree_grid(density: np.ndarray, domain: BoxDomain, softening: Optional[float] = None) -> np.ndarray:
    """Newtonian (or softened) potential of grid densities of shape ``(..., *grid)``.

    The density is extended by zero outside the box. In 3D the kernel is
    1/|x| with the singular node replaced by the cell average; in 1D and 2D
    the softened kernel 1/sqrt(|x|^2 + a^2) is used (default a = 1).
    """
    soft = _resolve_softening(domain, softening)
    khat, padded, dense = _hartree_kernel(domain, soft)
    d = domain.dim
    if dense is not None:
        density = np.asarray(density)
        batch = density.shape[: density.ndim - d]
        flat = density.reshape(batch + (-1,))
        return (flat @ dense.T).reshape(batch + domain.grid_points)
    axes = tuple(range(-d, 0))
    rho_hat = scipy.fft.rfftn(density, s=padded, axes=axes)
    out = scipy.fft.irfftn(rho_hat * khat, s=padded, axes=axes)
    return out[(Ellipsis,) + tuple(slice(0, n) for n in domain.grid_points)]


def hartree(phi: SpectralField, softening: Optional[float] = None) -> np.ndarray:
    """Hartree potential of |phi|^2 on the domain grid."""
    samples = phi.basis.to_grid(phi.coeffs)
    return hartree_grid(np.abs(samples) ** 2, phi.domain, softening)


# ---------------------------------------------------------------------------
# exchange-correlation


class XcEvaluationError(ValueError):
    """Raised when an xc model cannot be evaluated (e.g. table out of range)."""


_XC_KINDS = ("none", "saturating", "table")


@dataclass(frozen=True)
class XcModel:
    """Real density-dependent potential model.

    ``saturating``: c * rho / (1 + rho). ``table``: linear interpolation in a
    caller-supplied (density, value) table; densities beyond the table are an
    error. Declared constants are optional; undeclared ones are measured.
    """

    kind: str = "none"
    coefficient: float = 0.0
    table_density: tuple[float, ...] = ()
    table_values: tuple[float, ...] = ()
    K: Optional[float] = None
    K_tilde: Optional[float] = None
    K1: Optional[float] = None
    K2: Optional[float] = None

    def __post_init__(self):
        if self.kind not in _XC_KINDS:
            raise ValueError(f"unknown xc model {self.kind!r}; expected one of {_XC_KINDS}")
        if self.kind == "table":
            rho = np.asarray(self.table_density, dtype=float)
            if rho.size < 2 or rho.size != len(self.table_values) or np.any(np.diff(rho) <= 0):
                raise ValueError("xc table needs >= 2 increasing densities with matching values")
            if rho[0] > 0:
                raise ValueError("xc table must start at density 0")

    @property
    def active(self) -> bool:
        if self.kind == "none":
            return False
        if self.kind == "saturating":
            return self.coefficient != 0.0
        return bool(np.any(np.asarray(self.table_values) != 0.0))

    def potential(self, rho: np.ndarray) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        if self.kind == "none":
            return np.zeros_like(rho)
        if self.kind == "saturating":
            return self.coefficient * rho / (1.0 + rho)
        top = self.table_density[-1]
        if np.any(rho > top):
            raise XcEvaluationError(f"density {float(rho.max()):.6g} beyond xc table range {top}")
        return np.interp(rho, self.table_density, self.table_values)

    def analytic_lipschitz(self) -> Optional[float]:
        """Pointwise Lipschitz constant of z -> V(|z|^2) z when known in closed form."""
        if self.kind == "none":
            return 0.0
        if self.kind == "saturating":
            # d/dr of r^3/(1+r^2) peaks at r^2 = 3 with value 9/8
            return 1.125 * abs(self.coefficient)
        return None


# ---------------------------------------------------------------------------
# mollifier


def _sphere_area(d: int) -> float:
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def _bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = s < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


def _bump_derivative(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = s < 1.0
    si = s[inside]
    out[inside] = np.exp(-1.0 / (1.0 - si**2)) * (-2.0 * si / (1.0 - si**2) ** 2)
    return out


@functools.lru_cache(maxsize=8)
def _bump_mass(d: int) -> float:
    val, _ = scipy.integrate.quad(lambda r: r ** (d - 1) * float(_bump(r)), 0.0, 1.0, epsabs=0, epsrel=1e-13, limit=200)
    return _sphere_area(d) * val


@dataclass(frozen=True)
class MollifierSpec:
    """Radial bump exp(-1/(1-|x|^2)) normalized to unit mass, scaled to radius epsilon."""

    epsilon: float
    dim: int = 3

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError(f"mollifier radius must be positive, got {self.epsilon}")
        if self.dim not in (1, 2, 3):
            raise ValueError("mollifier dimension must be 1, 2 or 3")

    def __call__(self, r):
        """phi_eps evaluated at radius r."""
        e, d = self.epsilon, self.dim
        return e ** (-d) * _bump(np.asarray(r) / e) / _bump_mass(d)

    def radial_derivative(self, r):
        e, d = self.epsilon, self.dim
        return e ** (-d - 1) * _bump_derivative(np.asarray(r) / e) / _bump_mass(d)


def mollifier_norms(spec: MollifierSpec) -> tuple[float, float]:
    """(||phi_1||_L1, ||grad phi_eps||_L1) by radial quadrature.

    The first uses Gauss-Legendre nodes (independent of the quadrature that
    fixes the normalization); the second integrates the scaled profile
    directly over its support.
    """
    d = spec.dim
    area = _sphere_area(d)
    unit = replace(spec, epsilon=1.0)
    x, wts = np.polynomial.legendre.leggauss(400)
    r = 0.5 * (x + 1.0)
    l1 = area * 0.5 * float(np.sum(wts * r ** (d - 1) * unit(r)))
    e = spec.epsilon
    grad, _ = scipy.integrate.quad(
        lambda s: s ** (d - 1) * abs(float(spec.radial_derivative(s))),
        0.0,
        e,
        epsabs=0,
        epsrel=1e-13,
        limit=400,
    )
    return l1, area * grad


@functools.lru_cache(maxsize=32)
def mollifier_stencil(spec: MollifierSpec, domain: BoxDomain) -> np.ndarray:
    """Discrete kernel on the grid spacing, normalized so sum * cell volume = 1."""
    if spec.dim != domain.dim:
        raise ValueError("mollifier dimension differs from the domain dimension")
    if spec.epsilon >= min(domain.lengths):
        raise ValueError(f"mollifier radius {spec.epsilon} not smaller than the box {domain.lengths}")
    radius = [int(math.floor(spec.epsilon / h)) for h in domain.spacing]
    offs = np.meshgrid(*[h * np.arange(-R, R + 1) for R, h in zip(radius, domain.spacing)], indexing="ij")
    r = np.sqrt(sum(o**2 for o in offs))
    st = spec(r)
    total = st.sum() * domain.cell_volume
    if total <= 0:  # radius below the grid spacing: identity
        st = np.zeros_like(r)
        st[tuple(R for R in radius)] = 1.0
        total = domain.cell_volume
    st = st / total
    st.setflags(write=False)
    return st


_EXTENSIONS = ("zero", "odd", "even")


def _extend(target: np.ndarray, domain: BoxDomain, radius, extension: str) -> np.ndarray:
    d = domain.dim
    lead = target.ndim - d
    if extension == "zero":
        pad = [(0, 0)] * lead + [(R, R) for R in radius]
        return np.pad(target, pad)
    # add boundary nodes, then reflect about them
    if extension == "odd":
        g = np.pad(target, [(0, 0)] * lead + [(1, 1)] * d)
        pad = [(0, 0)] * lead + [(R, R) for R in radius]
        return np.pad(g, pad, mode="reflect", reflect_type="odd")
    g = target
    for ax in range(lead, target.ndim):
        f1 = np.take(g, [0], axis=ax)
        f2 = np.take(g, [1], axis=ax)
        f3 = np.take(g, [2], axis=ax)
        b1 = np.take(g, [-1], axis=ax)
        b2 = np.take(g, [-2], axis=ax)
        b3 = np.take(g, [-3], axis=ax)
        # quadratic extrapolation to the boundary node
        g = np.concatenate([3 * f1 - 3 * f2 + f3, g, 3 * b1 - 3 * b2 + b3], axis=ax)
    pad = [(0, 0)] * lead + [(R, R) for R in radius]
    return np.pad(g, pad, mode="reflect", reflect_type="even")


def mollify(target: np.ndarray, spec: MollifierSpec, domain: BoxDomain, extension: str = "zero") -> np.ndarray:
    """phi_eps convolved with an extension of ``target``, restricted to the grid.

    ``target`` has shape ``(..., *grid)``. ``extension`` selects how the field
    continues outside the box: ``zero`` (default), ``odd`` (reflection that
    keeps Dirichlet data in H1_0) or ``even`` (for potentials that do not
    vanish on the boundary).
    """
    if extension not in _EXTENSIONS:
        raise ValueError(f"unknown extension {extension!r}")
    target = np.asarray(target)
    d = domain.dim
    if target.shape[target.ndim - d :] != domain.grid_points:
        raise ValueError("target does not match the domain grid")
    st = mollifier_stencil(spec, domain)
    radius = [(n - 1) // 2 for n in st.shape]
    ext = _extend(target, domain, radius, extension)
    kern = st.reshape((1,) * (target.ndim - d) + st.shape) * domain.cell_volume
    axes = tuple(range(target.ndim - d, target.ndim))
    out = scipy.signal.fftconvolve(ext, kern, mode="valid", axes=axes)
    if extension != "zero":
        out = out[(Ellipsis,) + (slice(1, -1),) * d]
    if not np.iscomplexobj(target):
        out = out.real
    return out


def fit_mollifier_constants(
    psi0: np.ndarray, domain: BoxDomain, epsilons, extension: str = "odd"
) -> dict:
    """Smallest constants making the initial-data smoothing bounds hold on a ladder.

    Returns ``C0, C1, C2`` with ||psi_eps|| <= C0 ||phi_1|| ||psi0||,
    ||grad psi_eps|| <= C1 ||phi_1|| ||grad psi0|| and
    ||Delta psi_eps|| <= C2 ||grad phi_eps|| ||psi0||_H1 on every ladder entry.
    """
    base = grid_norms(psi0, domain)
    c0 = c1 = c2 = 0.0
    for eps in epsilons:
        spec = MollifierSpec(float(eps), domain.dim)
        l1, g1 = mollifier_norms(spec)
        sm = grid_norms(mollify(psi0, spec, domain, extension), domain)
        if base.l2 > 0:
            c0 = max(c0, sm.l2 / (l1 * base.l2))
        if base.grad > 0:
            c1 = max(c1, sm.grad / (l1 * base.grad))
        if base.h1 > 0:
            c2 = max(c2, sm.lap / (g1 * base.h1))
    return {"C0": c0, "C1": c1, "C2": c2}


# ---------------------------------------------------------------------------
# the nonlinearity


@dataclass(frozen=True)
class Nonlinearity:
    """F(Phi) = P[(V_H(Phi) + V_xc(Phi)) Phi] plus the smoothed rough xc term.

    ``rough_xc`` is the W_xc model of the rough-data problem; when a mollifier
    is set its product W_xc(Phi) Phi is smoothed with odd extension before
    projection.
    """

    hartree: bool = True
    softening: Optional[float] = None
    xc: XcModel = field(default_factory=XcModel)
    rough_xc: XcModel = field(default_factory=XcModel)
    mollifier: Optional[MollifierSpec] = None

    @property
    def active(self) -> bool:
        return self.hartree or self.xc.active or self.rough_xc.active

    def describe(self, domain: BoxDomain) -> dict:
        soft = _resolve_softening(domain, self.softening) if self.hartree else None
        return {
            "hartree": self.hartree,
            "hartree_kernel": ("softened" if soft is not None else "newtonian") if self.hartree else "off",
            "softening": soft,
            "xc": self.xc.kind,
            "xc_coefficient": self.xc.coefficient,
            "rough_xc": self.rough_xc.kind,
            "rough_xc_coefficient": self.rough_xc.coefficient,
            "mollifier_epsilon": None if self.mollifier is None else self.mollifier.epsilon,
        }

    def multiplier(self, samples: np.ndarray, domain: BoxDomain) -> np.ndarray:
        """Real potential V_H + V_xc for grid samples of shape ``(..., *grid)``."""
        rho = np.abs(samples) ** 2
        out = self.xc.potential(rho)
        if self.hartree:
            out = out + hartree_grid(rho, domain, self.softening)
        return out

    def grid_terms(self, samples: np.ndarray, domain: BoxDomain) -> np.ndarray:
        """Unprojected grid values of the nonlinear term."""
        out = self.multiplier(samples, domain) * samples
        if self.rough_xc.active:
            rough = self.rough_xc.potential(np.abs(samples) ** 2) * samples
            if self.mollifier is not None:
                rough = mollify(rough, self.mollifier, domain, "odd")
            out = out + rough
        return out

    def apply(self, coeffs: np.ndarray, domain: BoxDomain) -> np.ndarray:
        """Projected nonlinearity for coefficient arrays of shape ``(..., m)``."""
        coeffs = np.asarray(coeffs)
        if not self.active:
            return np.zeros(coeffs.shape, dtype=complex)
        b = basis(domain, coeffs.shape[-1])
        samples = b.to_grid(coeffs)
        return b.to_coeffs(self.grid_terms(samples, domain))

    def __call__(self, phi: SpectralField) -> SpectralField:
        return SpectralField(phi.domain, self.apply(phi.coeffs, phi.domain))

    def bind(self, domain: BoxDomain, m: int) -> Callable[[np.ndarray], np.ndarray]:
        """Evaluator ``coeffs -> apply(coeffs, domain)`` with basis and kernel resolved once.

        Uses dense synthesis and Hartree matrices when both are available,
        which removes per-call overhead in step-by-step integrators.
        """
        if not self.active:
            return lambda c: np.zeros(np.shape(c), dtype=complex)
        b = basis(domain, m)
        dense_h = None
        if self.hartree:
            dense_h = _hartree_kernel(domain, _resolve_softening(domain, self.softening))[2]
        if b._dense is None or self.rough_xc.active or (self.hartree and dense_h is None):
            return lambda c: self.apply(c, domain)
        S, St = b._dense, np.ascontiguousarray(b._dense.T)
        Ht = None if dense_h is None else np.ascontiguousarray(dense_h.T)
        vol = domain.cell_volume
        xc = self.xc if self.xc.active else None

        def evaluate(c):
            g = c @ S
            rho = g.real**2 + g.imag**2
            v = xc.potential(rho) if xc is not None else 0.0
            if Ht is not None:
                v = v + rho @ Ht
            return vol * ((v * g) @ St)

        return evaluate


def nonlinear_F(
    phi: SpectralField, xc: Optional[XcModel] = None, hartree: bool = True, softening: Optional[float] = None
) -> SpectralField:
    """Projection of (V_H(phi) + V_xc(phi)) phi onto the modes of ``phi``."""
    return Nonlinearity(hartree=hartree, softening=softening, xc=xc or XcModel())(phi)


# ---------------------------------------------------------------------------
# Lipschitz probes


INEQUALITIES = {
    # id: (constant name, description)
    "lipschitz1": ("C_a", "||f(P)-f(L)|| / ((|P|_H1^2+|L|_H1^2) ||P-L||)"),
    "hartree_growth": ("C_b", "||f(P)||_H2 / (|P|_H1^2 |P|_H2)"),
    "lipschitz_h2": ("C_c", "||f(P)-f(L)||_H2 / ((|P|_H2^2+|L|_H2^2) ||P-L||_H2)"),
    "xc_l2": ("K", "||g(P)-g(L)|| / ||P-L||"),
    "xc_h2": ("K_tilde", "||g(P)-g(L)||_H2 / ||P-L||_H2"),
    "rough_xc_l2": ("K1", "||w(P)-w(L)|| / ||P-L||"),
    "rough_xc_h1": ("K2", "||w(P)-w(L)||_H1 / ||P-L||_H1"),
    "hartree_gradient": ("C_hat_H", "||grad(f(P)-f(L))|| / ((|P|_H1^2+|L|_H1^2) ||P-L||_H1)"),
    "hardy": ("C_H", "sup_x |((P conj L) * 1/|x|)(x)| / (||P|| ||grad L||)"),
    "hartree_split_1": ("C_I", "||grad(V_H(P)(P-L))|| / (|P|_H1^2 ||P-L||_H1)"),
    "hartree_split_2": ("C_II", "||grad((V_H(P)-V_H(L))L)|| / ((|P|_H1^2+|L|_H1^2) ||P-L||_H1)"),
}

_DIFFERENCE_FREE = {"hartree_growth", "hardy"}


def random_field(rng: np.random.Generator, domain: BoxDomain, m: int, decay: float = 1.5, amplitude: float = 1.0) -> SpectralField:
    """Random field with coefficients damped like (1 + lambda)^(-decay), scaled to L2 norm ``amplitude``."""
    lam = basis(domain, m).eigenvalues
    c = (rng.standard_normal(m) + 1j * rng.standard_normal(m)) / (1.0 + lam) ** decay
    nrm = np.linalg.norm(c)
    if nrm == 0:
        return SpectralField.zeros(domain, m)
    return SpectralField(domain, amplitude * c / nrm)


def pair_sampler(domain: BoxDomain, m: int, amplitude=(0.1, 2.0), decay: float = 1.5, close_fraction: float = 0.5):
    """Sampler of field pairs: independent pairs and nearby perturbations.

    Amplitudes are log-uniform in ``amplitude``; a fraction of pairs have
    Lambda = Phi + small perturbation (relative size log-uniform in [1e-3, 1e-1]).
    """
    lo, hi = amplitude

    def draw(rng: np.random.Generator):
        a1 = math.exp(rng.uniform(math.log(lo), math.log(hi)))
        phi = random_field(rng, domain, m, decay, a1)
        if rng.uniform() < close_fraction:
            rel = math.exp(rng.uniform(math.log(1e-3), math.log(1e-1)))
            return phi, phi + random_field(rng, domain, m, decay, rel * a1)
        a2 = math.exp(rng.uniform(math.log(lo), math.log(hi)))
        return phi, random_field(rng, domain, m, decay, a2)

    return draw


def _grad_l2(samples: np.ndarray, domain: BoxDomain, m: int) -> float:
    """||grad P_m g|| for grid samples g."""
    b = basis(domain, m)
    c = b.to_coeffs(samples)
    return float(np.sqrt(np.sum(b.eigenvalues * np.abs(c) ** 2)))


def probe_quotient(inequality: str, phi: SpectralField, lam: SpectralField, nonlinearity: Optional[Nonlinearity] = None) -> Optional[float]:
    """Quotient (left side) / (structural right factor) for one pair; None when degenerate."""
    if inequality not in INEQUALITIES:
        raise ValueError(f"unknown inequality {inequality!r}")
    nl = nonlinearity or Nonlinearity()
    dom, m = phi.domain, phi.order
    b = basis(dom, m)
    diff = phi - lam
    nd = norms(diff)
    if inequality not in _DIFFERENCE_FREE and nd.h2 == 0.0:
        return None
    n_phi, n_lam = norms(phi), norms(lam)
    gp, gl = b.to_grid(phi.coeffs), b.to_grid(lam.coeffs)

    def hartree_term(g):
        return b.to_coeffs(hartree_grid(np.abs(g) ** 2, dom, nl.softening) * g)

    def proj_norms(c):
        return norms(SpectralField(dom, c))

    if inequality in ("lipschitz1", "lipschitz_h2", "hartree_gradient"):
        df = proj_norms(hartree_term(gp) - hartree_term(gl))
        if inequality == "lipschitz1":
            den = (n_phi.h1**2 + n_lam.h1**2) * nd.l2
            return df.l2 / den if den > 0 else None
        if inequality == "lipschitz_h2":
            den = (n_phi.h2**2 + n_lam.h2**2) * nd.h2
            return df.h2 / den if den > 0 else None
        den = (n_phi.h1**2 + n_lam.h1**2) * nd.h1
        return df.grad / den if den > 0 else None
    if inequality == "hartree_growth":
        den = n_phi.h1**2 * n_phi.h2
        return proj_norms(hartree_term(gp)).h2 / den if den > 0 else None
    if inequality in ("xc_l2", "xc_h2"):
        if nl.xc.kind == "none":
            return 0.0
        d = b.to_coeffs(nl.xc.potential(np.abs(gp) ** 2) * gp - nl.xc.potential(np.abs(gl) ** 2) * gl)
        dn = proj_norms(d)
        return dn.l2 / nd.l2 if inequality == "xc_l2" else dn.h2 / nd.h2
    if inequality in ("rough_xc_l2", "rough_xc_h1"):
        if nl.rough_xc.kind == "none":
            return 0.0
        w = nl.rough_xc
        d = b.to_coeffs(w.potential(np.abs(gp) ** 2) * gp - w.potential(np.abs(gl) ** 2) * gl)
        dn = proj_norms(d)
        return dn.l2 / nd.l2 if inequality == "rough_xc_l2" else dn.h1 / nd.h1
    if inequality == "hardy":
        den = n_phi.l2 * n_lam.grad
        if den == 0:
            return None
        conv = hartree_grid(gp * np.conj(gl), dom, nl.softening)
        return float(np.max(np.abs(conv))) / den
    if inequality == "hartree_split_1":
        den = n_phi.h1**2 * nd.h1
        if den == 0:
            return None
        vh = hartree_grid(np.abs(gp) ** 2, dom, nl.softening)
        return _grad_l2(vh * (gp - gl), dom, m) / den
    # hartree_split_2
    den = (n_phi.h1**2 + n_lam.h1**2) * nd.h1
    dv = hartree_grid(np.abs(gp) ** 2, dom, nl.softening) - hartree_grid(np.abs(gl) ** 2, dom, nl.softening)
    return _grad_l2(dv * gl, dom, m) / den


@dataclass
class LipschitzReport:
    """Sampled quotients of one inequality."""

    inequality: str
    quotients: np.ndarray
    skipped: int
    declared: Optional[float] = None
    tolerance: float = 1e-6

    @property
    def constant_name(self) -> str:
        return INEQUALITIES[self.inequality][0]

    @property
    def max(self) -> float:
        return float(np.max(self.quotients)) if self.quotients.size else 0.0

    @property
    def mean(self) -> float:
        return float(np.mean(self.quotients)) if self.quotients.size else 0.0

    @property
    def passed(self) -> Optional[bool]:
        if self.declared is None:
            return None
        return self.max <= self.declared * (1.0 + self.tolerance)

    def stabilized(self, burn_in: int = 50, factor: float = 3.0) -> bool:
        """No quotient after ``burn_in`` samples exceeds ``factor`` times the running max."""
        q = self.quotients
        if q.size <= burn_in:
            return True
        running = np.maximum.accumulate(q)
        return bool(np.all(q[burn_in:] <= factor * running[burn_in - 1 : -1]))

    def as_dict(self) -> dict:
        return {
            "inequality": self.inequality,
            "constant": self.constant_name,
            "trials": int(self.quotients.size + self.skipped),
            "skipped": self.skipped,
            "max": self.max,
            "mean": self.mean,
            "declared": self.declared,
            "passed": self.passed,
        }


def lipschitz_probe(
    inequality: str,
    sampler: Callable,
    trials: int,
    nonlinearity: Optional[Nonlinearity] = None,
    declared: Optional[float] = None,
    tolerance: float = 1e-6,
    seed: int = 0,
) -> LipschitzReport:
    """Sample ``trials`` pairs and record the empirical constant of ``inequality``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if inequality not in INEQUALITIES:
        raise ValueError(f"unknown inequality {inequality!r}")
    rng = np.random.default_rng(seed)
    out, skipped = [], 0
    for _ in range(trials):
        phi, lam = sampler(rng)
        q = probe_quotient(inequality, phi, lam, nonlinearity)
        if q is None:
            skipped += 1
        else:
            out.append(q)
    return LipschitzReport(inequality, np.asarray(out, dtype=float), skipped, declared, tolerance)


@dataclass(frozen=True)
class LipschitzConstants:
    """Constants of the nonlinear terms, with provenance per entry."""

    C_a: float = 0.0
    C_b: float = 0.0
    C_c: float = 0.0
    K: float = 0.0
    K_tilde: float = 0.0
    K1: float = 0.0
    K2: float = 0.0
    C_hat_H: float = 0.0
    provenance: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {k: getattr(self, k) for k in ("C_a", "C_b", "C_c", "K", "K_tilde", "K1", "K2", "C_hat_H")}
        out["provenance"] = dict(self.provenance)
        return out


def measure_constants(
    domain: BoxDomain,
    m: int,
    nonlinearity: Nonlinearity,
    trials: int = 100,
    seed: int = 0,
    amplitude=(0.1, 2.0),
    safety: float = 1.0,
) -> LipschitzConstants:
    """Empirical constants (times ``safety``) for every active term; declared values win."""
    sampler = pair_sampler(domain, m, amplitude)
    values, prov = {}, {}
    plan = [
        ("C_a", "lipschitz1", nonlinearity.hartree, None),
        ("C_b", "hartree_growth", nonlinearity.hartree, None),
        ("C_c", "lipschitz_h2", nonlinearity.hartree, None),
        ("C_hat_H", "hartree_gradient", nonlinearity.hartree, None),
        ("K", "xc_l2", nonlinearity.xc.active, nonlinearity.xc.K),
        ("K_tilde", "xc_h2", nonlinearity.xc.active, nonlinearity.xc.K_tilde),
        ("K1", "rough_xc_l2", nonlinearity.rough_xc.active, nonlinearity.rough_xc.K1),
        ("K2", "rough_xc_h1", nonlinearity.rough_xc.active, nonlinearity.rough_xc.K2),
    ]
    for name, ineq, active, declared in plan:
        if not active:
            values[name], prov[name] = 0.0, "inactive"
        elif declared is not None:
            values[name], prov[name] = float(declared), "declared"
        else:
            rep = lipschitz_probe(ineq, sampler, trials, nonlinearity, seed=seed)
            values[name], prov[name] = safety * rep.max, f"measured({ineq}, trials={trials}, safety={safety})"
    return LipschitzConstants(**values, provenance=prov)
