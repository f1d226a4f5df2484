"""Dirichlet sine eigenbasis on a box, spectral fields and their norms.

The basis functions are products of normalized sines

    psi_j(x) = prod_i sqrt(2 / L_i) sin(j_i pi x_i / L_i),   -Delta psi_j = lam_j psi_j,

with lam_j = sum_i (j_i pi / L_i)**2. Modes are enumerated by increasing
eigenvalue with ties broken lexicographically on the index tuple.

Real-space samples live on the interior nodes x_n = n L / (N + 1), n = 1..N.
On these nodes the discrete sine transform of type I diagonalizes the basis
exactly, so projection and synthesis are round-off accurate for any retained
mode with index at most N.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.fft

__all__ = [
    "BoxDomain",
    "SineBasis",
    "SpectralField",
    "NormReport",
    "TruncationReport",
    "Eigenfunction",
    "basis",
    "enumerate_modes",
    "eigenpair",
    "project",
    "synthesize",
    "norms",
    "grid_norms",
    "truncation_check",
    "norm_equivalence_constant",
    "coeffs_to_grid",
    "grid_to_coeffs",
]


@dataclass(frozen=True)
class BoxDomain:
    """Box (0, L_1) x ... x (0, L_d) with an interior sampling grid.

    Parameters
    ----------
    lengths : tuple of float
        Axis extents, all positive.
    grid_points : tuple of int
        Number of interior sample nodes per axis (at least 4).
    """

    lengths: tuple[float, ...]
    grid_points: tuple[int, ...]

    def __post_init__(self):
        lengths = tuple(float(v) for v in np.atleast_1d(self.lengths))
        points = tuple(int(v) for v in np.atleast_1d(self.grid_points))
        if len(points) == 1 and len(lengths) > 1:
            points = points * len(lengths)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "grid_points", points)
        if not 1 <= len(lengths) <= 3:
            raise ValueError(f"dimension must be 1, 2 or 3, got {len(lengths)}")
        if len(points) != len(lengths):
            raise ValueError("lengths and grid_points must have the same length")
        if not all(math.isfinite(v) and v > 0 for v in lengths):
            raise ValueError(f"box lengths must be positive, got {lengths}")
        if not all(n >= 4 for n in points):
            raise ValueError(f"grid_points must be >= 4 per axis, got {points}")

    @property
    def dim(self) -> int:
        return len(self.lengths)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / (n + 1) for L, n in zip(self.lengths, self.grid_points))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.grid_points

    @property
    def center(self) -> np.ndarray:
        return 0.5 * np.asarray(self.lengths)

    @property
    def lambda_min(self) -> float:
        return float(sum((math.pi / L) ** 2 for L in self.lengths))

    def axes(self) -> list[np.ndarray]:
        """Interior node coordinates along each axis."""
        return [h * np.arange(1, n + 1) for h, n in zip(self.spacing, self.grid_points)]

    def mesh(self) -> list[np.ndarray]:
        """Coordinate arrays of the full grid (``indexing='ij'``)."""
        return np.meshgrid(*self.axes(), indexing="ij")

    def refined(self, factor: int = 2) -> "BoxDomain":
        """Same box with each axis subdivided ``factor`` times more finely."""
        return BoxDomain(self.lengths, tuple(factor * (n + 1) - 1 for n in self.grid_points))


def _mode_bound(lengths: Sequence[float], m: int) -> np.ndarray:
    """Index tuples of the m lowest modes (increasing eigenvalue, lexicographic ties)."""
    lengths = np.asarray(lengths, dtype=float)
    K = max(2, int(math.ceil(m ** (1.0 / len(lengths)))) + 1)
    while True:
        grids = np.meshgrid(*[np.arange(1, K + 1)] * len(lengths), indexing="ij")
        idx = np.stack([g.ravel() for g in grids], axis=1)
        lam = (((idx * np.pi) / lengths) ** 2).sum(axis=1)
        # lexsort: last key is primary
        keys = [idx[:, i] for i in range(idx.shape[1] - 1, -1, -1)] + [lam]
        order = np.lexsort(keys)
        if len(order) >= m:
            cutoff = float(np.min((((K + 1) * np.pi) / lengths) ** 2))
            if lam[order[m - 1]] < cutoff:
                return idx[order[:m]]
        K *= 2


@functools.lru_cache(maxsize=64)
def enumerate_modes(lengths: tuple[float, ...], m: int) -> np.ndarray:
    """First ``m`` mode indices of the box, shape ``(m, dim)``."""
    if m < 1:
        raise ValueError(f"mode count must be >= 1, got {m}")
    out = _mode_bound(lengths, m)
    out.setflags(write=False)
    return out


_DENSE_GRID_LIMIT = 4096


class SineBasis:
    """Cached transform data for the first ``m`` modes on a domain grid."""

    def __init__(self, domain: BoxDomain, m: int):
        self.domain = domain
        self.m = int(m)
        self.modes = enumerate_modes(domain.lengths, self.m)
        needed = 2 * self.modes.max(axis=0) + 2
        too_coarse = [i for i in range(domain.dim) if domain.grid_points[i] < needed[i]]
        if too_coarse:
            raise ValueError(
                f"grid {domain.grid_points} too coarse for {self.m} modes: "
                f"need at least {tuple(int(v) for v in needed)} points per axis"
            )
        L = np.asarray(domain.lengths)
        self.eigenvalues = (((self.modes * np.pi) / L) ** 2).sum(axis=1)
        # per-axis squared wavenumbers, used for the H2 mixed-derivative sums
        self.wavenumbers_sq = ((self.modes * np.pi) / L) ** 2
        self.flat_index = np.ravel_multi_index(tuple((self.modes - 1).T), domain.grid_points)
        self.synth_scale = float(np.prod([math.sqrt(2.0 / Li) / 2.0 for Li in domain.lengths]))
        self.proj_scale = float(
            np.prod([h * math.sqrt(2.0 / Li) / 2.0 for h, Li in zip(domain.spacing, domain.lengths)])
        )
        for arr in (self.eigenvalues, self.wavenumbers_sq, self.flat_index):
            arr.setflags(write=False)
        # small grids: dense synthesis matrix beats the transform's call overhead
        size = int(np.prod(domain.grid_points))
        self._dense = None
        if size <= _DENSE_GRID_LIMIT and self.m * size <= 2**20:
            axes = domain.axes()
            rows = np.ones((self.m, 1))
            for i in range(domain.dim):
                f = np.sqrt(2.0 / domain.lengths[i]) * np.sin(np.outer(self.modes[:, i] * np.pi / domain.lengths[i], axes[i]))
                rows = (rows[:, :, None] * f[:, None, :]).reshape(self.m, -1)
            rows.setflags(write=False)
            self._dense = rows

    def to_grid(self, coeffs: np.ndarray) -> np.ndarray:
        """Synthesize grid samples from coefficient arrays of shape ``(..., m)``."""
        coeffs = np.asarray(coeffs)
        batch = coeffs.shape[:-1]
        if self._dense is not None:
            return (coeffs @ self._dense).reshape(batch + self.domain.grid_points)
        size = int(np.prod(self.domain.grid_points))
        full = np.zeros(batch + (size,), dtype=np.result_type(coeffs.dtype, np.float64))
        full[..., self.flat_index] = coeffs
        full = full.reshape(batch + self.domain.grid_points)
        axes = tuple(range(-self.domain.dim, 0))
        return self.synth_scale * scipy.fft.dstn(full, type=1, axes=axes)

    def to_coeffs(self, samples: np.ndarray) -> np.ndarray:
        """Project grid samples of shape ``(..., *grid)`` onto the retained modes."""
        samples = np.asarray(samples)
        d = self.domain.dim
        if samples.shape[samples.ndim - d :] != self.domain.grid_points:
            raise ValueError(
                f"sample shape {samples.shape} does not end with grid {self.domain.grid_points}"
            )
        batch = samples.shape[: samples.ndim - d]
        if self._dense is not None:
            flat = samples.reshape(batch + (-1,))
            return self.domain.cell_volume * (flat @ self._dense.T)
        axes = tuple(range(-d, 0))
        full = scipy.fft.dstn(samples, type=1, axes=axes)
        full = full.reshape(batch + (-1,))
        return self.proj_scale * full[..., self.flat_index]


@functools.lru_cache(maxsize=64)
def basis(domain: BoxDomain, m: int) -> SineBasis:
    """Shared :class:`SineBasis` for ``(domain, m)``."""
    return SineBasis(domain, m)


def coeffs_to_grid(coeffs: np.ndarray, domain: BoxDomain) -> np.ndarray:
    """Batched synthesis; the mode count is read from the last axis."""
    coeffs = np.asarray(coeffs)
    return basis(domain, coeffs.shape[-1]).to_grid(coeffs)


def grid_to_coeffs(samples: np.ndarray, domain: BoxDomain, m: int) -> np.ndarray:
    """Batched projection of grid samples onto the first ``m`` modes."""
    return basis(domain, m).to_coeffs(samples)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Coefficients of a field in the first ``m`` sine modes of a box."""

    domain: BoxDomain
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex).reshape(-1)
        if c.size < 1:
            raise ValueError("a spectral field needs at least one mode")
        if not np.all(np.isfinite(c)):
            raise ValueError("spectral coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def order(self) -> int:
        return self.coeffs.size

    @property
    def basis(self) -> SineBasis:
        return basis(self.domain, self.order)

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.basis.eigenvalues

    @classmethod
    def zeros(cls, domain: BoxDomain, m: int) -> "SpectralField":
        return cls(domain, np.zeros(m, dtype=complex))

    @classmethod
    def unit(cls, domain: BoxDomain, m: int, position: int) -> "SpectralField":
        """Field equal to the basis function at (0-based) enumeration ``position``."""
        c = np.zeros(m, dtype=complex)
        c[position] = 1.0
        return cls(domain, c)

    def truncate(self, m: int) -> "SpectralField":
        if not 1 <= m <= self.order:
            raise ValueError(f"cannot truncate order {self.order} field to {m} modes")
        return SpectralField(self.domain, self.coeffs[:m])

    def pad(self, m: int) -> "SpectralField":
        if m < self.order:
            raise ValueError("pad target smaller than current order")
        c = np.zeros(m, dtype=complex)
        c[: self.order] = self.coeffs
        return SpectralField(self.domain, c)

    def _check(self, other: "SpectralField"):
        if self.domain != other.domain or self.order != other.order:
            raise ValueError("spectral fields live on different domains or orders")

    def __add__(self, other: "SpectralField") -> "SpectralField":
        self._check(other)
        return SpectralField(self.domain, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        self._check(other)
        return SpectralField(self.domain, self.coeffs - other.coeffs)

    def __mul__(self, scalar: complex) -> "SpectralField":
        return SpectralField(self.domain, complex(scalar) * self.coeffs)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return SpectralField(self.domain, -self.coeffs)

    def inner(self, other: "SpectralField") -> complex:
        """L2 inner product (self, other) = sum c_j conj(d_j)."""
        self._check(other)
        return complex(np.vdot(other.coeffs, self.coeffs))


@dataclass(frozen=True)
class NormReport:
    l2: float
    grad: float
    lap: float
    h1: float
    h2: float
    h_minus1: float


def _norms_from(coeffs: np.ndarray, lam: np.ndarray, k2: np.ndarray) -> NormReport:
    a = np.abs(coeffs) ** 2
    l2 = a.sum()
    grad = (lam * a).sum()
    lap = (lam**2 * a).sum()
    # sum over |alpha| = 2 of |D^alpha psi_j|^2: pure second derivatives and
    # mixed pairs (i < k) once each
    second = (k2**2).sum(axis=1)
    for i in range(k2.shape[1]):
        for k in range(i + 1, k2.shape[1]):
            second = second + k2[:, i] * k2[:, k]
    h2 = l2 + grad + (second * a).sum()
    hm1 = (a / (1.0 + lam)).sum()
    return NormReport(
        l2=math.sqrt(l2),
        grad=math.sqrt(grad),
        lap=math.sqrt(lap),
        h1=math.sqrt(l2 + grad),
        h2=math.sqrt(h2),
        h_minus1=math.sqrt(hm1),
    )


def norms(field: SpectralField) -> NormReport:
    """All spectral norms of a field."""
    b = field.basis
    return _norms_from(field.coeffs, b.eigenvalues, b.wavenumbers_sq)


def grid_norms(samples: np.ndarray, domain: BoxDomain) -> NormReport:
    """Norms of grid samples using every sine mode the grid supports.

    This is the discrete stand-in for the norms of an unprojected field.
    """
    samples = np.asarray(samples)
    d = domain.dim
    full = scipy.fft.dstn(samples, type=1, axes=tuple(range(d)))
    scale = np.prod([h * math.sqrt(2.0 / L) / 2.0 for h, L in zip(domain.spacing, domain.lengths)])
    c = scale * full
    ks = np.meshgrid(
        *[(np.arange(1, n + 1) * np.pi / L) ** 2 for n, L in zip(domain.grid_points, domain.lengths)],
        indexing="ij",
    )
    k2 = np.stack([k.ravel() for k in ks], axis=1)
    return _norms_from(c.ravel(), k2.sum(axis=1), k2)


@dataclass(frozen=True)
class Eigenfunction:
    """Evaluable product-of-sines eigenfunction."""

    lengths: tuple[float, ...]
    index: tuple[int, ...]

    def __call__(self, *coords):
        out = 1.0
        for x, L, j in zip(coords, self.lengths, self.index):
            out = out * math.sqrt(2.0 / L) * np.sin(j * np.pi * np.asarray(x) / L)
        return out


def eigenpair(domain: BoxDomain, j) -> tuple[float, Eigenfunction]:
    """Eigenvalue and eigenfunction for the mode index tuple ``j``."""
    j = tuple(int(v) for v in np.atleast_1d(j))
    if len(j) != domain.dim:
        raise ValueError(f"mode index {j} does not match dimension {domain.dim}")
    if any(v < 1 for v in j):
        raise ValueError(f"mode index components must be >= 1, got {j}")
    lam = float(sum((v * math.pi / L) ** 2 for v, L in zip(j, domain.lengths)))
    return lam, Eigenfunction(domain.lengths, j)


def project(source, domain: BoxDomain, m: int) -> SpectralField:
    """Coefficients (source, psi_j) of the first ``m`` modes.

    ``source`` is either a callable taking one coordinate array per axis or
    an array of samples on the domain grid.
    """
    b = basis(domain, m)
    if callable(source):
        samples = np.broadcast_to(source(*domain.mesh()), domain.grid_points)
    else:
        samples = np.asarray(source)
        if samples.shape != domain.grid_points:
            raise ValueError(f"samples of shape {samples.shape} do not match grid {domain.grid_points}")
    return SpectralField(domain, b.to_coeffs(samples))


def synthesize(field: SpectralField) -> np.ndarray:
    """Grid samples of a spectral field."""
    return field.basis.to_grid(field.coeffs)


@dataclass(frozen=True)
class TruncationReport:
    l2_margin: float
    grad_margin: float
    lap_margin: float

    @property
    def ok(self) -> bool:
        return min(self.l2_margin, self.grad_margin, self.lap_margin) >= 0.0

    def __bool__(self) -> bool:
        return self.ok


def truncation_check(full: SpectralField, truncated: SpectralField) -> TruncationReport:
    """Margins ``norm(full) - norm(truncated)`` in L2, gradient and Laplacian."""
    if full.domain != truncated.domain:
        raise ValueError("fields live on different domains")
    if truncated.order > full.order:
        raise ValueError("truncated field has more modes than the full field")
    if not np.array_equal(full.coeffs[: truncated.order], truncated.coeffs):
        raise ValueError("truncated field is not the leading-mode restriction of full")
    nf, nt = norms(full), norms(truncated)
    return TruncationReport(nf.l2 - nt.l2, nf.grad - nt.grad, nf.lap - nt.lap)


def norm_equivalence_constant(domain: BoxDomain) -> float:
    """C_Z with ||f||_H2 <= C_Z ||Delta f|| for every sine-series field."""
    lam = domain.lambda_min
    return math.sqrt(1.0 + 1.0 / lam + 1.0 / lam**2)
