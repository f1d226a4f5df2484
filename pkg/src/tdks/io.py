"""File formats: grid CSV, binary coefficient snapshots, trajectory CSV, sidecars.

Binary snapshot layout (little endian)::

    magic   4 bytes  b"TDKS"
    kind    uint32   1 = single snapshot, 2 = time series
    dim     uint32
    lengths dim x float64
    N_i     dim x uint32
    m       uint32
    count   uint32   (series only) number of snapshots
    times   count x float64 (series only)
    payload count x m x (float64 re, float64 im)
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .spectral import BoxDomain, SpectralField

__all__ = [
    "write_grid_csv",
    "read_grid_csv",
    "write_snapshot",
    "read_snapshot",
    "write_snapshot_series",
    "read_snapshot_series",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "read_csv_meta",
    "write_json",
    "read_json_file",
    "config_hash",
]

_MAGIC = b"TDKS"


def write_grid_csv(path, samples: np.ndarray, domain: BoxDomain) -> None:
    """Write grid samples as rows ``x_1..x_d, Re, Im``."""
    samples = np.asarray(samples)
    if samples.shape != domain.grid_points:
        raise ValueError("samples do not match the domain grid")
    mesh = domain.mesh()
    names = ["x", "y", "z"][: domain.dim]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["Re", "Im"])
        cols = [g.ravel() for g in mesh] + [np.real(samples).ravel(), np.imag(samples).ravel()]
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])


def read_grid_csv(path, domain: BoxDomain) -> np.ndarray:
    """Read grid samples written by :func:`write_grid_csv` (row order is ``ij``)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape != (int(np.prod(domain.grid_points)), domain.dim + 2):
        raise ValueError(f"{path}: expected {np.prod(domain.grid_points)} rows of {domain.dim + 2} columns")
    coords = data[:, : domain.dim]
    expected = np.stack([g.ravel() for g in domain.mesh()], axis=1)
    if not np.allclose(coords, expected, rtol=0, atol=1e-9 * max(domain.lengths)):
        raise ValueError(f"{path}: coordinates do not match the domain grid")
    values = data[:, domain.dim] + 1j * data[:, domain.dim + 1]
    return values.reshape(domain.grid_points)


def _header(domain: BoxDomain, m: int, kind: int) -> bytes:
    d = domain.dim
    return (
        _MAGIC
        + struct.pack("<II", kind, d)
        + struct.pack(f"<{d}d", *domain.lengths)
        + struct.pack(f"<{d}I", *domain.grid_points)
        + struct.pack("<I", m)
    )


def _read_header(buf: bytes, kind: int):
    if buf[:4] != _MAGIC:
        raise ValueError("not a snapshot file")
    got, d = struct.unpack_from("<II", buf, 4)
    if got != kind:
        raise ValueError(f"snapshot kind {got}, expected {kind}")
    off = 12
    lengths = struct.unpack_from(f"<{d}d", buf, off)
    off += 8 * d
    points = struct.unpack_from(f"<{d}I", buf, off)
    off += 4 * d
    (m,) = struct.unpack_from("<I", buf, off)
    off += 4
    return BoxDomain(tuple(lengths), tuple(points)), m, off


def _payload(coeffs: np.ndarray) -> bytes:
    c = np.asarray(coeffs, dtype=complex)
    return np.stack([c.real, c.imag], axis=-1).astype("<f8").tobytes()


def write_snapshot(path, field: SpectralField) -> None:
    Path(path).write_bytes(_header(field.domain, field.order, 1) + _payload(field.coeffs))


def read_snapshot(path) -> SpectralField:
    buf = Path(path).read_bytes()
    domain, m, off = _read_header(buf, 1)
    pairs = np.frombuffer(buf, dtype="<f8", count=2 * m, offset=off).reshape(m, 2)
    return SpectralField(domain, pairs[:, 0] + 1j * pairs[:, 1])


def write_snapshot_series(path, domain: BoxDomain, times, coeffs) -> None:
    times = np.asarray(times, dtype=float)
    coeffs = np.asarray(coeffs, dtype=complex)
    if coeffs.ndim != 2 or coeffs.shape[0] != times.size:
        raise ValueError("series needs one coefficient row per time")
    head = _header(domain, coeffs.shape[1], 2) + struct.pack("<I", times.size)
    Path(path).write_bytes(head + times.astype("<f8").tobytes() + _payload(coeffs))


def read_snapshot_series(path):
    """Return ``(domain, times, coeffs)`` from a series file."""
    buf = Path(path).read_bytes()
    domain, m, off = _read_header(buf, 2)
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    times = np.frombuffer(buf, dtype="<f8", count=count, offset=off).copy()
    off += 8 * count
    pairs = np.frombuffer(buf, dtype="<f8", count=2 * m * count, offset=off).reshape(count, m, 2)
    return domain, times, pairs[..., 0] + 1j * pairs[..., 1]


def _comment_lines(meta) -> str:
    return "".join(f"# {k}={v}\n" for k, v in (meta or {}).items())


def write_trajectory_csv(path, times, coeffs, meta=None) -> None:
    """Rows ``time, re_1, im_1, ..., re_m, im_m``, after ``# key=value`` lines for ``meta``."""
    times = np.asarray(times, dtype=float)
    coeffs = np.asarray(coeffs, dtype=complex)
    m = coeffs.shape[1]
    header = ["time"] + [f"{p}_{j}" for j in range(1, m + 1) for p in ("re", "im")]
    body = np.empty((times.size, 1 + 2 * m))
    body[:, 0] = times
    body[:, 1::2] = coeffs.real
    body[:, 2::2] = coeffs.imag
    np.savetxt(path, body, delimiter=",", header=_comment_lines(meta) + ",".join(header), comments="", fmt="%.17g")


def read_csv_meta(path) -> dict:
    """The ``# key=value`` lines at the top of a CSV artifact."""
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
    return meta


def read_trajectory_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=len(read_csv_meta(path)) + 1, ndmin=2)
    return data[:, 0], data[:, 1::2] + 1j * data[:, 2::2]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def read_json_file(path) -> dict:
    return json.loads(Path(path).read_text())


def config_hash(canonical: dict) -> str:
    """SHA-256 of a canonical (sorted, JSON-serialized) configuration mapping."""
    text = json.dumps(_jsonable(canonical), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()
