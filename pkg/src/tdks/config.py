"""Run configuration: INI parsing, validation, hashing and problem construction.

Sections mirror the modules (``spectral``, ``potentials``, ``galerkin``,
``energy``, ``fixedpoint``, ``cli``). Unknown sections or keys are errors.
Numbers may use ``pi`` and simple arithmetic (``pi/2``, ``2*pi``). Field
specifications take the form ``name:key=value,key=value`` where vector values
separate components with ``;``; a value ending in ``.csv`` names a grid file
relative to the configuration file.
"""

from __future__ import annotations

import ast
import configparser
import hashlib
import math
import operator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from .io import config_hash, read_grid_csv, read_snapshot
from .potentials import (
    ControlSignal,
    LipschitzConstants,
    MollifierSpec,
    Nonlinearity,
    PotentialSpec,
    XcModel,
    fit_mollifier_constants,
    profile,
)
from .spectral import BoxDomain, norms, project

__all__ = ["ConfigError", "RunConfig", "parse_number", "parse_spec", "initial_profile", "SCHEMA"]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


# ---------------------------------------------------------------------------
# value parsers

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.UAdd: operator.pos, ast.USub: operator.neg}


def parse_number(text: str) -> float:
    """Evaluate a numeric literal with optional ``pi`` and + - * / ** arithmetic."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            return _UNOPS[type(node.op)](ev(node.operand))
        raise ValueError(f"not a number: {text!r}")

    try:
        return float(ev(ast.parse(text.strip(), mode="eval")))
    except (SyntaxError, ZeroDivisionError, TypeError) as exc:
        raise ValueError(f"not a number: {text!r}") from exc


def _vector(text: str) -> tuple[float, ...]:
    return tuple(parse_number(p) for p in text.replace(";", ",").split(",") if p.strip())


def _ints(text: str) -> tuple[int, ...]:
    vals = _vector(text)
    if any(v != int(v) for v in vals):
        raise ValueError(f"expected integers, got {text!r}")
    return tuple(int(v) for v in vals)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _optional_number(text: str) -> Optional[float]:
    t = text.strip().lower()
    return None if t in ("", "none", "auto") else parse_number(t)


def parse_spec(text: str) -> tuple[str, dict]:
    """Split ``name:key=value,...`` into the name and a parameter dict (numbers, vectors or strings)."""
    text = text.strip()
    name, _, rest = text.partition(":")
    params = {}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        key, eq, value = item.partition("=")
        if not eq:
            raise ValueError(f"parameter {item!r} lacks '='")
        value = value.strip()
        try:
            vec = _vector(value)
            params[key.strip()] = vec[0] if len(vec) == 1 and ";" not in value else vec
        except ValueError:
            params[key.strip()] = value
    return name.strip().lower(), params


# ---------------------------------------------------------------------------
# schema

_Parser = Callable[[str], Any]

SCHEMA: dict[str, dict[str, tuple[_Parser, str]]] = {
    "spectral": {
        "dim": (int, "1"),
        "lengths": (_vector, "pi"),
        "grid": (_ints, "64"),
        "m": (int, "16"),
    },
    "potentials": {
        "V0": (str, "zero"),
        "Vu": (str, "zero"),
        "u": (str, "0"),
        "W0": (str, "zero"),
        "Wu": (str, "zero"),
        "w": (str, "0"),
        "hartree": (_bool, "false"),
        "softening": (_optional_number, "auto"),
        "xc": (str, "none"),
        "rough_xc": (str, "none"),
    },
    "galerkin": {
        "T": (parse_number, "1"),
        "dt": (parse_number, "1e-3"),
    },
    "energy": {
        "check": (_bool, "true"),
        "lemma_C0": (parse_number, "1"),
        "lemma_C1": (parse_number, "1"),
        "lemma_C2": (str, "fit"),
        "lemma_C3": (parse_number, "1"),
        "lemma_C4": (parse_number, "2**0.5"),
        "lemma_C5": (str, "auto"),
    },
    "fixedpoint": {
        "mode": (str, "practical"),
        "tol": (parse_number, "1e-11"),
        "max_iter": (int, "200"),
        "B": (parse_number, "1"),
        "c": (parse_number, "1"),
        "lipschitz_trials": (int, "100"),
        "lipschitz": (str, ""),
        "max_steps": (int, "100000"),
    },
    "cli": {
        "psi0": (str, "sine:index=1"),
        "normalize": (_bool, "true"),
        "scale": (parse_number, "1"),
        "epsilon": (_optional_number, "none"),
        "seed": (int, "0"),
        "out": (str, "out"),
        "study_m": (_ints, "4,8,16"),
        "study_m_ref": (int, "0"),
        "study_dt": (_vector, ""),
        "study_eps": (_vector, "0.2,0.1,0.05"),
        "study_trials": (int, "200"),
        "study_T": (_optional_number, "none"),
    },
}


def _check_positive(cfg: "RunConfig"):
    v = cfg.values
    problems = []
    if v["spectral"]["dim"] not in (1, 2, 3):
        problems.append("spectral.dim: must be 1, 2 or 3")
    for key in ("lengths", "grid"):
        n = len(v["spectral"][key])
        if n != v["spectral"]["dim"]:
            problems.append(f"spectral.{key}: expected {v['spectral']['dim']} entries, got {n}")
    if any(L <= 0 for L in v["spectral"]["lengths"]):
        problems.append("spectral.lengths: must be positive")
    if any(n < 3 for n in v["spectral"]["grid"]):
        problems.append("spectral.grid: need at least 3 points per axis")
    if v["spectral"]["m"] < 1:
        problems.append("spectral.m: must be >= 1")
    if not (v["galerkin"]["T"] > 0 and math.isfinite(v["galerkin"]["T"])):
        problems.append("galerkin.T: must be positive and finite")
    if not v["galerkin"]["dt"] > 0:
        problems.append(f"galerkin.dt: must be positive, got {v['galerkin']['dt']}")
    if v["fixedpoint"]["mode"] not in ("certified", "practical"):
        problems.append("fixedpoint.mode: must be 'certified' or 'practical'")
    if not v["fixedpoint"]["tol"] > 0:
        problems.append("fixedpoint.tol: must be positive")
    if v["fixedpoint"]["max_iter"] < 1:
        problems.append("fixedpoint.max_iter: must be >= 1")
    if v["fixedpoint"]["B"] <= 0 or v["fixedpoint"]["c"] <= 0:
        problems.append("fixedpoint.B, fixedpoint.c: must be positive")
    eps = v["cli"]["epsilon"]
    if eps is not None and not eps > 0:
        problems.append("cli.epsilon: must be positive")
    if problems:
        raise ConfigError("; ".join(problems))


@dataclass
class RunConfig:
    """Validated configuration values plus the directory used for relative paths."""

    values: dict
    base_dir: Path = field(default_factory=Path.cwd)
    source: str = "<string>"

    # -- construction -----------------------------------------------------

    @classmethod
    def from_string(cls, text: str, base_dir=None, source: str = "<string>") -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        parser.optionxform = str
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}") from exc
        raw = {s: dict(parser[s]) for s in parser.sections()}
        return cls.from_mapping(raw, base_dir, source)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_string(text, path.parent, str(path))

    @classmethod
    def from_mapping(cls, raw: dict, base_dir=None, source: str = "<mapping>") -> "RunConfig":
        values = {}
        for section in raw:
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]")
        for section, keys in SCHEMA.items():
            given = {k: str(v) for k, v in raw.get(section, {}).items()}
            unknown = sorted(set(given) - set(keys))
            if unknown:
                raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
            out = {}
            for key, (parse, default) in keys.items():
                text = given.get(key, default)
                try:
                    out[key] = parse(text) if text != "" or parse is str else ()
                except (ValueError, TypeError) as exc:
                    raise ConfigError(f"{section}.{key}: {exc}") from exc
            values[section] = out
        cfg = cls(values, Path(base_dir) if base_dir is not None else Path.cwd(), source)
        _check_positive(cfg)
        return cfg

    def override(self, section: str, key: str, value) -> "RunConfig":
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown field {section}.{key}")
        values = {s: dict(v) for s, v in self.values.items()}
        values[section][key] = value
        cfg = RunConfig(values, self.base_dir, self.source)
        _check_positive(cfg)
        return cfg

    # -- identity -----------------------------------------------------------

    def _referenced_files(self) -> dict:
        out = {}
        for section, key in (("potentials", k) for k in ("V0", "Vu", "W0", "Wu", "u", "w")):
            self._maybe_file(self.values[section][key], out)
        self._maybe_file(self.values["cli"]["psi0"], out)
        return out

    def _maybe_file(self, text, out):
        if isinstance(text, str) and (text.endswith(".csv") or text.endswith(".bin")):
            p = self.resolve(text)
            try:
                out[text] = hashlib.sha256(p.read_bytes()).hexdigest()
            except OSError as exc:
                raise ConfigError(f"cannot read referenced file {p}: {exc}") from exc

    def canonical(self) -> dict:
        """Hashable content: values (file references replaced by their digests), output path excluded."""
        files = self._referenced_files()
        vals = {}
        for s, d in self.values.items():
            vals[s] = {k: (f"sha256:{files[v]}" if isinstance(v, str) and v in files else v) for k, v in d.items() if not (s == "cli" and k == "out")}
        return vals

    @property
    def hash(self) -> str:
        return config_hash(self.canonical())

    def to_ini(self, absolute_paths: bool = False) -> str:
        """INI text that parses back to the same values (file references made absolute on request)."""
        files = self._referenced_files() if absolute_paths else {}
        lines = []
        for section, keys in self.values.items():
            lines.append(f"[{section}]")
            for k, v in keys.items():
                if isinstance(v, str) and v in files:
                    v = str(self.resolve(v).resolve())
                if isinstance(v, tuple):
                    v = ",".join(repr(x) for x in v)
                elif v is None:
                    v = "none"
                elif isinstance(v, bool):
                    v = str(v).lower()
                lines.append(f"{k} = {v}")
            lines.append("")
        return "\n".join(lines)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    # -- builders -------------------------------------------------------------

    @property
    def T(self) -> float:
        return self.values["galerkin"]["T"]

    @property
    def dt(self) -> float:
        return self.values["galerkin"]["dt"]

    @property
    def epsilon(self) -> Optional[float]:
        return self.values["cli"]["epsilon"]

    @property
    def m(self) -> int:
        return self.values["spectral"]["m"]

    def domain(self) -> BoxDomain:
        s = self.values["spectral"]
        return BoxDomain(tuple(s["lengths"]), tuple(s["grid"]))

    def _field(self, text: str, domain: BoxDomain, name: str):
        if text.endswith(".csv"):
            vals = read_grid_csv(self.resolve(text), domain)
            if np.any(vals.imag != 0):
                raise ConfigError(f"potentials.{name}: file values must be real")
            return vals.real
        kind, params = parse_spec(text)
        if "center" not in params and kind in ("harmonic", "gaussian-well", "linear", "kink"):
            params["center"] = tuple(domain.center)
        try:
            return profile(kind, **params)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"potentials.{name}: {exc}") from exc

    def _control(self, text: str, name: str) -> ControlSignal:
        T = self.T
        text = text.strip()
        try:
            if text.endswith(".csv"):
                return ControlSignal.from_csv(self.resolve(text), T)
            if ":" not in text:
                return ControlSignal.constant(parse_number(text), T)
            pairs = []
            for item in filter(None, (p.strip() for p in text.split(","))):
                t, _, v = item.partition(":")
                pairs.append((parse_number(t), parse_number(v)))
            return ControlSignal.from_pairs(pairs, T)
        except (ValueError, OSError) as exc:
            raise ConfigError(f"potentials.{name}: {exc}") from exc

    def potentials(self, domain: Optional[BoxDomain] = None) -> PotentialSpec:
        domain = domain or self.domain()
        p = self.values["potentials"]
        try:
            return PotentialSpec.build(
                domain,
                self.T,
                V0=self._field(p["V0"], domain, "V0"),
                Vu=self._field(p["Vu"], domain, "Vu"),
                u=self._control(p["u"], "u"),
                W0=self._field(p["W0"], domain, "W0"),
                Wu=self._field(p["Wu"], domain, "Wu"),
                w=self._control(p["w"], "w"),
            )
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"potentials: {exc}") from exc

    @staticmethod
    def _xc(text: str, name: str) -> XcModel:
        kind, params = parse_spec(text)
        try:
            if kind == "none":
                return XcModel()
            if kind == "saturating":
                extra = {k: float(params[k]) for k in ("K", "K_tilde", "K1", "K2") if k in params}
                unknown = set(params) - {"coefficient", "K", "K_tilde", "K1", "K2"}
                if unknown:
                    raise ValueError(f"unknown parameters {sorted(unknown)}")
                return XcModel("saturating", float(params.get("coefficient", -1.0)), **extra)
            if kind == "table":
                dens = params.get("density", ())
                vals = params.get("values", ())
                dens = (dens,) if isinstance(dens, float) else tuple(dens)
                vals = (vals,) if isinstance(vals, float) else tuple(vals)
                return XcModel("table", table_density=dens, table_values=vals)
            raise ValueError(f"unknown xc model {kind!r}")
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"potentials.{name}: {exc}") from exc

    def nonlinearity(self, mollifier: Optional[MollifierSpec] = None) -> Nonlinearity:
        p = self.values["potentials"]
        soft = p["softening"]
        if soft is not None and not soft > 0:
            raise ConfigError("potentials.softening: must be positive")
        return Nonlinearity(
            hartree=p["hartree"],
            softening=soft,
            xc=self._xc(p["xc"], "xc"),
            rough_xc=self._xc(p["rough_xc"], "rough_xc"),
            mollifier=mollifier,
        )

    def initial_samples(self, domain: Optional[BoxDomain] = None) -> np.ndarray:
        """Initial data on the grid, scaled (and normalized to unit projected L2 norm if configured)."""
        domain = domain or self.domain()
        c = self.values["cli"]
        text = c["psi0"]
        try:
            if text.endswith(".csv"):
                samples = read_grid_csv(self.resolve(text), domain)
            elif text.endswith(".bin"):
                snap = read_snapshot(self.resolve(text))
                if snap.domain != domain:
                    raise ValueError("snapshot domain differs from the configured domain")
                samples = snap.basis.to_grid(snap.coeffs)
            else:
                kind, params = parse_spec(text)
                samples = np.asarray(initial_profile(kind, domain, **params), dtype=complex)
        except (ValueError, OSError) as exc:
            raise ConfigError(f"cli.psi0: {exc}") from exc
        if c["normalize"]:
            n = norms(project(samples, domain, self.m)).l2
            if n == 0:
                raise ConfigError("cli.psi0: cannot normalize zero initial data")
            samples = samples / n
        return samples * c["scale"]

    def lipschitz(self) -> Optional[LipschitzConstants]:
        """Fully declared constants, or None when they should be measured."""
        text = self.values["fixedpoint"]["lipschitz"].strip()
        if not text:
            return None
        _, params = parse_spec("declared:" + text)
        names = ("C_a", "C_b", "C_c", "K", "K_tilde", "K1", "K2", "C_hat_H")
        unknown = set(params) - set(names)
        if unknown:
            raise ConfigError(f"fixedpoint.lipschitz: unknown constants {sorted(unknown)}")
        vals = {k: float(params.get(k, 0.0)) for k in names}
        return LipschitzConstants(**vals, provenance={k: "declared" for k in names})

    def lemma(self, domain: BoxDomain, rough: np.ndarray, epsilons=()) -> dict:
        e = self.values["energy"]
        d = domain.dim
        out = {"C0": e["lemma_C0"], "C1": e["lemma_C1"], "C3": e["lemma_C3"], "C4": e["lemma_C4"]}
        c5 = e["lemma_C5"].strip().lower()
        out["C5"] = math.sqrt(5.0 + d) if c5 in ("auto", "") else parse_number(c5)
        c2 = e["lemma_C2"].strip().lower()
        if c2 == "fit":
            ladder = sorted({float(x) for x in epsilons if x})
            out["C2"] = fit_mollifier_constants(rough, domain, ladder)["C2"] if ladder else math.sqrt(d)
        elif c2 in ("auto", ""):
            out["C2"] = math.sqrt(d)
        else:
            out["C2"] = parse_number(c2)
        return out

    def problem(self, mode: Optional[str] = None):
        """The :class:`~tdks.fixedpoint.TDKSProblem` described by this configuration."""
        from .fixedpoint import BPolicy, TDKSProblem

        dom = self.domain()
        samples = self.initial_samples(dom)
        f = self.values["fixedpoint"]
        try:
            return TDKSProblem(
                psi0=project(samples, dom, self.m),
                T=self.T,
                dt=self.dt,
                potentials=self.potentials(dom),
                nonlinearity=self.nonlinearity(),
                mode=mode or f["mode"],
                tol=f["tol"],
                max_iter=f["max_iter"],
                policy=BPolicy(f["B"], f["c"]),
                lipschitz=self.lipschitz(),
                lipschitz_trials=f["lipschitz_trials"],
                seed=self.values["cli"]["seed"],
                rough_psi0=samples,
                check=self.values["energy"]["check"],
                max_steps=f["max_steps"],
            )
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# initial data profiles


def initial_profile(name: str, domain: BoxDomain, **params) -> np.ndarray:
    """Grid samples of a named initial state.

    ``sine(index)``: a single Dirichlet eigenfunction. ``expcos``: the
    product over axes of sin(s) exp(cos(s)) with s = pi x / L (analytic and
    odd-periodic). ``mix(weights)``: sum_k w_k sin(k s_1) times the lowest
    mode in the other axes. ``tent``: product of min(s, pi - s) (in H1_0 but
    not H2). ``gaussian(width, center)``: a Gaussian packet times the lowest
    mode. ``zero``.
    """
    mesh = domain.mesh()
    s = [math.pi * x / L for x, L in zip(mesh, domain.lengths)]
    name = name.lower()
    if name == "zero":
        return np.zeros(domain.grid_points)
    if name == "sine":
        idx = params.get("index", 1)
        idx = tuple(int(i) for i in np.atleast_1d(idx))
        if len(idx) == 1:
            idx = idx + (1,) * (domain.dim - 1)
        if len(idx) != domain.dim or min(idx) < 1:
            raise ValueError(f"sine index {idx} invalid for dimension {domain.dim}")
        return np.prod([np.sin(k * si) for k, si in zip(idx, s)], axis=0)
    if name == "expcos":
        return np.prod([np.sin(si) * np.exp(np.cos(si)) for si in s], axis=0)
    if name == "mix":
        w = np.atleast_1d(params.get("weights", (1.0, 0.5)))
        first = sum(wk * np.sin((k + 1) * s[0]) for k, wk in enumerate(w))
        rest = np.prod([np.sin(si) for si in s[1:]], axis=0) if domain.dim > 1 else 1.0
        return first * rest
    if name == "tent":
        return np.prod([np.minimum(si, math.pi - si) for si in s], axis=0)
    if name == "gaussian":
        width = float(params.get("width", 0.3))
        center = np.broadcast_to(np.asarray(params.get("center", domain.center), dtype=float), (domain.dim,))
        r2 = sum((x - c) ** 2 for x, c in zip(mesh, center))
        return np.exp(-r2 / (2 * width**2)) * np.prod([np.sin(si) for si in s], axis=0)
    raise ValueError(f"unknown initial profile {name!r}")
