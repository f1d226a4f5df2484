"""Energy-estimate constants and their verification along computed trajectories.

Two families of a priori bounds are checked:

* ``plain``: bounds on ||Psi||^2, ||grad Psi||^2, ||Delta Psi||^2 and on the
  time derivative in H^-1 and L2 for the linear auxiliary problem with
  forcing G and the (total) linear potential V.
* ``epsilon``: the corresponding bounds for the mollified problem, whose
  constants separate the smooth potential V, the rough potential W and the
  rough xc term, and where the Laplacian bound depends on the mollifier.

Bounds are evaluated at every stored sample time t with horizon t - t0, which
is valid because each bound holds on any horizon and is monotone in it. Sup
norms of G are taken over the samples (nodes and step midpoints) up to the
evaluation time.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .galerkin import OdeSystem, Trajectory, as_forcing
from .potentials import LipschitzConstants, MollifierSpec, Nonlinearity, PotentialNorms, PotentialSpec, mollifier_norms
from .spectral import BoxDomain, NormReport, SpectralField, basis, norm_equivalence_constant, norms

__all__ = [
    "poincare_constant",
    "bound_constants",
    "default_lemma_constants",
    "EstimateConstants",
    "constants",
    "EstimateRow",
    "EstimateReport",
    "check_estimates",
    "stepwise_growth",
    "PASS_TOLERANCE",
]

PASS_TOLERANCE = 1e-9

PLAIN_IDS = ("EN_1", "EN_2", "EN_3", "EN_4_pre", "EN_4")
EPSILON_IDS = ("EN_1_eps", "EN_2_eps", "EN_3_eps", "EN_4_eps", "EN_5_eps")


def poincare_constant(domain: BoxDomain) -> float:
    """C_PF = 1 / sqrt(lambda_min), sharp on the box."""
    return 1.0 / math.sqrt(domain.lambda_min)


def bound_constants(V_inf: float, gradV_inf: float, lapV_inf: float, C_PF: float, T: float) -> tuple[float, float, float, float]:
    """(C_grad, C1_lap, C2_lap, C3_lap) of the auxiliary-problem bounds."""
    C_grad = 2.0 * (1.0 + V_inf**2 + C_PF**2 * gradV_inf**2)
    C1 = 2.0 + 2.0 * V_inf
    inner = 8.0 * gradV_inf**2 + 2.0 * C_PF**2 * lapV_inf**2
    C2 = inner * math.exp(C_grad * T)
    C3 = 1.0 + T * inner * math.exp(C_grad * T)
    return C_grad, C1, C2, C3


def default_lemma_constants(dim: int) -> dict:
    """Constants of the smoothing lemmas for the odd-reflection extension.

    C0 = C1 = 1 (the discrete smoothing is a contraction on every sine mode),
    C2 = sqrt(d), C3 = 1, C4 = sqrt(2), C5 = sqrt(5 + d) follow from the
    product rule and Young's inequality; C2 is normally replaced by a fit.
    """
    return {"C0": 1.0, "C1": 1.0, "C2": math.sqrt(dim), "C3": 1.0, "C4": math.sqrt(2.0), "C5": math.sqrt(5.0 + dim)}


@dataclass(frozen=True)
class EstimateConstants:
    """All constants entering the energy bounds for one horizon ``T``."""

    T: float
    C_PF: float
    C_Z: float
    V_inf: float
    gradV_inf: float
    lapV_inf: float
    C_grad: float
    C1_lap: float
    C2_lap: float
    C3_lap: float
    epsilon: Optional[float] = None
    phi1_l1: Optional[float] = None
    grad_phi_l1: Optional[float] = None
    smooth_V_inf: Optional[float] = None
    smooth_V_1inf: Optional[float] = None
    smooth_V_2inf: Optional[float] = None
    W_inf: Optional[float] = None
    W_1inf: Optional[float] = None
    K1: float = 0.0
    K2: float = 0.0
    C_hat: Optional[float] = None
    C_hat_grad: Optional[float] = None
    C_eps: Optional[float] = None
    lemma: dict = field(default_factory=dict)
    K_minus1: Optional[float] = None
    K_minus2: Optional[float] = None

    @property
    def has_epsilon(self) -> bool:
        return self.epsilon is not None

    @property
    def rough_potential_factor(self) -> float:
        """C3 [||V|| + ||phi_1|| (||W|| + K1)], the L2 bound factor of V_eps."""
        return self.lemma["C3"] * (self.smooth_V_inf + self.phi1_l1 * (self.W_inf + self.K1))

    def as_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "lemma"}
        out["lemma"] = dict(self.lemma)
        return out


def constants(
    potentials,
    T: float,
    domain: Optional[BoxDomain] = None,
    mollifier: Optional[MollifierSpec] = None,
    lipschitz: Optional[LipschitzConstants] = None,
    lemma: Optional[dict] = None,
) -> EstimateConstants:
    """Evaluate every constant for horizon ``T``.

    ``potentials`` is a :class:`PotentialSpec` or a :class:`PotentialNorms`
    (then ``domain`` is required). The plain constants use the total linear
    potential V + W; with a mollifier the regularized constants are added,
    using the smooth part V, the rough part W and K1, K2 of ``lipschitz``.
    """
    if isinstance(potentials, PotentialSpec):
        pn = potentials.norms
        domain = domain or potentials.domain
    elif isinstance(potentials, PotentialNorms):
        pn = potentials
    else:
        raise ValueError("constants need a PotentialSpec or PotentialNorms with cached sup-norms")
    if domain is None:
        raise ValueError("domain required when only norms are given")
    if not T >= 0:
        raise ValueError("horizon must be non-negative")
    vals = (pn.total_inf, pn.total_grad_inf, pn.total_lap_inf)
    if not all(v is not None and math.isfinite(v) for v in vals):
        raise ValueError("potential sup-norms missing or non-finite")
    C_PF = poincare_constant(domain)
    C_Z = norm_equivalence_constant(domain)
    C_grad, C1, C2, C3 = bound_constants(*vals, C_PF, T)
    lem = default_lemma_constants(domain.dim)
    lem.update(lemma or {})
    out = EstimateConstants(T, C_PF, C_Z, *vals, C_grad, C1, C2, C3, lemma=lem)
    if mollifier is None:
        return out
    lip = lipschitz or LipschitzConstants()
    phi1, gphi = mollifier_norms(mollifier)
    V, V1, V2 = pn.V_inf, pn.V_1inf, pn.V_2inf
    W, W1 = pn.W_inf, pn.W_1inf
    K1, K2 = lip.K1, lip.K2
    C_hat = lem["C3"] ** 2 * (V + phi1 * (W + K1)) ** 2 + 2.0
    C_hat_grad = 2.0 + lem["C4"] ** 2 * (V1 + phi1 * (W1 + K2)) ** 2 * (1.0 + C_PF**2)
    C_eps = 2.0 + lem["C5"] ** 2 * (V2 + gphi * (W1 + K2)) ** 2 * C_Z**2
    return replace(
        out,
        epsilon=mollifier.epsilon,
        phi1_l1=phi1,
        grad_phi_l1=gphi,
        smooth_V_inf=V,
        smooth_V_1inf=V1,
        smooth_V_2inf=V2,
        W_inf=W,
        W_1inf=W1,
        K1=K1,
        K2=K2,
        C_hat=C_hat,
        C_hat_grad=C_hat_grad,
        C_eps=C_eps,
    )


@dataclass(frozen=True)
class EstimateRow:
    estimate: str
    time: float
    observed: float
    bound: float

    @property
    def margin(self) -> float:
        return self.bound - self.observed

    @property
    def passed(self) -> bool:
        return self.observed <= self.bound * (1.0 + PASS_TOLERANCE)


@dataclass
class EstimateReport:
    """Per-sample records of every checked inequality."""

    variant: str
    rows: list
    surrogates: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    @property
    def estimates(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.estimate not in seen:
                seen.append(r.estimate)
        return seen

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def failures(self) -> list[EstimateRow]:
        return [r for r in self.rows if not r.passed]

    def summary(self) -> dict:
        out = {}
        for name in self.estimates:
            rows = [r for r in self.rows if r.estimate == name]
            worst = min(rows, key=lambda r: (r.bound - r.observed) / r.bound if r.bound > 0 else r.bound - r.observed)
            out[name] = {
                "samples": len(rows),
                "max_observed": max(r.observed for r in rows),
                "bound_at_worst": worst.bound,
                "observed_at_worst": worst.observed,
                "min_relative_margin": (worst.bound - worst.observed) / worst.bound if worst.bound > 0 else None,
                "passed": all(r.passed for r in rows),
            }
        return out

    def as_dict(self) -> dict:
        return {"variant": self.variant, "passed": self.passed, "estimates": self.summary(), "surrogates": dict(self.surrogates), "notes": dict(self.notes)}

    def write_csv(self, path, meta=None) -> None:
        """One row per checked sample, after ``# key=value`` lines for ``meta``."""
        with open(path, "w", newline="") as fh:
            for k, v in (meta or {}).items():
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh)
            w.writerow(["estimate", "time", "observed", "bound", "margin", "passed"])
            for r in self.rows:
                w.writerow([r.estimate, repr(r.time), repr(r.observed), repr(r.bound), repr(r.margin), int(r.passed)])

    @staticmethod
    def merge(reports) -> "EstimateReport":
        reports = list(reports)
        if not reports:
            return EstimateReport("plain", [])
        rows = [r for rep in reports for r in rep.rows]
        return EstimateReport(reports[0].variant, rows, {}, {"parts": len(reports)})


def _coeff_norms(coeffs: np.ndarray, domain: BoxDomain) -> dict:
    return Trajectory(domain, np.arange(coeffs.shape[0], dtype=float), coeffs).norm_series()


def _running_max(values: np.ndarray) -> np.ndarray:
    return np.maximum.accumulate(values)


def _derivative_quotients(traj: Trajectory):
    """Forward quotients per step and central (one-sided at ends) quotients per node."""
    t, c = traj.times, traj.coeffs
    h = np.diff(t)
    fwd = (c[1:] - c[:-1]) / h[:, None]
    central = np.empty_like(c)
    central[0] = fwd[0]
    central[-1] = fwd[-1]
    if t.size > 2:
        central[1:-1] = (c[2:] - c[:-2]) / (t[2:] - t[:-2])[:, None]
    return fwd, central


def check_estimates(
    traj: Trajectory,
    G,
    psi0: SpectralField,
    consts: EstimateConstants,
    variant: str = "plain",
    *,
    system: Optional[OdeSystem] = None,
    rough_term: Optional[Nonlinearity] = None,
    rough_initial: Optional[NormReport] = None,
) -> EstimateReport:
    """Evaluate the energy bounds at every stored sample of ``traj``.

    Parameters
    ----------
    traj : Trajectory
        Computed solution on [t0, t1]; it must have at least two samples.
    G : forcing or None
        The forcing of the auxiliary problem, sampled at nodes and midpoints.
    psi0 : SpectralField
        Initial state of the run.
    consts : EstimateConstants
        Constants for a horizon at least t1 - t0.
    variant : {"plain", "epsilon"}
    system : OdeSystem, optional
        Linear part; required for the ``epsilon`` derivative bound.
    rough_term : Nonlinearity, optional
        The smoothed rough xc term, treated as part of V_eps(Psi).
    rough_initial : NormReport, optional
        Norms of the unsmoothed initial data; when given, the initial terms use
        the smoothing-lemma form, otherwise the start-state norms.
    """
    if variant not in ("plain", "epsilon"):
        raise ValueError(f"unknown variant {variant!r}")
    if traj.times.size < 2:
        raise ValueError("need at least two samples")
    if psi0.order != traj.order or psi0.domain != traj.domain:
        raise ValueError("initial state does not match the trajectory")
    if traj.end - traj.start > consts.T * (1 + 1e-9) + 1e-12:
        raise ValueError(f"trajectory span {traj.end - traj.start} exceeds the constants' horizon {consts.T}")
    dom, m = traj.domain, traj.order
    forcing = as_forcing(G, m)
    t = traj.times
    mids = 0.5 * (t[:-1] + t[1:])
    tau = t - t[0]
    n = t.size

    # sup norms of G over nodes and midpoints up to each node
    if forcing is not None:
        g_nodes = forcing.sample(t)
        g_mids = forcing.sample(mids)
    else:
        g_nodes = np.zeros((n, m), dtype=complex)
        g_mids = np.zeros((n - 1, m), dtype=complex)
    gn, gm = _coeff_norms(g_nodes, dom), _coeff_norms(g_mids, dom)

    def window(key):
        node = gn[key] if key != "yhat" else np.maximum(gn["h2"], gn["lap"])
        mid = gm[key] if key != "yhat" else np.maximum(gm["h2"], gm["lap"])
        inter = np.empty(2 * n - 1)
        inter[0::2] = node
        inter[1::2] = mid
        return _running_max(inter)[0::2]

    G0, G1, G2 = window("l2"), window("h1"), window("yhat")

    ns = traj.norm_series()
    y0, y1, y2 = ns["l2"] ** 2, ns["grad"] ** 2, ns["lap"] ** 2
    p0 = norms(psi0)
    fwd, central = _derivative_quotients(traj)
    qn = _coeff_norms(central, dom)
    nxt = np.minimum(np.arange(n) + 1, n - 1)  # derivative bounds use the next node

    rows = []
    if variant == "plain":
        V = consts.V_inf
        b1 = np.exp(tau) * (p0.l2**2 + tau * G0**2)
        b2 = np.exp(consts.C_grad * tau) * (p0.grad**2 + tau * G1**2)
        b3 = np.exp(consts.C1_lap * tau) * (p0.lap**2 + tau * (consts.C2_lap * p0.grad**2 + consts.C3_lap * G2**2))
        k1 = np.sqrt(b2) + V * np.sqrt(b1) + G0
        k2 = np.sqrt(b3) + V * np.sqrt(b1) + G2
        series = [
            ("EN_1", y0, b1),
            ("EN_2", y1, b2),
            ("EN_3", y2, b3),
            ("EN_4_pre", qn["h_minus1"], k1[nxt]),
            ("EN_4", qn["l2"], k2[nxt]),
        ]
        surrogates = {"K_minus1": float(k1[-1]), "K_minus2": float(k2[-1])}
    else:
        if not consts.has_epsilon:
            raise ValueError("epsilon checks need constants computed with a mollifier")
        if system is None:
            raise ValueError("epsilon checks need the linear system")
        lem = consts.lemma
        if rough_initial is not None:
            i0 = (lem["C0"] * consts.phi1_l1 * rough_initial.l2) ** 2
            i1 = (lem["C1"] * consts.phi1_l1 * rough_initial.grad) ** 2
            i2 = (lem["C2"] * consts.grad_phi_l1 * rough_initial.h1) ** 2
        else:
            i0, i1, i2 = p0.l2**2, p0.grad**2, p0.lap**2
        with np.errstate(over="ignore"):  # a bound of +inf is still a valid bound
            b1 = np.exp(consts.C_hat * tau) * (i0 + tau * G0**2)
            b2 = np.exp(consts.C_hat_grad * tau) * (i1 + tau * G1**2)
            b3 = np.exp(consts.C_eps * tau) * (i2 + tau * G2**2)
        k1 = np.sqrt(b2) + consts.rough_potential_factor * np.sqrt(b1) + G0
        # right side of the derivative bound from actual step values
        cm = 0.5 * (traj.coeffs[1:] + traj.coeffs[:-1])
        veps = np.empty_like(cm)
        for s in range(cm.shape[0]):
            veps[s] = system.potential_matrix(mids[s]) @ cm[s]
        if rough_term is not None and rough_term.active:
            veps = veps + rough_term.apply(cm, dom)
        lam = basis(dom, m).eigenvalues
        rhs = np.linalg.norm(cm * lam, axis=1) + np.linalg.norm(veps, axis=1) + gm["l2"]
        rhs_node = np.empty(n)
        rhs_node[0] = rhs[0]
        rhs_node[-1] = rhs[-1]
        if n > 2:
            rhs_node[1:-1] = np.maximum(rhs[:-1], rhs[1:])
        series = [
            ("EN_1_eps", y0, b1),
            ("EN_2_eps", y1, b2),
            ("EN_3_eps", y2, b3),
            ("EN_4_eps", qn["h_minus1"], k1[nxt]),
            ("EN_5_eps", qn["l2"], rhs_node),
        ]
        surrogates = {"K_minus1": float(k1[-1])}
    for name, obs, bound in series:
        for i in range(n):
            rows.append(EstimateRow(name, float(t[i]), float(obs[i]), float(bound[i])))
    notes = {
        "derivative": "central differences (one-sided at ends); bounds taken at the following node",
        "g_sampling": "nodes and step midpoints",
        "initial_terms": "smoothing lemma" if (variant == "epsilon" and rough_initial is not None) else "start state",
    }
    return EstimateReport(variant, rows, surrogates, notes)


def stepwise_growth(traj: Trajectory, G=None) -> np.ndarray:
    """Per-step excess of (|Psi_{n+1}|^2 - |Psi_n|^2)/h over |g_mid|^2 + |Psi_mid|^2.

    Non-positive entries mean the discrete analogue of
    d/dt ||Psi||^2 <= ||G||^2 + ||Psi||^2 holds on that step.
    """
    forcing = as_forcing(G, traj.order)
    t = traj.times
    mids = 0.5 * (t[:-1] + t[1:])
    g = forcing.sample(mids) if forcing is not None else np.zeros((mids.size, traj.order))
    y = np.sum(np.abs(traj.coeffs) ** 2, axis=1)
    cm = 0.5 * (traj.coeffs[1:] + traj.coeffs[:-1])
    lhs = np.diff(y) / np.diff(t)
    rhs = np.sum(np.abs(g) ** 2, axis=1) + np.sum(np.abs(cm) ** 2, axis=1)
    return lhs - rhs
