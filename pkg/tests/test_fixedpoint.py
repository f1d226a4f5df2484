import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import example, given, strategies as st

from tdks.energy import constants
from tdks.fixedpoint import (
    BallSpec,
    BPolicy,
    PicardError,
    ScheduleError,
    TDKSProblem,
    apply_A,
    ball_radius,
    certified_length,
    contraction_factor,
    covering_schedule,
    fixed_point_residual,
    invariance_bound,
    picard_solve,
    regularize,
    solve_regularized,
    solve_tdks,
)
from tdks.galerkin import Trajectory, assemble, integrate_reference, solve_auxiliary
from tdks.potentials import (
    ControlSignal,
    LipschitzConstants,
    MollifierSpec,
    Nonlinearity,
    PotentialNorms,
    PotentialSpec,
    XcModel,
    mollify,
    profile,
)
from tdks.spectral import BoxDomain, SpectralField, grid_norms, norms, project


def _consts(line, V_inf=0.0, T=1.0):
    return constants(PotentialNorms(V_inf, 0.0, 0.0, 0.0, 0.0, V_inf, 0.0, 0.0), T, domain=line)


def _state(line, coeffs):
    c = np.zeros(16, dtype=complex)
    c[: len(coeffs)] = coeffs
    return SpectralField(line, c)


# ---------------------------------------------------------------------------
# ball and contraction formulas


def test_ball_radius_of_zero_data(line):
    c = _consts(line)
    for T in (0.0, 0.3, 2.0):
        assert ball_radius(1.0, T, 0.0, 0.0, c) == pytest.approx(math.exp(c.C1_lap * T))
    assert ball_radius(1.0, 0.0, 0.0, 0.0, c) == 1.0


def test_ball_radius_direct_evaluation(line):
    c = _consts(line, V_inf=1.0)
    assert c.C1_lap == 4.0 and c.C2_lap == 0.0
    assert ball_radius(1.0, 0.1, 1.0, 1.0, c) == pytest.approx(math.exp(0.4) * 2, rel=1e-14)
    assert ball_radius(1.0, 0.1, 1.0, 1.0, c) == pytest.approx(2.98365, abs=5e-6)


def test_ball_radius_increases_with_radius_and_horizon(line):
    c = constants(PotentialSpec.build(line, 1.0, V0=profile("harmonic", center=1.0)), 1.0)
    r = [ball_radius(B, 0.2, 2.0, 1.5, c) for B in (0.5, 1.0, 2.0)]
    assert r[0] < r[1] < r[2]
    h = [ball_radius(1.0, T, 2.0, 1.5, c) for T in (0.1, 0.2, 0.4)]
    assert h[0] < h[1] < h[2]


def test_invariance_bound_direct_evaluation(line):
    c = replace(_consts(line, T=3.0), C_Z=1.0)
    lip = LipschitzConstants(C_b=1.0, K_tilde=1.0)
    assert c.C3_lap == 1.0
    assert invariance_bound(1.0, c, 1.0, lip) == 0.25
    assert invariance_bound(1.0, replace(c, T=0.1), 1.0, lip) == 0.1


def test_invariance_bound_homogeneity(line):
    c = replace(_consts(line, T=100.0), C_Z=1.3)
    lip = LipschitzConstants(C_b=0.7, K_tilde=0.4)
    base = invariance_bound(1.0, c, 2.0, lip)
    assert invariance_bound(1.0, replace(c, C3_lap=2 * c.C3_lap), 2.0, lip) == pytest.approx(base / 2)
    small = [invariance_bound(B, c, 2.0, lip) for B in (1e-2, 1e-4, 1e-8)]
    assert small[0] > small[1] > small[2] and small[2] < 1e-7


def test_contraction_factor_values(line):
    c = replace(_consts(line, T=0.25), C_Z=1.0, C1_lap=0.0)
    lip = LipschitzConstants(K_tilde=1.0)
    assert contraction_factor(0.25, c, 1.0, lip) == pytest.approx(0.5, rel=1e-15)
    assert contraction_factor(0.0, c, 1.0, lip) == 0.0


def test_contraction_factor_is_increasing(line):
    c = constants(PotentialSpec.build(line, 1.0, V0=profile("harmonic", center=1.0)), 1.0)
    lip = LipschitzConstants(C_c=0.3, K_tilde=0.2)
    g = [contraction_factor(T, c, 2.0, lip) for T in (0.01, 0.02, 0.04)]
    assert 0 < g[0] < g[1] < g[2]


def test_certified_length_hits_target(line):
    c = _consts(line, V_inf=0.5)
    lip = LipschitzConstants(C_c=0.2, K_tilde=0.5)
    psi0 = _state(line, [0.3])
    T = certified_length(c, lip, psi0, 1.0, target=0.5)
    spec = BallSpec.build(1.0, T, psi0, c)
    assert contraction_factor(T, c, spec.C_circ, lip) == pytest.approx(0.5, rel=1e-9)
    assert certified_length(c, LipschitzConstants(), psi0) == math.inf


# ---------------------------------------------------------------------------
# the map and the Picard iteration


def _nonlinear(line, T=0.5):
    pots = PotentialSpec.build(line, T, V0=profile("harmonic", kappa=0.5, center=math.pi / 2))
    nl = Nonlinearity(hartree=True, softening=1.0, xc=XcModel("saturating", -0.5))
    return pots, nl


def test_apply_map_is_deterministic(line, rng):
    pots, nl = _nonlinear(line)
    psi0 = _state(line, [1.0, 0.2j, 0.1])
    times = np.linspace(0.0, 0.5, 51)
    lam = Trajectory(line, times, rng.standard_normal((51, 16)) * 0.3 + 0j)
    a = apply_A(lam, psi0, (0.0, 0.5), 1e-2, nl, potentials=pots)
    b = apply_A(lam, psi0, (0.0, 0.5), 1e-2, nl, potentials=pots)
    np.testing.assert_array_equal(a.coeffs, b.coeffs)
    np.testing.assert_array_equal(a.coeffs[0], psi0.coeffs)


def test_apply_map_with_zero_argument_is_the_linear_flow(line):
    pots, nl = _nonlinear(line)
    psi0 = _state(line, [1.0, 0.2j, 0.1])
    zero = Trajectory(line, np.array([0.0, 0.5]), np.zeros((2, 16), dtype=complex))
    a = apply_A(zero, psi0, (0.0, 0.5), 1e-2, replace(nl, xc=XcModel()), potentials=pots)
    b = solve_auxiliary(None, psi0, (0.0, 0.5), 1e-2, pots)
    np.testing.assert_array_equal(a.coeffs, b.coeffs)


def test_picard_without_nonlinearity_takes_one_iteration(line):
    pots, _ = _nonlinear(line)
    psi0 = _state(line, [1.0, 0.5])
    traj, log = picard_solve(psi0, (0.0, 0.5), 1e-2, potentials=pots, nonlinearity=Nonlinearity(hartree=False))
    assert log.iterations == 1 and log.converged
    assert log.differences[-1] == 0.0


def test_picard_small_amplitude_matches_reference(line):
    pots, nl = _nonlinear(line)
    psi0 = _state(line, [1e-3, 5e-4j, 2e-4])
    traj, log = picard_solve(psi0, (0.0, 0.5), 1e-3, potentials=pots, nonlinearity=nl)
    assert log.max_ratio < 1e-3
    sys_ = assemble(line, 16, pots)
    ref = integrate_reference(sys_, nl, psi0, (0.0, 0.5), 1e-3 / 64)
    assert np.linalg.norm(traj.endpoint.coeffs - ref.endpoint.coeffs) <= 1e-6
    assert fixed_point_residual(traj, nl, sys_, 1e-3) < 1e-10


def test_picard_from_zero_data_stays_zero(line):
    pots, nl = _nonlinear(line)
    traj, log = picard_solve(SpectralField.zeros(line, 16), (0.0, 0.5), 1e-2, potentials=pots, nonlinearity=nl)
    assert not np.any(traj.coeffs)


def test_picard_ratios_decay_geometrically(line):
    pots, nl = _nonlinear(line)
    psi0 = _state(line, [1.0, 0.3, 0.1j])
    traj, log = picard_solve(psi0, (0.0, 0.05), 1e-3, potentials=pots, nonlinearity=nl)
    assert log.converged and log.iterations >= 3
    assert all(r < 0.2 for r in log.ratios)


def test_picard_failure_carries_the_log(line):
    pots, nl = _nonlinear(line)
    psi0 = _state(line, [1.0, 0.3, 0.1j])
    with pytest.raises(PicardError) as info:
        picard_solve(psi0, (0.0, 0.5), 1e-2, max_iter=2, potentials=pots, nonlinearity=nl)
    assert len(info.value.log.differences) == 3
    assert not info.value.log.converged


# ---------------------------------------------------------------------------
# covering schedule


def test_schedule_first_steps(line):
    c = _consts(line)
    assert c.C1_lap == 2.0
    states = covering_schedule(1.0, 1.0, c, LipschitzConstants(), advance=lambda s: 1.0)
    assert states[0].b == 1.0 and states[0].T_d == 0.5 and states[0].halvings == 0
    assert states[1].b == 0.5 and states[1].T_d == 0.25
    assert math.fsum(s.T_d for s in states) == 1.0
    assert states[-1].clipped and states[-1].end == 1.0


def test_schedule_floors_the_growth_at_one(line):
    c = _consts(line)
    states = covering_schedule(0.6, 0.01, c, LipschitzConstants(), advance=lambda s: 0.5)
    assert all(s.a_prev == 1.0 for s in states)


@given(
    T=st.floats(0.05, 1.5),
    growth=st.floats(1.0, 1.05),
    V_inf=st.floats(0.0, 0.3),
    dt=st.sampled_from([None, 1e-3, 1e-2]),
)
@example(T=0.6281656795898091, growth=1.025390625, V_inf=0.0, dt=None)  # clipped length T - t rounds
def test_schedule_rule_and_exact_cover(T, growth, V_inf, dt):
    # the step sum grows like the harmonic series over C1 a^3, so keep T C1 a^3 small
    dom = BoxDomain((math.pi,), (16,))
    c = _consts(dom, V_inf=V_inf)
    lip = LipschitzConstants(C_b=0.01, C_c=0.05, K_tilde=0.1)
    states = covering_schedule(T, 1.0, c, lip, BPolicy(1.0, 1.0), dt=dt, advance=lambda s: min(1.1, s.a_prev * growth), max_steps=20000)
    assert math.fsum(s.T_d for s in states) == T
    assert states[-1].end == T and states[0].start == 0.0
    assert all(b.start == a.end for a, b in zip(states, states[1:]))
    assert states[0].start == 0.0
    for k, s in enumerate(states, start=1):
        assert s.k == k
        assert s.b == pytest.approx(1.0 / (k * s.a_prev**3), rel=1e-15)
        assert s.T_pre == pytest.approx(s.b / c.C1_lap, rel=1e-15)
        assert s.g < 1.0
        assert s.T_d <= s.T_pre * (1 + 1e-12)
    for a, b in zip(states, states[1:]):
        assert b.start == pytest.approx(a.end, abs=1e-12)
        assert b.a_prev == max(1.0, a.a)


def test_schedule_halves_until_contraction(line):
    c = _consts(line)
    lip = LipschitzConstants(C_c=5.0, K_tilde=5.0)
    states = covering_schedule(0.01, 1.0, c, lip, advance=lambda s: 1.0)
    assert states[0].halvings > 0
    assert states[0].g < 1.0
    assert states[0].T_pre == 0.5


def test_schedule_underflow_is_reported(line):
    c = _consts(line)
    with pytest.raises(ScheduleError, match="pessimistic"):
        covering_schedule(1.0, 1.0, c, LipschitzConstants(K_tilde=1e9, C_c=1e9))


def test_schedule_step_limit(line):
    c = _consts(line)
    with pytest.raises(ScheduleError, match="within"):
        covering_schedule(5.0, 1.0, c, LipschitzConstants(), advance=lambda s: 2.0, max_steps=50)


# ---------------------------------------------------------------------------
# solvers


def _linear_problem(line, mode):
    u = ControlSignal.from_pairs([(0, 0.3), (0.4, -0.3)], 1.0)
    pots = PotentialSpec.build(line, 1.0, V0=profile("cosine", amplitude=1.0, wavenumber=2), Vu=profile("cosine", amplitude=0.5, wavenumber=4), u=u)
    # small data keeps ||Delta psi0||^2 below 1, so the certified steps are not tiny
    psi0 = _state(line, [0.2, 0.1, 0.05])
    return TDKSProblem(psi0, 1.0, 1e-3, pots, Nonlinearity(hartree=False), mode=mode, lipschitz=LipschitzConstants())


@pytest.mark.parametrize("mode", ["practical", "certified"])
def test_linear_problem_reduces_to_the_auxiliary_solver(line, mode):
    problem = _linear_problem(line, mode)
    rep = solve_tdks(problem)
    aux = solve_auxiliary(None, problem.psi0, (0.0, 1.0), 1e-3, problem.potentials)
    np.testing.assert_allclose(rep.trajectory.times, aux.times, rtol=0, atol=1e-12)
    assert np.max(np.abs(rep.trajectory.coeffs - aux.coeffs)) <= 1e-10
    assert rep.estimates_passed
    for info in rep.intervals:
        assert info["picard"]["iterations"] == 1
    if mode == "certified":
        assert rep.certified
        assert math.fsum(i["length"] for i in rep.intervals) == pytest.approx(1.0, abs=1e-12)


def test_nonlinear_solve_conserves_norm_and_matches_reference(line):
    pots, nl = _nonlinear(line, T=0.5)
    psi0 = _state(line, [1.0, 0.3, 0.1j])
    psi0 = psi0 * (1 / norms(psi0).l2)
    problem = TDKSProblem(psi0, 0.5, 5e-4, pots, nl, lipschitz_trials=20)
    rep = solve_tdks(problem)
    assert rep.estimates_passed
    l2 = rep.trajectory.norm_series()["l2"]
    assert np.max(np.abs(l2 - 1.0)) <= 1e-10
    ref = integrate_reference(assemble(line, 16, pots), nl, psi0, (0.0, 0.5), 5e-4 / 64)
    assert np.linalg.norm(rep.trajectory.endpoint.coeffs - ref.endpoint.coeffs) <= 1e-5
    nodes = [i["nodes"] for i in rep.intervals]
    assert nodes[0][0] == 0 and nodes[-1][1] == rep.trajectory.times.size - 1


def test_restart_at_midpoint_reproduces_the_endpoint(line):
    # autonomous potentials, so the second half is the same problem started from the handoff state
    pots = PotentialSpec.build(line, 0.5, V0=profile("harmonic", kappa=0.5, center=math.pi / 2))
    nl = _nonlinear(line, T=0.5)[1]
    psi0 = _state(line, [0.8, 0.2, 0.1j])
    whole = solve_tdks(TDKSProblem(psi0, 0.5, 5e-4, pots, nl, lipschitz_trials=20, check=False)).trajectory
    pots_half = PotentialSpec.build(line, 0.25, V0=profile("harmonic", kappa=0.5, center=math.pi / 2))
    first = solve_tdks(TDKSProblem(psi0, 0.25, 5e-4, pots_half, nl, lipschitz_trials=20, check=False)).trajectory
    second = solve_tdks(TDKSProblem(first.endpoint, 0.25, 5e-4, pots_half, nl, lipschitz_trials=20, check=False)).trajectory
    assert np.linalg.norm(second.endpoint.coeffs - whole.endpoint.coeffs) <= 1e-8


def test_problem_validation(line):
    psi0 = _state(line, [1.0])
    for kwargs in ({"mode": "fast"}, {"T": 0.0}, {"dt": -1.0}, {"tol": 0.0}):
        args = {"psi0": psi0, "T": 1.0, "dt": 1e-3} | kwargs
        with pytest.raises(ValueError):
            TDKSProblem(**args)


def test_regularization_with_smooth_data_tracks_the_plain_solution():
    dom = BoxDomain((math.pi,), (128,))
    pots = PotentialSpec.build(dom, 0.5, V0=profile("cosine", amplitude=1.0, wavenumber=2))
    psi0 = project(lambda x: np.sin(x) + 0.3 * np.sin(2 * x), dom, 16)
    problem = TDKSProblem(psi0, 0.5, 1e-3, pots, Nonlinearity(hartree=False), lipschitz=LipschitzConstants())
    plain = solve_tdks(problem).trajectory
    for eps in (0.4, 0.2, 0.1):
        reg = solve_regularized(problem, eps)
        assert reg.estimates_passed
        smooth = regularize(problem, MollifierSpec(eps, 1)).psi0
        mollification_error = norms(smooth - psi0).l2
        # linear unitary flow: the difference keeps its initial size
        diff = reg.trajectory.difference(plain, "l2")
        assert diff == pytest.approx(mollification_error, rel=1e-8)


def test_regularized_initial_data_uses_odd_extension():
    dom = BoxDomain((math.pi,), (128,))
    x = dom.axes()[0]
    rough = np.minimum(x, math.pi - x)
    problem = TDKSProblem(project(rough, dom, 24), 0.1, 1e-3, rough_psi0=rough)
    smooth = regularize(problem, MollifierSpec(0.1, 1))
    want = project(mollify(rough, MollifierSpec(0.1, 1), dom, "odd"), dom, 24)
    np.testing.assert_array_equal(smooth.psi0.coeffs, want.coeffs)
    assert grid_norms(smooth.rough_psi0, dom).l2 == grid_norms(rough, dom).l2
