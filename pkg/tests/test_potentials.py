import math

import numpy as np
import pytest
import scipy.integrate
from hypothesis import given, strategies as st

from tdks.potentials import (
    ControlSignal,
    MollifierSpec,
    Nonlinearity,
    PotentialSpec,
    XcEvaluationError,
    XcModel,
    eval_V,
    eval_W,
    fit_mollifier_constants,
    hartree,
    hartree_grid,
    lipschitz_probe,
    measure_constants,
    mollifier_norms,
    mollify,
    nonlinear_F,
    pair_sampler,
    probe_quotient,
    profile,
    random_field,
)
from tdks.spectral import BoxDomain, SpectralField, basis, grid_norms, norms


# ---------------------------------------------------------------------------
# controls and linear potentials


def test_control_is_right_continuous():
    u = ControlSignal.from_pairs([(0.0, 1.0), (0.5, -2.0)], horizon=1.0)
    assert u(0.0) == 1.0
    assert u(0.4999) == 1.0
    assert u(0.5) == -2.0
    assert u(1.0) == -2.0
    assert u.sup_abs == 2.0
    np.testing.assert_array_equal(u(np.array([0.1, 0.6])), [1.0, -2.0])


@pytest.mark.parametrize(
    "breakpoints, values, horizon",
    [
        ((), (1.0,), 0.0),
        ((0.5,), (1.0,), 1.0),
        ((1.0,), (1.0, 2.0), 1.0),
        ((0.6, 0.3), (1.0, 2.0, 3.0), 1.0),
        ((), (math.inf,), 1.0),
    ],
)
def test_control_validation(breakpoints, values, horizon):
    with pytest.raises(ValueError):
        ControlSignal(breakpoints, values, horizon)


def test_control_rejects_times_outside_horizon():
    u = ControlSignal.constant(1.0, 2.0)
    with pytest.raises(ValueError, match="outside"):
        u(2.5)
    with pytest.raises(ValueError):
        u(-0.1)


def test_control_csv_round_trip(tmp_path):
    u = ControlSignal.from_pairs([(0, 0.5), (0.25, -1), (0.75, 3)], horizon=1.0)
    u.to_csv(tmp_path / "u.csv")
    assert ControlSignal.from_csv(tmp_path / "u.csv", 1.0) == u


def test_zero_control_returns_static_potential(line):
    V0 = profile("harmonic", kappa=0.5)
    spec = PotentialSpec.build(line, 1.0, V0=V0, Vu=profile("linear"))
    np.testing.assert_array_equal(eval_V(spec, 0.3), spec.V0)


def test_constant_control_times_unit_profile(line):
    spec = PotentialSpec.build(line, 1.0, Vu=profile("constant", value=1.0), u=ControlSignal.constant(2.0, 1.0))
    np.testing.assert_array_equal(eval_V(spec, 0.7), np.full(line.grid_points, 2.0))


def test_rough_part_switches_with_its_control(line):
    w = ControlSignal.from_pairs([(0, 0.0), (0.5, 1.0)], 1.0)
    spec = PotentialSpec.build(line, 1.0, Wu=profile("kink", center=1.0), w=w)
    assert spec.has_rough_part
    assert not np.any(eval_W(spec, 0.2))
    assert np.any(eval_W(spec, 0.6))
    assert spec.breakpoints == (0.5,)


def test_potential_norms_of_harmonic_well(line):
    spec = PotentialSpec.build(line, 1.0, V0=profile("harmonic", kappa=0.5, center=math.pi / 2))
    n = spec.norms
    # sup over the closed box of 0.5 (x - pi/2)^2, its gradient and Laplacian
    assert n.V_inf == pytest.approx(0.5 * (math.pi / 2) ** 2, rel=1e-12)
    assert n.gradV_inf == pytest.approx(math.pi / 2, rel=1e-6)
    assert n.lapV_inf == pytest.approx(1.0, rel=1e-6)
    assert n.W_inf == 0.0


def test_control_horizon_mismatch_is_rejected(line):
    with pytest.raises(ValueError, match="horizon"):
        PotentialSpec.build(line, 1.0, u=ControlSignal.constant(1.0, 2.0))


@pytest.mark.parametrize("name, params", [("nosuch", {}), ("harmonic", {"depth": 1.0}), ("zero", {"value": 1})])
def test_profile_rejects_unknown_names_and_parameters(name, params):
    with pytest.raises(ValueError):
        profile(name, **params)


# ---------------------------------------------------------------------------
# Hartree


def test_hartree_of_zero_field(line):
    assert not np.any(hartree(SpectralField.zeros(line, 8)))


def _direct_hartree(density, domain, softening):
    """O(N^2) sum over grid nodes; 3D self term from the cube average of 1/r."""
    pts = np.stack([x.ravel() for x in domain.mesh()], axis=1)
    r = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1))
    if softening is None:
        (h,) = set(domain.spacing)
        with np.errstate(divide="ignore"):
            kern = 1.0 / r
        np.fill_diagonal(kern, (3 * math.log(2 + math.sqrt(3)) - math.pi / 2) / h)
    else:
        kern = 1.0 / np.sqrt(r**2 + softening**2)
    return (kern @ density.ravel() * domain.cell_volume).reshape(domain.grid_points)


@pytest.mark.parametrize(
    "lengths, grid, softening",
    [
        ((math.pi,), (64,), 1.0),
        ((math.pi,), (200,), 0.3),
        ((2.0, 3.0), (40, 41), 1.0),  # above the dense-matrix limit: FFT path
        ((1.0, 1.0, 1.0), (9, 9, 9), None),
        ((1.0, 1.0, 1.0), (11, 11, 11), 0.5),
    ],
)
def test_hartree_matches_direct_sum(lengths, grid, softening, rng):
    dom = BoxDomain(lengths, grid)
    density = rng.uniform(0.0, 1.0, grid)
    got = hartree_grid(density, dom, softening)
    want = _direct_hartree(density, dom, softening)
    np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)


def test_hartree_batched_densities(rng):
    dom = BoxDomain((math.pi,), (32,))
    dens = rng.uniform(size=(3, 32))
    batch = hartree_grid(dens, dom)
    for row, d in zip(batch, dens):
        np.testing.assert_allclose(row, hartree_grid(d, dom), rtol=1e-13)


def test_hartree_of_uniform_ball_at_center():
    # unit ball of unit density: potential at the centre is 2 pi
    dom = BoxDomain((2.4,) * 3, (47,) * 3)
    r = np.sqrt(sum((x - 1.2) ** 2 for x in dom.mesh()))
    density = (r < 1.0).astype(float)
    vh = hartree_grid(density, dom)
    centre = vh[23, 23, 23]
    assert abs(centre / (2 * math.pi) - 1.0) < 0.01


@pytest.mark.parametrize("lengths, grid", [((math.pi,), (64,)), ((2.0, 2.0), (30, 30)), ((1.0,) * 3, (15,) * 3)])
def test_hartree_preserves_central_symmetry(lengths, grid, rng):
    dom = BoxDomain(lengths, grid)
    half = rng.uniform(size=grid)
    density = half + np.flip(half)
    vh = hartree_grid(density, dom)
    assert np.max(np.abs(vh - np.flip(vh))) <= 1e-10 * np.max(np.abs(vh))


def test_newtonian_kernel_requires_positive_softening(line):
    with pytest.raises(ValueError, match="softening"):
        hartree_grid(np.ones(64), line, softening=0.0)


# ---------------------------------------------------------------------------
# the nonlinear term


def test_nonlinear_term_of_zero_field(line):
    out = nonlinear_F(SpectralField.zeros(line, 8), XcModel("saturating", -1.0))
    assert not np.any(out.coeffs)


@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 24), amp=st.floats(0.05, 3.0))
def test_nonlinear_term_has_no_imaginary_work(seed, m, amp):
    dom = BoxDomain((math.pi,), (64,))
    phi = random_field(np.random.default_rng(seed), dom, m, amplitude=amp)
    for xc in (XcModel(), XcModel("saturating", -0.7)):
        f = nonlinear_F(phi, xc)
        assert abs(f.inner(phi).imag) <= 1e-10


def test_single_mode_nonlinear_term_against_quadrature():
    dom = BoxDomain((math.pi,), (64,))
    phi = SpectralField.unit(dom, 4, 0)
    got = nonlinear_F(phi, XcModel()).coeffs

    def psi(x):
        return math.sqrt(2 / math.pi) * math.sin(x)

    def vh(x):
        val, _ = scipy.integrate.quad(lambda y: psi(y) ** 2 / math.sqrt((x - y) ** 2 + 1.0), 0.0, math.pi, epsabs=1e-13)
        return val

    want = []
    for j in range(1, 5):
        val, _ = scipy.integrate.quad(lambda x: vh(x) * psi(x) * math.sqrt(2 / math.pi) * math.sin(j * x), 0.0, math.pi, epsabs=1e-12)
        want.append(val)
    np.testing.assert_allclose(got.real, want, atol=1e-6)
    assert np.max(np.abs(got.imag)) == 0.0
    # parity: even modes about pi/2 do not couple to the first mode
    assert abs(got[1]) < 1e-12 and abs(got[3]) < 1e-12


def test_bound_evaluator_matches_apply(rng):
    dom = BoxDomain((math.pi,), (64,))
    nl = Nonlinearity(hartree=True, softening=1.0, xc=XcModel("saturating", -0.5))
    c = rng.standard_normal((5, 12)) + 1j * rng.standard_normal((5, 12))
    np.testing.assert_allclose(nl.bind(dom, 12)(c), nl.apply(c, dom), rtol=1e-12, atol=1e-14)


def test_xc_table_out_of_range_is_an_error(line):
    xc = XcModel("table", table_density=(0.0, 0.1), table_values=(0.0, -0.1))
    phi = SpectralField.unit(line, 4, 0) * 3.0
    with pytest.raises(XcEvaluationError, match="beyond"):
        nonlinear_F(phi, xc)


def test_xc_table_interpolates():
    xc = XcModel("table", table_density=(0.0, 1.0, 2.0), table_values=(0.0, -1.0, -1.5))
    np.testing.assert_allclose(xc.potential(np.array([0.5, 1.5])), [-0.5, -1.25])


@pytest.mark.parametrize("kwargs", [{"kind": "lda"}, {"kind": "table", "table_density": (0.0,), "table_values": (0.0,)}, {"kind": "table", "table_density": (0.1, 1.0), "table_values": (0, 0)}])
def test_xc_validation(kwargs):
    with pytest.raises(ValueError):
        XcModel(**kwargs)


def test_saturating_lipschitz_constant_is_sharp():
    # z -> c |z|^2 z / (1 + |z|^2) along the real axis
    r = np.linspace(0.0, 5.0, 200001)
    slope = np.max(np.abs(np.gradient(r**3 / (1 + r**2), r)))
    assert XcModel("saturating", -2.0).analytic_lipschitz() == pytest.approx(2 * slope, rel=1e-6)


# ---------------------------------------------------------------------------
# Lipschitz probes


def test_equal_pair_is_skipped(line):
    phi = random_field(np.random.default_rng(1), line, 8)
    assert probe_quotient("lipschitz1", phi, phi) is None
    rep = lipschitz_probe("lipschitz1", lambda rng: (phi, phi), trials=5)
    assert rep.skipped == 5 and rep.quotients.size == 0


def test_lipschitz_quotient_against_zero(line):
    nl = Nonlinearity(hartree=True, softening=1.0)
    b = basis(line, 10)
    qs = []
    for seed in range(100):
        phi = random_field(np.random.default_rng(seed), line, 10, amplitude=0.5 + seed / 50)
        zero = SpectralField.zeros(line, 10)
        g = b.to_grid(phi.coeffs)
        vh_phi = norms(SpectralField(line, b.to_coeffs(hartree_grid(np.abs(g) ** 2, line) * g))).l2
        n = norms(phi)
        q = probe_quotient("lipschitz1", phi, zero, nl)
        assert q == pytest.approx(vh_phi / (n.h1**2 * n.l2), rel=1e-12)
        qs.append(q)
    assert np.all(np.isfinite(qs))


@given(seed=st.integers(0, 2**32 - 1), angle=st.floats(0.0, 2 * math.pi))
def test_hartree_gradient_quotient_is_phase_invariant(seed, angle):
    dom = BoxDomain((math.pi,), (64,))
    phi, lam = pair_sampler(dom, 12)(np.random.default_rng(seed))
    rot = complex(math.cos(angle), math.sin(angle))
    for ineq in ("lipschitz1", "lipschitz_h2", "hartree_gradient"):
        q = probe_quotient(ineq, phi, lam)
        q_rot = probe_quotient(ineq, phi * rot, lam * rot)
        assert abs(q_rot - q) <= 1e-10 * q


def test_probe_report_and_declared_bound(line):
    sampler = pair_sampler(line, 8)
    nl = Nonlinearity(xc=XcModel("saturating", -1.0), hartree=False)
    rep = lipschitz_probe("xc_l2", sampler, trials=60, nonlinearity=nl, declared=1.125)
    assert rep.passed
    assert 0 < rep.max <= 1.125
    assert rep.stabilized()
    assert rep.as_dict()["constant"] == "K"
    with pytest.raises(ValueError):
        lipschitz_probe("nosuch", sampler, 3)
    with pytest.raises(ValueError):
        lipschitz_probe("xc_l2", sampler, 0)


def test_stabilization_detects_late_outlier():
    from tdks.potentials import LipschitzReport

    q = np.ones(80)
    assert LipschitzReport("lipschitz1", q, 0).stabilized()
    q[70] = 10.0
    assert not LipschitzReport("lipschitz1", q, 0).stabilized()


def test_measured_constants_provenance(line):
    nl = Nonlinearity(hartree=False, xc=XcModel("saturating", -1.0, K=2.0))
    lip = measure_constants(line, 8, nl, trials=10)
    assert lip.K == 2.0 and lip.provenance["K"] == "declared"
    assert lip.C_a == 0.0 and lip.provenance["C_a"] == "inactive"
    assert lip.K_tilde > 0 and lip.provenance["K_tilde"].startswith("measured")


# ---------------------------------------------------------------------------
# mollifier


def test_mollifier_preserves_constants_in_the_interior():
    dom = BoxDomain((math.pi,), (256,))
    for eps in (0.3, 0.1, 0.05):
        out = mollify(np.ones(256), MollifierSpec(eps, 1), dom)
        x = dom.axes()[0]
        inner = (x > eps + 1e-9) & (x < math.pi - eps - 1e-9)
        np.testing.assert_allclose(out[inner], 1.0, atol=1e-13)


def test_mollifier_preserves_constants_in_2d():
    dom = BoxDomain((2.0, 2.0), (64, 64))
    out = mollify(np.ones((64, 64)), MollifierSpec(0.2, 2), dom)
    np.testing.assert_allclose(out[16:48, 16:48], 1.0, atol=1e-13)


def test_mollifier_of_zero(line):
    assert not np.any(mollify(np.zeros(64), MollifierSpec(0.2, 1), line))


@pytest.mark.parametrize("extension", ["zero", "odd"])
def test_mollifier_error_decreases_on_ladder(extension):
    dom = BoxDomain((math.pi,), (512,))
    f = np.sin(dom.axes()[0])
    errs = [grid_norms(mollify(f, MollifierSpec(e, 1), dom, extension) - f, dom).l2 for e in (0.2, 0.1, 0.05)]
    assert errs[0] > errs[1] > errs[2] > 0


def test_odd_extension_keeps_sine_mode_close():
    # sin is odd about both ends, so the odd extension is the sine itself
    dom = BoxDomain((math.pi,), (512,))
    f = np.sin(dom.axes()[0])
    out = mollify(f, MollifierSpec(0.1, 1), dom, "odd")
    ratio = out[100:400] / f[100:400]
    assert np.ptp(ratio) < 1e-10


def test_even_extension_keeps_linear_functions():
    dom = BoxDomain((1.0,), (200,))
    x = dom.axes()[0]
    out = mollify(2.0 + 3.0 * x, MollifierSpec(0.05, 1), dom, "even")
    np.testing.assert_allclose(out[20:-20], 2.0 + 3.0 * x[20:-20], atol=1e-12)


def test_mollifier_rejects_oversized_radius(line):
    with pytest.raises(ValueError, match="not smaller"):
        mollify(np.ones(64), MollifierSpec(4.0, 1), line)
    with pytest.raises(ValueError):
        MollifierSpec(-1.0)
    with pytest.raises(ValueError):
        mollify(np.ones(64), MollifierSpec(0.1, 1), line, "periodic")


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_mollifier_has_unit_mass(dim):
    l1, _ = mollifier_norms(MollifierSpec(1.0, dim))
    assert l1 == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("dim", [1, 2, 3])
@pytest.mark.parametrize("eps", [0.4, 0.2, 0.1])
def test_mollifier_gradient_norm_scales_inversely(dim, eps):
    _, g = mollifier_norms(MollifierSpec(eps, dim))
    _, g_half = mollifier_norms(MollifierSpec(eps / 2, dim))
    assert g_half / g == pytest.approx(2.0, abs=1e-8)


def test_mollifier_gradient_norm_in_1d():
    # in 1D the bump is unimodal, so the L1 norm of its derivative is twice the peak
    spec = MollifierSpec(1.0, 1)
    _, g = mollifier_norms(spec)
    assert g == pytest.approx(2 * float(spec(0.0)), rel=1e-10)


def test_fitted_constants_bound_the_ladder():
    dom = BoxDomain((math.pi,), (256,))
    x = dom.axes()[0]
    psi0 = np.minimum(x, math.pi - x)
    ladder = (0.2, 0.1, 0.05)
    fit = fit_mollifier_constants(psi0, dom, ladder)
    base = grid_norms(psi0, dom)
    for eps in ladder:
        spec = MollifierSpec(eps, 1)
        l1, g1 = mollifier_norms(spec)
        sm = grid_norms(mollify(psi0, spec, dom, "odd"), dom)
        assert sm.l2 <= fit["C0"] * l1 * base.l2 * (1 + 1e-12)
        assert sm.lap <= fit["C2"] * g1 * base.h1 * (1 + 1e-12)
