import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tdks.config import ConfigError, RunConfig, initial_profile, parse_number, parse_spec
from tdks.io import (
    read_csv_meta,
    read_grid_csv,
    read_snapshot,
    read_snapshot_series,
    read_trajectory_csv,
    write_grid_csv,
    write_snapshot,
    write_snapshot_series,
    write_trajectory_csv,
)
from tdks.presets import PRESETS, preset, preset_names
from tdks.spectral import BoxDomain, SpectralField, norms, project


@pytest.mark.parametrize(
    "text, value",
    [("1e-3", 1e-3), ("pi", math.pi), ("2*pi", 2 * math.pi), ("-0.5", -0.5), ("2**0.5", math.sqrt(2)), ("pi/4 + 1", math.pi / 4 + 1)],
)
def test_parse_number(text, value):
    assert parse_number(text) == pytest.approx(value, rel=1e-15)


@pytest.mark.parametrize("text", ["", "abc", "__import__('os')", "1/0", "True", "[1]"])
def test_parse_number_rejects(text):
    with pytest.raises(ValueError):
        parse_number(text)


def test_parse_spec():
    assert parse_spec("harmonic:kappa=0.5") == ("harmonic", {"kappa": 0.5})
    assert parse_spec("Mix:weights=1;0.5") == ("mix", {"weights": (1.0, 0.5)})
    assert parse_spec("sine") == ("sine", {})
    assert parse_spec("table:file=x.csv") == ("table", {"file": "x.csv"})
    with pytest.raises(ValueError):
        parse_spec("harmonic:kappa")


def test_defaults_and_overrides():
    cfg = RunConfig.from_string("")
    assert cfg.T == 1.0 and cfg.dt == 1e-3 and cfg.m == 16 and cfg.epsilon is None
    assert cfg.domain() == BoxDomain((math.pi,), (64,))
    cfg2 = cfg.override("galerkin", "T", 2.0)
    assert cfg2.T == 2.0 and cfg.T == 1.0
    with pytest.raises(ConfigError):
        cfg.override("galerkin", "nosuch", 1)


@pytest.mark.parametrize(
    "text, message",
    [
        ("[galerkin]\ndt = -0.001\n", "galerkin.dt: must be positive, got -0.001"),
        ("[galerkin]\nT = 0\n", "galerkin.T"),
        ("[spectral]\ndim = 2\n", "spectral.lengths: expected 2 entries"),
        ("[spectral]\ngrid = 2\n", "spectral.grid"),
        ("[fixedpoint]\nmode = fast\n", "fixedpoint.mode"),
        ("[galerkin]\ndtt = 1\n", "unknown key(s) in [galerkin]: dtt"),
        ("[solver]\n", "unknown section [solver]"),
        ("[spectral]\nm = many\n", "spectral.m"),
        ("[cli]\nepsilon = -1\n", "cli.epsilon"),
        ("[galerkin\n", "<string>"),
    ],
)
def test_invalid_fields_name_the_field(text, message):
    with pytest.raises(ConfigError) as info:
        RunConfig.from_string(text)
    assert message in str(info.value)


@pytest.mark.parametrize("name", preset_names())
def test_presets_round_trip_through_ini(name):
    cfg = preset(name)
    again = RunConfig.from_string(cfg.to_ini())
    assert again.values == cfg.values
    assert again.hash == cfg.hash


def test_unknown_preset():
    with pytest.raises(KeyError, match="available"):
        preset("nosuch")


def test_hash_ignores_output_and_tracks_values():
    cfg = preset("linear")
    assert cfg.override("cli", "out", "elsewhere").hash == cfg.hash
    assert cfg.override("galerkin", "dt", 5e-4).hash != cfg.hash
    assert len(cfg.hash) == 64


def test_file_references_hash_by_content(tmp_path):
    dom = BoxDomain((math.pi,), (16,))
    write_grid_csv(tmp_path / "v.csv", np.linspace(0, 1, 16), dom)
    text = "[spectral]\ngrid = 16\nm = 4\n[potentials]\nV0 = v.csv\n"
    (tmp_path / "run.ini").write_text(text)
    cfg = RunConfig.from_file(tmp_path / "run.ini")
    h1 = cfg.hash
    assert cfg.canonical()["potentials"]["V0"].startswith("sha256:")
    np.testing.assert_allclose(cfg.potentials().V0, np.linspace(0, 1, 16))
    write_grid_csv(tmp_path / "v.csv", np.linspace(0, 2, 16), dom)
    assert RunConfig.from_file(tmp_path / "run.ini").hash != h1
    # an absolute-path copy elsewhere keeps the hash
    (tmp_path / "sub").mkdir()
    (tmp_path / "sub" / "copy.ini").write_text(cfg.to_ini(absolute_paths=True))
    assert RunConfig.from_file(tmp_path / "sub" / "copy.ini").hash == RunConfig.from_file(tmp_path / "run.ini").hash


def test_missing_referenced_file(tmp_path):
    (tmp_path / "run.ini").write_text("[potentials]\nV0 = missing.csv\n")
    cfg = RunConfig.from_file(tmp_path / "run.ini")
    with pytest.raises(ConfigError, match="missing.csv"):
        cfg.hash


def test_controls_from_text():
    cfg = RunConfig.from_string("[potentials]\nVu = linear\nu = 0:0.5, 0.25:-1\n[galerkin]\nT = 0.5\n")
    pots = cfg.potentials()
    assert pots.u(0.1) == 0.5 and pots.u(0.3) == -1.0
    assert pots.breakpoints == (0.25,)
    with pytest.raises(ConfigError, match="potentials.u"):
        RunConfig.from_string("[potentials]\nu = 0.5:1\n").potentials()


def test_profile_centres_default_to_the_box_centre():
    cfg = RunConfig.from_string("[potentials]\nV0 = harmonic:kappa=2\n")
    V0 = cfg.potentials().V0
    np.testing.assert_allclose(V0, V0[::-1], atol=1e-13)


@pytest.mark.parametrize(
    "text, match",
    [("xc = lda", "unknown xc"), ("xc = saturating:coef=1", "unknown parameters"), ("V0 = harmonic:depth=1", "potentials.V0"), ("softening = -1", "softening")],
)
def test_potential_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        cfg = RunConfig.from_string(f"[potentials]\n{text}\n")
        cfg.potentials()
        cfg.nonlinearity()


def test_xc_models_from_text():
    cfg = RunConfig.from_string("[potentials]\nxc = table:density=0;1;2,values=0;-1;-1.5\nrough_xc = saturating:coefficient=-0.5,K1=0.6\n")
    nl = cfg.nonlinearity()
    assert nl.xc.kind == "table" and nl.xc.table_values == (0.0, -1.0, -1.5)
    assert nl.rough_xc.coefficient == -0.5 and nl.rough_xc.K1 == 0.6


def test_initial_data_normalization_and_scale():
    cfg = RunConfig.from_string("[cli]\npsi0 = mix:weights=1;0.5\nscale = 0.3\n")
    samples = cfg.initial_samples()
    assert norms(project(samples, cfg.domain(), cfg.m)).l2 == pytest.approx(0.3, rel=1e-13)
    raw = RunConfig.from_string("[cli]\npsi0 = sine:index=2\nnormalize = false\n").initial_samples()
    c = project(raw, BoxDomain((math.pi,), (64,)), 16).coeffs
    assert abs(c[1]) == pytest.approx(math.sqrt(math.pi / 2), rel=1e-12)
    with pytest.raises(ConfigError, match="normalize"):
        RunConfig.from_string("[cli]\npsi0 = zero\n").initial_samples()


@pytest.mark.parametrize("name", ["sine", "expcos", "mix", "tent", "gaussian", "zero"])
@pytest.mark.parametrize("lengths, grid", [((math.pi,), (32,)), ((2.0, 3.0), (16, 20))])
def test_initial_profiles_vanish_at_the_walls(name, lengths, grid):
    dom = BoxDomain(lengths, grid)
    f = initial_profile(name, dom)
    assert f.shape == grid and np.all(np.isfinite(f))
    # samples next to a wall are O(h) relative to the bulk
    peak = np.max(np.abs(f))
    if peak > 0:
        edge = max(np.max(np.abs(np.take(f, [0, -1], axis=ax))) for ax in range(dom.dim))
        assert edge <= 3 * max(math.pi * h / L for h, L in zip(dom.spacing, lengths)) * peak


def test_initial_profile_errors():
    dom = BoxDomain((math.pi,), (16,))
    with pytest.raises(ValueError):
        initial_profile("nosuch", dom)
    with pytest.raises(ValueError):
        initial_profile("sine", dom, index=0)


def test_declared_lipschitz_constants():
    cfg = RunConfig.from_string("[fixedpoint]\nlipschitz = C_c=0.5,K_tilde=0.25\n")
    lip = cfg.lipschitz()
    assert lip.C_c == 0.5 and lip.K_tilde == 0.25 and lip.C_a == 0.0
    assert RunConfig.from_string("").lipschitz() is None
    with pytest.raises(ConfigError, match="unknown constants"):
        RunConfig.from_string("[fixedpoint]\nlipschitz = Q=1\n").lipschitz()


def test_problem_is_built_from_preset():
    problem = preset("desk").problem()
    assert problem.m == 32 and problem.dt == 1e-4 and problem.T == 1.0
    assert problem.nonlinearity.hartree and problem.nonlinearity.xc.coefficient == -0.5
    assert problem.potentials.breakpoints == (0.5,)
    assert norms(problem.psi0).l2 == pytest.approx(1.0, rel=1e-13)
    assert preset("schedule").problem().mode == "certified"
    assert PRESETS["default"] == PRESETS["schedule"]


# ---------------------------------------------------------------------------
# file formats


def test_snapshot_round_trip(tmp_path, rng):
    dom = BoxDomain((math.pi, 2.0), (12, 10))
    f = SpectralField(dom, rng.standard_normal(9) + 1j * rng.standard_normal(9))
    write_snapshot(tmp_path / "s.bin", f)
    g = read_snapshot(tmp_path / "s.bin")
    assert g.domain == dom
    np.testing.assert_array_equal(g.coeffs, f.coeffs)


def test_snapshot_series_round_trip(tmp_path, rng):
    dom = BoxDomain((math.pi,), (32,))
    times = np.linspace(0.0, 1.0, 7)
    coeffs = rng.standard_normal((7, 5)) + 1j * rng.standard_normal((7, 5))
    write_snapshot_series(tmp_path / "t.bin", dom, times, coeffs)
    d2, t2, c2 = read_snapshot_series(tmp_path / "t.bin")
    assert d2 == dom
    np.testing.assert_array_equal(t2, times)
    np.testing.assert_array_equal(c2, coeffs)


def test_snapshot_kind_is_checked(tmp_path):
    dom = BoxDomain((math.pi,), (32,))
    write_snapshot(tmp_path / "s.bin", SpectralField.zeros(dom, 4))
    with pytest.raises(ValueError):
        read_snapshot_series(tmp_path / "s.bin")
    (tmp_path / "junk.bin").write_bytes(b"nonsense")
    with pytest.raises(ValueError):
        read_snapshot(tmp_path / "junk.bin")


def test_trajectory_csv_round_trip(tmp_path, rng):
    times = np.array([0.0, 0.1, 0.2])
    coeffs = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
    write_trajectory_csv(tmp_path / "t.csv", times, coeffs, {"config_hash": "ab12"})
    assert read_csv_meta(tmp_path / "t.csv") == {"config_hash": "ab12"}
    t2, c2 = read_trajectory_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(t2, times)
    np.testing.assert_array_equal(c2, coeffs)


@given(st.integers(1, 3), st.integers(0, 2**31))
def test_grid_csv_round_trip(dim, seed):
    import tempfile
    from pathlib import Path

    rng = np.random.default_rng(seed)
    grid = tuple(int(n) for n in rng.integers(4, 8, size=dim))
    dom = BoxDomain((1.0,) * dim, grid)
    vals = rng.standard_normal(grid) + 1j * rng.standard_normal(grid)
    with tempfile.TemporaryDirectory() as d:
        write_grid_csv(Path(d) / "g.csv", vals, dom)
        np.testing.assert_array_equal(read_grid_csv(Path(d) / "g.csv", dom), vals)
