"""Bundled run configurations, addressable by name wherever a config path is accepted."""

from __future__ import annotations

from .config import RunConfig

__all__ = ["PRESETS", "preset", "preset_names"]

_SINGLE_MODE = """
[spectral]
dim = 1
lengths = pi
grid = 64
m = 8

[galerkin]
T = pi
dt = 1e-3

[cli]
psi0 = sine:index=1
"""

_LINEAR = """
[spectral]
dim = 1
lengths = pi
grid = 64
m = 16

[potentials]
V0 = cosine:amplitude=1,wavenumber=2
Vu = cosine:amplitude=0.5,wavenumber=4
u = 0.3

[galerkin]
T = 1
dt = 1e-3

[cli]
psi0 = mix:weights=1;0.5;0.25
study_dt = 0.004,0.002,0.001,0.0005
"""

_DESK = """
[spectral]
dim = 1
lengths = pi
grid = 128
m = 32

[potentials]
V0 = harmonic:kappa=0.5
Vu = linear:slope=1
u = 0:0.5, 0.5:-0.5
hartree = true
softening = 1
xc = saturating:coefficient=-0.5

[galerkin]
T = 1
dt = 1e-4

[fixedpoint]
lipschitz_trials = 50

[cli]
psi0 = expcos
study_dt = 0.004,0.002,0.001,0.0005
"""

_SMOOTH = """
[spectral]
dim = 1
lengths = pi
grid = 256
m = 16

[potentials]
V0 = cosine:amplitude=1,wavenumber=2
xc = saturating:coefficient=-1

[galerkin]
T = 0.5
dt = 1e-3

[fixedpoint]
lipschitz_trials = 50

[cli]
psi0 = expcos
study_m = 4,8,16
study_m_ref = 64
"""

_CONTRACTION = """
[spectral]
dim = 1
lengths = pi
grid = 64
m = 12

[potentials]
V0 = harmonic:kappa=0.5
hartree = true
softening = 1
xc = saturating:coefficient=-0.5

[galerkin]
T = 1
dt = 1e-3

[fixedpoint]
mode = certified
lipschitz_trials = 100

[cli]
psi0 = sine:index=1
scale = 0.3
"""

_SCHEDULE = """
[spectral]
dim = 1
lengths = pi
grid = 64
m = 16

[potentials]
xc = saturating:coefficient=0.25

[galerkin]
T = 5
dt = 1e-3

[fixedpoint]
mode = certified
lipschitz_trials = 100

[cli]
psi0 = sine:index=1
normalize = false
scale = 0.3
"""

_ROUGH = """
[spectral]
dim = 1
lengths = pi
grid = 256
m = 48

[potentials]
V0 = harmonic:kappa=0.5
W0 = kink:amplitude=1
rough_xc = saturating:coefficient=-0.5

[galerkin]
T = 0.25
dt = 5e-4

[fixedpoint]
lipschitz_trials = 50

[cli]
psi0 = tent
epsilon = 0.1
study_eps = 0.2,0.1,0.05
"""

PRESETS = {
    "default": _SCHEDULE,
    "single-mode": _SINGLE_MODE,
    "linear": _LINEAR,
    "desk": _DESK,
    "smooth": _SMOOTH,
    "contraction": _CONTRACTION,
    "schedule": _SCHEDULE,
    "rough": _ROUGH,
}


def preset_names() -> list[str]:
    return sorted(PRESETS)


def preset(name: str) -> RunConfig:
    """The bundled configuration called ``name``."""
    try:
        text = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(preset_names())}") from None
    return RunConfig.from_string(text, source=f"preset:{name}")
