"""
The linear Galerkin system
==========================

With the nonlinearity frozen the coefficients obey a linear ODE with a
Hermitian matrix. Crank-Nicolson keeps the norm exactly and converges at
second order; a Strang splitting integrator serves as an independent check.
"""

import math

import numpy as np

from tdks.galerkin import assemble, integrate_linear, integrate_reference, solve_auxiliary
from tdks.potentials import PotentialSpec, profile
from tdks.spectral import BoxDomain, SpectralField

line = BoxDomain((math.pi,), (64,))

# a single eigenmode only picks up a phase
g0 = SpectralField.unit(line, 8, 0)
for dt in (1e-3, 1e-4):
    traj = solve_auxiliary(None, g0, (0.0, math.pi), dt)
    print(f"dt={dt:g}: |psi(pi) + psi(0)| = {np.linalg.norm(traj.endpoint.coeffs + g0.coeffs):.3e}")

# a static cosine potential couples the modes
spec = PotentialSpec.build(line, 1.0, V0=profile("cosine", amplitude=1.0, wavenumber=2))
system = assemble(line, 16, spec)
psi0 = np.zeros(16, complex)
psi0[:3] = [1.0, 0.5, 0.25]
ref = integrate_reference(system, None, psi0, (0.0, 1.0), 1e-5)
prev = None
for dt in (4e-3, 2e-3, 1e-3):
    traj = integrate_linear(system, psi0, None, (0.0, 1.0), dt)
    err = np.linalg.norm(traj.endpoint.coeffs - ref.endpoint.coeffs)
    drift = np.max(np.abs(traj.norm_series()["l2"] - np.linalg.norm(psi0)))
    print(f"dt={dt:g}: error {err:.3e}" + (f"  ratio {prev / err:.2f}" if prev else "") + f"  norm drift {drift:.1e}")
    prev = err
