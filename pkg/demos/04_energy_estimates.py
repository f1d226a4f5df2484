"""
Checking the a priori bounds along a trajectory
===============================================

The constants of the energy bounds depend only on sup norms of the
potential, the Poincare constant of the box and the horizon. Every stored
sample of a trajectory is then compared against the bounds.
"""

import math

import numpy as np

from tdks.energy import check_estimates, constants
from tdks.galerkin import Trajectory, solve_auxiliary
from tdks.potentials import PotentialSpec, profile
from tdks.spectral import BoxDomain, SpectralField

line = BoxDomain((math.pi,), (64,))
spec = PotentialSpec.build(line, 1.0, V0=profile("harmonic", kappa=0.5, center=math.pi / 2))
consts = constants(spec, 1.0)
print(f"Poincare {consts.C_PF:.3f}  gradient {consts.C_grad:.3f}  Laplacian growth {consts.C1_lap:.3f}")

psi0 = SpectralField(line, np.array([1.0, 0.4, 0.2, 0.1, 0, 0, 0, 0], complex))
traj = solve_auxiliary(None, psi0, (0.0, 1.0), 1e-3, spec)
report = check_estimates(traj, None, psi0, consts)
print("genuine trajectory passes:", report.passed)
final = {r.estimate: r for r in report.rows}  # last stored time per estimate
for row in final.values():
    print(f"  {row.estimate:8s} observed {row.observed:.4g} <= bound {row.bound:.4g}")

# an artificially amplified trajectory violates the L2 growth bound
bad = Trajectory(line, traj.times, traj.coeffs * np.linspace(1, 10, traj.times.size)[:, None])
print("amplified trajectory fails:", sorted({r.estimate for r in check_estimates(bad, None, psi0, consts).failures()}))
