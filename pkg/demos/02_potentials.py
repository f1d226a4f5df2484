"""
External fields, Hartree and exchange-correlation terms
=======================================================

The linear potential combines a static part with a control-weighted part.
The nonlinear forcing adds the Hartree field of the density and a
density-dependent exchange-correlation potential.
"""

import math

import numpy as np

from tdks.potentials import (
    ControlSignal,
    MollifierSpec,
    Nonlinearity,
    PotentialSpec,
    XcModel,
    eval_V,
    hartree,
    mollifier_norms,
    profile,
)
from tdks.spectral import BoxDomain, project

line = BoxDomain((math.pi,), (128,))

# a piecewise-constant control switching sign at t = 0.5
u = ControlSignal.from_pairs([(0.0, 0.5), (0.5, -0.5)], horizon=1.0)
spec = PotentialSpec.build(line, 1.0, V0=profile("harmonic", kappa=0.5, center=math.pi / 2), Vu=profile("linear"), u=u)
print("control breakpoints:", spec.breakpoints)
print("V at the centre before and after the switch:", eval_V(spec, 0.2)[64], eval_V(spec, 0.7)[64])
print("sup norms used by the bounds:", spec.norms)

# the Hartree field of a localized density
psi = project(lambda x: np.sin(x) ** 3, line, 16)
vh = hartree(psi, softening=1.0)
print(f"Hartree field: max {vh.max():.4f} at x = {line.axes()[0][vh.argmax()]:.3f}")

# the nonlinear forcing is orthogonal to the state in the imaginary part,
# which is what keeps the norm constant
nl = Nonlinearity(hartree=True, softening=1.0, xc=XcModel("saturating", coefficient=-0.5))
F = nl(psi)
print("Im(F, psi) =", F.inner(psi).imag)

# mollifier scaling: the L1 norm of the kernel gradient doubles when the width halves
for eps in (0.2, 0.1, 0.05):
    print(f"eps={eps:<5} grad-kernel L1 norm {mollifier_norms(MollifierSpec(eps, 1))[1]:.4f}")
