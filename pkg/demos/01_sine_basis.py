"""
Sine basis, projection and discrete norms
=========================================

Fields vanishing on the walls of a box are expanded in the Dirichlet
Laplacian eigenfunctions. Coefficients give the L2, gradient and Laplacian
norms exactly, and dropping modes can only lower them.
"""

import math

import numpy as np

from tdks.spectral import BoxDomain, enumerate_modes, norms, project, synthesize, truncation_check

# a 1D interval (0, pi) resolved by 128 interior nodes
line = BoxDomain((math.pi,), (128,))

# project a smooth function onto the first 16 modes
field = project(lambda x: np.sin(x) * np.exp(np.cos(x)), line, 16)
print("leading coefficients:", np.round(np.abs(field.coeffs[:6]), 6))

# norms come straight from the coefficients
r = norms(field)
print(f"L2 {r.l2:.6f}  grad {r.grad:.6f}  lap {r.lap:.6f}")

# synthesis followed by projection is the identity on the span
again = project(synthesize(field), line, 16)
print("round-trip error:", np.max(np.abs(again.coeffs - field.coeffs)))

# truncation never increases any of the three norms
cut = field.truncate(4)
print("truncation margins:", truncation_check(field, cut))

# in several dimensions modes are ordered by eigenvalue
print("first 2D modes on (0,pi)x(0,2):", enumerate_modes((math.pi, 2.0), 6).tolist())
