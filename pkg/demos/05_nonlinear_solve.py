"""
Fixed-point solution of the nonlinear problem
=============================================

The nonlinear solution is the fixed point of the map that feeds a guessed
trajectory into the nonlinear terms and solves the resulting linear problem.
In certified mode the horizon is covered by subintervals on which that map
provably contracts; in practical mode one interval is used and convergence
is monitored.
"""

from dataclasses import replace

import numpy as np

from tdks.galerkin import assemble, integrate_reference
from tdks.fixedpoint import solve_tdks
from tdks.presets import preset
from tdks.studies import contraction_study, schedule_study

problem = preset("desk").problem()
report = solve_tdks(replace(problem, dt=4e-4))
l2 = report.trajectory.norm_series()["l2"]
print(f"desk run: {len(report.intervals)} intervals, estimates pass {report.estimates_passed}, norm drift {np.max(np.abs(l2 - l2[0])):.1e}")
print("Picard iterations per interval:", [i["picard"]["iterations"] for i in report.intervals])

system = assemble(problem.domain, problem.m, problem.potentials)
ref = integrate_reference(system, problem.nonlinearity, problem.psi0, (0.0, problem.T), 4e-4 / 16)
print(f"difference to the splitting reference: {np.linalg.norm(report.trajectory.endpoint.coeffs - ref.endpoint.coeffs):.2e}")

# contraction of the map on random pairs inside the invariant ball
res = contraction_study(preset("contraction"), pairs=20)
print(f"certified length {res.summary['T_hat']:.4g} with factor {res.summary['g']:.3f}; worst measured ratio {res.summary['max_ratio']:.2e}")

# the covering schedule on a short horizon
res = schedule_study(preset("schedule").override("galerkin", "T", 0.5))
print(f"schedule: {res.summary['steps']} subintervals, lengths sum to {res.summary['sum_T_d']!r}")
for row in res.rows[:4]:
    print(f"  k={row['k']}  length {row['T_d']:.4g}  contraction factor {row['g_k']:.3f}")
