"""Spectral Galerkin discretization of the time-dependent Kohn-Sham equations on a box.

Modules
-------
spectral     sine basis, projections and discrete norms
potentials   controls, Hartree and xc terms, mollifiers, Lipschitz probes
galerkin     Galerkin ODE system, Crank-Nicolson and a splitting reference
energy       constants of the a priori bounds and their verification
fixedpoint   contraction map, covering schedule and the nonlinear solver
config       INI run configurations
presets      bundled configurations
studies      convergence and certification studies
cli          command-line front end
"""

from .spectral import BoxDomain, SpectralField, project, norms
from .galerkin import Trajectory, assemble, solve_auxiliary, integrate_reference
from .potentials import ControlSignal, PotentialSpec, Nonlinearity, XcModel, MollifierSpec
from .energy import constants, check_estimates
from .fixedpoint import TDKSProblem, solve_tdks, solve_regularized, covering_schedule
from .config import RunConfig, ConfigError
from .presets import preset, preset_names
from .studies import run_study

__version__ = "0.1.0"

__all__ = [
    "BoxDomain",
    "SpectralField",
    "project",
    "norms",
    "Trajectory",
    "assemble",
    "solve_auxiliary",
    "integrate_reference",
    "ControlSignal",
    "PotentialSpec",
    "Nonlinearity",
    "XcModel",
    "MollifierSpec",
    "constants",
    "check_estimates",
    "TDKSProblem",
    "solve_tdks",
    "solve_regularized",
    "covering_schedule",
    "RunConfig",
    "ConfigError",
    "preset",
    "preset_names",
    "run_study",
]
