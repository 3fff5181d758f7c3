"""Simulator for N three-level lambda atoms coupled to a lossy driven cavity.

Computes steady-state transmission spectra, cavity-linewidth (FWHM) narrowing
versus control field and atom number, photon statistics, Monte Carlo
wave-function cross-checks, and the semiclassical mean-field large-N limit.
All rates are expressed in units of the cavity intensity decay rate kappa.
"""

__version__ = "0.1.0"

from .hilbert import HilbertSpace, Operator, build_space
from .model import SystemParams, Superoperator, hamiltonian, jump_operators, liouvillian
from .steadystate import DensityMatrix, steady_state, evolve
from .observables import ObservableSet, observable_set, transmission
from .sweep import (
    FwhmResult,
    QuantumPointSolver,
    Spectrum,
    fwhm,
    min_fwhm,
    resolve_fock_dim,
    spectrum,
    sweep_control,
)
from .mcwf import McwfPointSolver, run_ensemble, run_trajectory
from .semiclassical import (
    SemiclassicalParams,
    SemiclassicalPointSolver,
    semiclassical_observables,
    semiclassical_steady,
)
from .config import ConfigError, RunConfig, parse_config
from .cli import compare_methods, run_config

__all__ = [
    "HilbertSpace",
    "Operator",
    "build_space",
    "SystemParams",
    "Superoperator",
    "hamiltonian",
    "jump_operators",
    "liouvillian",
    "DensityMatrix",
    "steady_state",
    "evolve",
    "ObservableSet",
    "observable_set",
    "transmission",
    "Spectrum",
    "FwhmResult",
    "QuantumPointSolver",
    "spectrum",
    "fwhm",
    "sweep_control",
    "min_fwhm",
    "resolve_fock_dim",
    "McwfPointSolver",
    "run_trajectory",
    "run_ensemble",
    "SemiclassicalParams",
    "SemiclassicalPointSolver",
    "semiclassical_steady",
    "semiclassical_observables",
    "ConfigError",
    "RunConfig",
    "parse_config",
    "run_config",
    "compare_methods",
]
