"""Finite-frequency bosonic (spin-wave) sector."""

from .bdg import BdgDecomposition, BdgError, bdg_decompose
from .covariance import (
    CovarianceError,
    ObcTrajectory,
    ProjectedDynamics,
    SpinWaveKind,
    SpinWaveState,
    evolve_obc_covariance,
    check_positivity,
    evolve_obc_covariance_beta,
    vacuum_covariance,
)
from .pbc import (
    DynamicalInstabilityError,
    PbcModel,
    PbcModeSet,
    PbcTrajectory,
    evolve_pbc_modes,
    pbc_mode_spectrum,
)
from .quadratic import QuadraticHamiltonian, build_quadratic, nambu_metric, nambu_swap

__all__ = [
    "BdgDecomposition", "BdgError", "bdg_decompose", "CovarianceError", "ObcTrajectory", "ProjectedDynamics",
    "SpinWaveKind", "SpinWaveState", "evolve_obc_covariance", "evolve_obc_covariance_beta",
    "vacuum_covariance", "check_positivity", "DynamicalInstabilityError", "PbcModel", "PbcModeSet", "PbcTrajectory",
    "evolve_pbc_modes", "pbc_mode_spectrum", "QuadraticHamiltonian", "build_quadratic",
    "nambu_metric", "nambu_swap",
]
