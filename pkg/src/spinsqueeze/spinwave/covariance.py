"""Spin-wave covariance dynamics for open lattices.

The Nambu covariance ``C = <alpha alpha^+> = [[I + D*, E], [E*, D]]`` is split
into its spin-wave part ``Pi C Pi^+`` (evolved under ``K(h) = Pi eta M(h) Pi``)
and a frozen remainder carrying the zero-mode components.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from ..fields import ControlField
from .bdg import BdgDecomposition
from .pbc import PbcModeSet

POSITIVITY_TOL = 1e-6


class CovarianceError(ValueError):
    """The reconstructed ``D = <a^+ a>`` block lost positivity."""


class SpinWaveKind(str, enum.Enum):
    PBC_MODES = "pbc_modes"
    OBC_COVARIANCE = "obc_covariance"


@dataclass(frozen=True)
class SpinWaveState:
    kind: SpinWaveKind
    data: object = field(repr=False)
    n_fm: float = 0.0

    @classmethod
    def empty(cls) -> "SpinWaveState":
        """A spin-wave sector without excitations."""
        return cls(SpinWaveKind.PBC_MODES, None, 0.0)

    @classmethod
    def from_modes(cls, modes: PbcModeSet) -> "SpinWaveState":
        return cls(SpinWaveKind.PBC_MODES, modes, modes.n_fm)

    @classmethod
    def from_covariance(cls, cov: np.ndarray) -> "SpinWaveState":
        n = cov.shape[0] // 2
        return cls(SpinWaveKind.OBC_COVARIANCE, cov, float(np.trace(cov[n:, n:]).real))

    @property
    def D(self) -> np.ndarray:
        n = self.data.shape[0] // 2
        return self.data[n:, n:]

    @property
    def E(self) -> np.ndarray:
        n = self.data.shape[0] // 2
        return self.data[:n, n:]


def vacuum_covariance(n: int) -> np.ndarray:
    """``<alpha alpha^+>`` of the Holstein-Primakoff vacuum."""
    c = np.zeros((2 * n, 2 * n), dtype=complex)
    c[:n, :n] = np.eye(n)
    return c


def check_positivity(cov: np.ndarray, tol: float = POSITIVITY_TOL) -> None:
    """Raise if the ``<a^+ a>`` block of ``cov`` has an eigenvalue below ``-tol``."""
    n = cov.shape[0] // 2
    D = cov[n:, n:]
    lo = np.linalg.eigvalsh(0.5 * (D + D.conj().T)).min()
    if lo < -tol:
        raise CovarianceError(f"<a^+ a> has eigenvalue {lo:.3e} < -{tol}")


@dataclass(frozen=True)
class ObcTrajectory:
    times: np.ndarray
    covariances: np.ndarray = field(repr=False)

    @property
    def n_fm(self) -> np.ndarray:
        n = self.covariances.shape[1] // 2
        return np.trace(self.covariances[:, n:, n:], axis1=1, axis2=2).real

    def __getitem__(self, k) -> SpinWaveState:
        return SpinWaveState.from_covariance(self.covariances[k])

    def min_d_eigenvalues(self) -> np.ndarray:
        """Smallest eigenvalue of the reassembled ``D`` at every sample.

        The frozen zero-mode/spin-wave cross terms make this slightly
        negative on open lattices; it is a validity diagnostic, not a bound.
        """
        n = self.covariances.shape[1] // 2
        D = self.covariances[:, n:, n:]
        return np.linalg.eigvalsh(0.5 * (D + D.conj().swapaxes(-1, -2)))[:, 0]

    @property
    def final(self) -> SpinWaveState:
        return self[-1]


class ProjectedDynamics:
    """Shared pieces of the projector route for repeated evaluation."""

    def __init__(self, decomp: BdgDecomposition):
        self.decomp = decomp
        n = decomp.n_sites
        self.n = n
        Pi = decomp.projector
        self.Pi = Pi
        eta = decomp.eta
        self.K0 = Pi @ eta @ decomp.M0 @ Pi
        self.K1 = Pi @ eta @ Pi
        c0 = vacuum_covariance(n)
        self.cov_s0 = Pi @ c0 @ Pi.conj().T
        self.cov_remain = c0 - self.cov_s0
        self.d_select = np.zeros((2 * n, 2 * n))
        self.d_select[n:, n:] = np.eye(n)

    def propagators(self, h, dt: float) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        K = self.K0 + h[..., None, None] * self.K1
        return expm(-1j * dt * K)


def evolve_obc_covariance(decomp: BdgDecomposition, field: ControlField, substeps: int = 1,
                          check: bool = True) -> ObcTrajectory:
    """Projector-route covariance trajectory starting from the HP vacuum.

    ``check`` tests the evolved spin-wave part ``Pi C Pi^+``, which stays
    positive semidefinite exactly; a violation signals numerical breakdown.
    """
    dyn = ProjectedDynamics(decomp)
    dt = field.dt / substeps
    cs = dyn.cov_s0
    parts = [cs]
    for h in field.segments:
        U = dyn.propagators(h, dt)
        Ud = U.conj().T
        for _ in range(substeps):
            cs = U @ cs @ Ud
            parts.append(cs)
    parts = np.array(parts)
    if check:
        for c in parts:
            check_positivity(c)
    return ObcTrajectory(field.sample_times(substeps), parts + dyn.cov_remain)


def evolve_obc_covariance_beta(decomp: BdgDecomposition, field: ControlField, substeps: int = 1) -> ObcTrajectory:
    """Quasiparticle-basis route: evolve ``C_SS`` under ``Omega_SS(h)`` with the other blocks frozen."""
    n = decomp.n_sites
    T = decomp.T
    Tinv = decomp.T_inv()
    cb = Tinv @ vacuum_covariance(n) @ Tinv.conj().T
    dt = field.dt / substeps
    out = [T @ cb @ T.conj().T]
    for h in field.segments:
        om_ss = decomp.omega(h)[2:, 2:]
        U = expm(-1j * dt * om_ss)
        for _ in range(substeps):
            cb = cb.copy()
            cb[2:, 2:] = U @ cb[2:, 2:] @ U.conj().T
            out.append(T @ cb @ T.conj().T)
    return ObcTrajectory(field.sample_times(substeps), np.array(out))
