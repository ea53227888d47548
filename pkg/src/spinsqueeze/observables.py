"""Physical observables assembled from the rotor and spin-wave sectors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln, xlogy

from .moments import LostMeanSpinError, Moments, min_quadrature_variance, wineland
from .rotor import RotorKind, RotorState, build_dicke_operators, rotor_moments
from .spinwave.covariance import SpinWaveState

LOST_SPIN_THRESHOLD = 1e-9


@dataclass(frozen=True)
class SqueezingResult:
    xi_squared: float
    xi_db: float
    theta_min: float
    mean_kx: float
    n_fm: float = 0.0

    @classmethod
    def build(cls, xi2, theta, mean_kx, n_fm=0.0) -> "SqueezingResult":
        return cls(float(xi2), to_db(xi2), float(theta), float(mean_kx), float(n_fm))


class Estimate(NamedTuple):
    value: float
    approximate: bool


def to_db(xi2) -> float:
    """Squeezing in dB, ``-10 log10(xi^2)`` (positive means squeezed)."""
    return float(-10.0 * np.log10(xi2))


def _n_fm(spinwave_state: SpinWaveState | None) -> float:
    return 0.0 if spinwave_state is None else float(spinwave_state.n_fm)


def rsw_squeezing_from_moments(mom: Moments, n_fm: float, n_spins: int) -> SqueezingResult:
    """``xi^2 = N min_theta Var(K_theta) / (<K_x> - N_FM)^2``, x as reference axis."""
    cov = mom.covariance
    vmin, theta = min_quadrature_variance(cov[1, 1], cov[2, 2], cov[1, 2])
    denom = mom.mean[0] - n_fm
    if denom < LOST_SPIN_THRESHOLD * n_spins:
        raise LostMeanSpinError(f"<K_x> - N_FM = {denom:.3e}; squeezing undefined")
    return SqueezingResult.build(n_spins * vmin / denom**2, theta, mom.mean[0], n_fm)


def squeezing_from_rsw(rotor_state: RotorState, spinwave_state: SpinWaveState | None,
                       n_spins: int) -> SqueezingResult:
    """Rotor/spin-wave estimate of the squeezing parameter."""
    if rotor_state.n_spins != n_spins:
        raise ValueError("rotor state does not match n_spins")
    return rsw_squeezing_from_moments(rotor_moments(rotor_state), _n_fm(spinwave_state), n_spins)


def squeezing_exact(full_state, n_spins: int | None = None) -> SqueezingResult:
    """Wineland parameter of a many-body state (or any object exposing ``moments()``)."""
    mom = full_state if isinstance(full_state, Moments) else full_state.moments()
    n = n_spins if n_spins is not None else full_state.n_spins
    xi2, theta, _ = wineland(mom, n, LOST_SPIN_THRESHOLD)
    return SqueezingResult.build(xi2, theta, mom.mean[0])


def total_spin_squared(rotor_state: RotorState, spinwave_state: SpinWaveState | None,
                       n_spins: int) -> Estimate:
    """Approximate ``<S^2>`` as ``(S_max - N_FM)(S_max - N_FM + 1)``.

    Each finite-momentum excitation lowers the total spin by one; the rotor
    itself stays in the maximal sector.
    """
    s = n_spins / 2 - _n_fm(spinwave_state)
    return Estimate(s * (s + 1), spinwave_state is not None and _n_fm(spinwave_state) != 0)


def mean_spin_magnitude(rotor_state: RotorState, spinwave_state: SpinWaveState | None,
                        n_spins: int) -> float:
    """``|<S>|`` with ``<S_x> = <K_x>_R - N_FM``."""
    mom = rotor_moments(rotor_state)
    sx = mom.mean[0] - _n_fm(spinwave_state)
    return float(np.sqrt(sx**2 + mom.mean[1] ** 2 + mom.mean[2] ** 2))


def coherent_amplitudes(n_spins: int, theta, phi) -> np.ndarray:
    """``<m|theta, phi>`` for every grid point; shape ``(len(theta), len(phi), N+1)``.

    ``|theta, phi> = [cos(theta/2)|up> + sin(theta/2) e^{i phi}|down>]^N``; the
    Dicke level ``m`` has ``N/2 + m`` spins up.
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    n = n_spins
    k = np.arange(n + 1)  # number of up spins, m = k - N/2
    logbin = 0.5 * (gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))
    c = np.cos(theta / 2)[:, None]
    s = np.sin(theta / 2)[:, None]
    # xlogy keeps 0 * log(0) = 0 at the poles
    logmag = logbin + xlogy(k, np.abs(c)) + xlogy(n - k, np.abs(s))
    mag = np.exp(logmag) * np.sign(c) ** k * np.sign(s) ** (n - k)
    phase = np.exp(1j * np.outer(phi, n - k))
    return mag[:, None, :] * phase[None, :, :]


def husimi_q(rotor_state: RotorState, theta_grid=None, phi_grid=None) -> np.ndarray:
    """``Q(theta, phi) = <theta, phi| rho |theta, phi>`` on a grid, values in ``[0, 1]``.

    Defaults to 181 x 361 samples of ``[0, pi] x [-pi, pi]``.
    """
    if theta_grid is None:
        theta_grid = np.linspace(0, np.pi, 181)
    if phi_grid is None:
        phi_grid = np.linspace(-np.pi, np.pi, 361)
    theta_grid = np.asarray(theta_grid, dtype=float)
    phi_grid = np.asarray(phi_grid, dtype=float)
    if theta_grid.size == 0 or phi_grid.size == 0:
        raise ValueError("empty Husimi grid")
    amps = coherent_amplitudes(rotor_state.n_spins, theta_grid, phi_grid)
    if rotor_state.kind is RotorKind.PURE:
        q = np.abs(amps.conj() @ rotor_state.data) ** 2
    else:
        q = np.einsum("tpi,ij,tpj->tp", amps.conj(), rotor_state.data, amps).real
    return np.clip(q, 0.0, 1.0)


__all__ = [
    "SqueezingResult", "Estimate", "LostMeanSpinError", "to_db", "squeezing_from_rsw",
    "rsw_squeezing_from_moments", "squeezing_exact", "total_spin_squared",
    "mean_spin_magnitude", "husimi_q", "coherent_amplitudes", "build_dicke_operators",
]
