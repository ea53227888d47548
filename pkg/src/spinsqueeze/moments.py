"""First and second moments of a collective spin and the Wineland ratio."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LostMeanSpinError(ValueError):
    """The mean spin vanished; the squeezing parameter is undefined."""


@dataclass(frozen=True)
class Moments:
    """``mean[a] = <S_a>`` and ``second[a, b] = <{S_a, S_b}>/2`` for a in (x, y, z)."""

    mean: np.ndarray
    second: np.ndarray

    @property
    def covariance(self) -> np.ndarray:
        return self.second - np.outer(self.mean, self.mean)

    @property
    def total_spin_squared(self) -> float:
        return float(np.trace(self.second))


def min_quadrature_variance(vy: float, vz: float, c: float) -> tuple[float, float]:
    """Minimum over theta of ``Var(cos(t) K_y + sin(t) K_z)`` and its angle.

    Closed form ``(vy + vz - sqrt((vy - vz)^2 + 4 c^2)) / 2``. The angle lies
    in ``[0, pi)``; an isotropic covariance reports 0.
    """
    disc = np.hypot(vy - vz, 2.0 * c)
    vmin = 0.5 * (vy + vz - disc)
    scale = max(abs(vy), abs(vz), 1e-300)
    if disc <= 1e-12 * scale:
        return float(vmin), 0.0
    # eigenvector of [[vy, c], [c, vz]] for the smaller eigenvalue
    theta = 0.5 * np.arctan2(2.0 * c, vy - vz) + np.pi / 2
    theta = float(np.mod(theta, np.pi))
    if np.isclose(theta, np.pi, atol=1e-15, rtol=0.0):
        theta = 0.0
    return float(vmin), theta


def perpendicular_frame(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal ``(e1, e2)`` spanning the plane normal to unit vector ``n``.

    For ``n = x`` this gives ``(y, z)``, so quadrature angles agree with the
    rotor convention ``K_theta = cos(theta) K_y + sin(theta) K_z``.
    """
    ref = np.array([0.0, 1.0, 0.0])
    if abs(n @ ref) > 0.9:
        ref = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = ref - (ref @ n) * n
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return e1, e2


def wineland(mom: Moments, n_spins: int, threshold: float = 1e-9):
    """Full Wineland ratio ``N min Var_perp / |<S>|^2``.

    Returns ``(xi2, theta_min, |<S>|)``.
    """
    mag = float(np.linalg.norm(mom.mean))
    if mag < threshold * n_spins:
        raise LostMeanSpinError(f"|<S>| = {mag:.3e} is below {threshold} N")
    n = mom.mean / mag
    e1, e2 = perpendicular_frame(n)
    cov = mom.covariance
    vy = e1 @ cov @ e1
    vz = e2 @ cov @ e2
    c = e1 @ cov @ e2
    vmin, theta = min_quadrature_variance(vy, vz, c)
    return n_spins * vmin / mag**2, theta, mag
