"""Momentum-space spin waves for periodic lattices.

Each nonzero momentum ``q`` carries the pair ``v = (a_q, a_{-q}^+)`` whose
covariance ``<v v^+> = [[1 + n_q, m_q], [m_q*, n_q]]`` evolves under the
single-mode generator ``G_q = [[A_q, B_q], [-B_q, -A_q]]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..fields import ControlField
from ..lattice import CouplingMatrix, LatticeSpec, fourier_couplings_all
from .quadratic import SPIN


class DynamicalInstabilityError(ValueError):
    """Some mode has ``A_q^2 < B_q^2``; ``margin`` is ``max(|B_q| - A_q)``."""

    def __init__(self, msg: str, margin: float):
        super().__init__(msg)
        self.margin = margin


@dataclass(frozen=True)
class PbcModeSet:
    q: np.ndarray = field(repr=False)
    A: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)
    eps: np.ndarray = field(repr=False)
    n: np.ndarray = field(repr=False)
    m: np.ndarray = field(repr=False)

    @property
    def n_fm(self) -> float:
        return float(self.n.sum())

    def covariance(self) -> np.ndarray:
        """Stack of 2x2 covariances, shape ``(n_modes, 2, 2)``."""
        c = np.empty((self.n.size, 2, 2), dtype=complex)
        c[:, 0, 0] = 1 + self.n
        c[:, 0, 1] = self.m
        c[:, 1, 0] = self.m.conj()
        c[:, 1, 1] = self.n
        return c

    def with_covariance(self, cov: np.ndarray, A=None) -> "PbcModeSet":
        A = self.A if A is None else A
        eps = np.sqrt(np.maximum(A**2 - self.B**2, 0.0))
        return PbcModeSet(self.q, A, self.B, eps, cov[:, 1, 1].real.copy(), cov[:, 0, 1].copy())


class PbcModel:
    """``A_q = S (J_0 - J_q/2) + h`` and ``B_q = -S J_q / 2`` for all ``q != 0``."""

    def __init__(self, couplings: CouplingMatrix, spec: LatticeSpec, spin: float = SPIN):
        if not spec.periodic:
            raise ValueError("momentum-space spin waves require a periodic lattice")
        if couplings.n_sites != spec.n_sites:
            raise ValueError("couplings do not match the lattice size")
        jq = fourier_couplings_all(couplings, spec)
        self.spin = spin
        self.q = spec.momenta()[1:]
        self.j0 = float(jq[0])
        self.jq = jq[1:]
        self.A0 = spin * (self.j0 - 0.5 * self.jq)
        self.B = -0.5 * spin * self.jq

    @property
    def n_modes(self) -> int:
        return self.jq.size

    def stability_margin(self, h) -> np.ndarray:
        """``max_q (|B_q| - A_q(h))`` per field value; positive means unstable."""
        h = np.asarray(h, dtype=float)
        return np.max(np.abs(self.B) - (self.A0 + h[..., None]), axis=-1)

    def check_stable(self, h) -> None:
        margin = float(np.max(self.stability_margin(np.atleast_1d(h))))
        if margin > 0:
            raise DynamicalInstabilityError(
                f"spin-wave mode unstable (A_q < |B_q| by {margin:.3g}); field too negative", margin)

    def vacuum(self, h: float = 0.0) -> PbcModeSet:
        z = np.zeros(self.n_modes)
        return PbcModeSet(self.q, self.A0 + h, self.B, np.sqrt(np.maximum((self.A0 + h) ** 2 - self.B**2, 0)),
                          z, z.astype(complex))

    def propagators(self, h, dt: float) -> np.ndarray:
        """``exp(-i G_q dt)`` for field(s) ``h``; shape ``(*h.shape, n_modes, 2, 2)``."""
        h = np.asarray(h, dtype=float)
        A = self.A0 + h[..., None]
        B = np.broadcast_to(self.B, A.shape)
        # complex eps keeps the (hyperbolic) propagator exact for unstable modes too
        eps = np.sqrt((A**2 - B**2).astype(complex))
        c = np.cos(eps * dt)
        # sin(eps dt)/eps with the eps -> 0 limit
        s = dt * np.sinc(eps * dt / np.pi)
        U = np.empty(A.shape + (2, 2), dtype=complex)
        U[..., 0, 0] = c - 1j * s * A
        U[..., 0, 1] = -1j * s * B
        U[..., 1, 0] = 1j * s * B
        U[..., 1, 1] = c + 1j * s * A
        return U


def pbc_mode_spectrum(couplings: CouplingMatrix, spec: LatticeSpec, h: float = 0.0) -> PbcModeSet:
    """Bogoliubov spectrum ``eps_q = sqrt(A_q^2 - B_q^2)`` over nonzero momenta (vacuum occupations)."""
    model = PbcModel(couplings, spec)
    model.check_stable(h)
    return model.vacuum(h)


@dataclass(frozen=True)
class PbcTrajectory:
    times: np.ndarray
    states: list = field(repr=False)

    @property
    def n_fm(self) -> np.ndarray:
        return np.array([s.n_fm for s in self.states])

    @property
    def final(self) -> PbcModeSet:
        return self.states[-1]


def evolve_pbc_modes(state: PbcModeSet | None, couplings: CouplingMatrix, spec: LatticeSpec,
                     field: ControlField, substeps: int = 1) -> PbcTrajectory:
    """Exact per-segment evolution of every ``(n_q, m_q)`` pair.

    ``state=None`` starts from the Holstein-Primakoff vacuum.
    """
    model = PbcModel(couplings, spec)
    model.check_stable(field.segments)
    if state is None:
        state = model.vacuum(field.segments[0])
    dt = field.dt / substeps
    cov = state.covariance()
    states = [state]
    for h in field.segments:
        U = model.propagators(h, dt)
        Ud = U.conj().swapaxes(-1, -2)
        A = model.A0 + h
        for _ in range(substeps):
            cov = U @ cov @ Ud
            states.append(state.with_covariance(cov, A))
    return PbcTrajectory(field.sample_times(substeps), states)
