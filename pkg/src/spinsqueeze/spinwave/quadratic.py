"""Quadratic Holstein-Primakoff Hamiltonian about the +x polarised state."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..lattice import CouplingMatrix

SPIN = 0.5


@dataclass(frozen=True)
class QuadraticHamiltonian:
    """``H_2 = sum a_i^+ A_ij a_j + (a_i^+ B_ij a_j^+ + h.c.)/2 + const``."""

    A: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)
    h: float = 0.0
    constant_offset: float = 0.0

    @property
    def n_modes(self) -> int:
        return self.A.shape[0]

    def bdg_matrix(self) -> np.ndarray:
        """``M = [[A, B], [B*, A*]]`` acting on the Nambu spinor ``(a, a^+)``."""
        return np.block([[self.A, self.B], [self.B.conj(), self.A.conj()]])


def build_quadratic(couplings: CouplingMatrix, h: float = 0.0, spin: float = SPIN) -> QuadraticHamiltonian:
    """``A_ij = d_ij (S sum_k J_ik + h) - S J_ij / 2`` and ``B_ij = -S J_ij / 2``."""
    J = couplings.values
    n = couplings.n_sites
    A = np.diag(spin * J.sum(axis=1) + h) - 0.5 * spin * J
    B = -0.5 * spin * J
    return QuadraticHamiltonian(A, B, float(h), -float(h) * n * spin)


def nambu_metric(n: int) -> np.ndarray:
    """``eta = diag(I_n, -I_n)``."""
    return np.diag(np.r_[np.ones(n), -np.ones(n)])


def nambu_swap(n: int) -> np.ndarray:
    """``gamma = [[0, I], [I, 0]]``."""
    z = np.zeros((n, n))
    e = np.eye(n)
    return np.block([[z, e], [e, z]])
