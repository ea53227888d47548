"""Rectangular lattices and power-law XX couplings.

Sites are indexed row-major, ``i = y * Lx + x``, with unit lattice spacing.
Periodic distances use the minimum-image convention component-wise.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class Boundary(str, enum.Enum):
    PERIODIC = "periodic"
    OPEN = "open"


@dataclass(frozen=True)
class LatticeSpec:
    """Geometry and interaction parameters of an ``Lx x Ly`` lattice.

    Parameters
    ----------
    Lx, Ly : int
        Number of sites along x and y.
    boundary : Boundary
        Periodic (torus, minimum image) or open.
    alpha : float
        Power-law exponent of the coupling decay.
    J : float
        Interaction scale; nearest neighbours couple with ``4 J``.
    """

    Lx: int
    Ly: int
    boundary: Boundary = Boundary.PERIODIC
    alpha: float = 3.0
    J: float = 1.0

    def __post_init__(self):
        for name in ("Lx", "Ly"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.Lx * self.Ly < 2:
            raise ValueError("lattice needs at least two sites")
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        if not np.isfinite(self.alpha) or self.alpha <= 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not np.isfinite(self.J) or self.J <= 0:
            raise ValueError(f"J must be > 0, got {self.J}")

    @property
    def n_sites(self) -> int:
        return self.Lx * self.Ly

    @property
    def periodic(self) -> bool:
        return self.boundary is Boundary.PERIODIC

    def positions(self) -> np.ndarray:
        """Integer site coordinates, shape ``(N, 2)``, row-major order."""
        y, x = np.divmod(np.arange(self.n_sites), self.Lx)
        return np.stack([x, y], axis=1)

    def displacements(self) -> np.ndarray:
        """Pairwise displacement components ``|r_i - r_j|`` after boundary folding.

        Shape ``(N, N, 2)``; for periodic lattices each component is
        ``min(|d|, L - |d|)``.
        """
        pos = self.positions()
        d = np.abs(pos[:, None, :] - pos[None, :, :])
        if self.periodic:
            L = np.array([self.Lx, self.Ly])
            d = np.minimum(d, L - d)
        return d

    def momenta(self) -> np.ndarray:
        """Brillouin-zone grid ``q = 2 pi (kx/Lx, ky/Ly)``, shape ``(N, 2)``.

        Ordered like the sites (row-major in ``(kx, ky)``); ``q = 0`` first.
        """
        k = self.positions()
        return 2 * np.pi * k / np.array([self.Lx, self.Ly], dtype=float)


@dataclass(frozen=True)
class CouplingMatrix:
    """Symmetric ``N x N`` coupling strengths ``J_ij`` with zero diagonal."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] < 2:
            raise ValueError("couplings must be a square matrix with N >= 2")
        if not np.array_equal(v, v.T):
            raise ValueError("couplings must be exactly symmetric")
        if np.any(np.diag(v) != 0):
            raise ValueError("couplings must have zero diagonal")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_sites(self) -> int:
        return self.values.shape[0]

    def row_sums(self) -> np.ndarray:
        return self.values.sum(axis=1)

    def pair_sum(self) -> float:
        """``sum_{i<j} J_ij``."""
        return float(np.triu(self.values, 1).sum())

    def scaled(self, c: float) -> "CouplingMatrix":
        return CouplingMatrix(c * self.values)


def build_couplings(spec: LatticeSpec) -> CouplingMatrix:
    """Power-law couplings ``J_ij = 4 J d_ij^(-alpha)``."""
    d = spec.displacements().astype(float)
    dist = np.hypot(d[..., 0], d[..., 1])
    with np.errstate(divide="ignore"):
        vals = 4.0 * spec.J * dist ** (-spec.alpha)
    np.fill_diagonal(vals, 0.0)
    # symmetric by construction, but make the two halves bitwise identical
    upper = np.triu(vals, 1)
    return CouplingMatrix(upper + upper.T)


def collective_chi(couplings: CouplingMatrix) -> float:
    """Mean pair coupling ``chi = 2 sum_{i<j} J_ij / (N (N-1))``."""
    n = couplings.n_sites
    return 2.0 * couplings.pair_sum() / ((n - 1) * n)


def _check_on_grid(spec: LatticeSpec, q: np.ndarray, atol: float = 1e-9) -> None:
    k = q * np.array([spec.Lx, spec.Ly]) / (2 * np.pi)
    if np.any(np.abs(k - np.round(k)) > atol):
        raise ValueError(f"momentum {tuple(q)} is not on the {spec.Lx}x{spec.Ly} grid")


def fourier_coupling(couplings: CouplingMatrix, spec: LatticeSpec, q) -> float:
    """``J_q = (1/N) sum_ij exp(i q.(r_i - r_j)) J_ij`` for a periodic lattice."""
    if not spec.periodic:
        raise ValueError("fourier_coupling requires a periodic lattice")
    if couplings.n_sites != spec.n_sites:
        raise ValueError("couplings do not match the lattice size")
    q = np.asarray(q, dtype=float)
    _check_on_grid(spec, q)
    pos = spec.positions()
    phase = np.exp(1j * (pos @ q))
    jq = phase @ couplings.values @ phase.conj() / spec.n_sites
    return float(jq.real)


def fourier_couplings_all(couplings: CouplingMatrix, spec: LatticeSpec) -> np.ndarray:
    """``J_q`` on the whole grid (ordering of :meth:`LatticeSpec.momenta`).

    Uses translational invariance, ``J_q = sum_j exp(i q.(r_0 - r_j)) J_0j``.
    """
    if not spec.periodic:
        raise ValueError("fourier_couplings_all requires a periodic lattice")
    q = spec.momenta()
    pos = spec.positions()
    phase = np.exp(-1j * (q @ pos.T))  # (Nq, N): e^{-i q.r_j}, r_0 = 0
    return (phase @ couplings.values[0]).real
