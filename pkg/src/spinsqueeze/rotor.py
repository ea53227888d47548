"""Collective (zero-momentum) rotor in the ``J = N/2`` Dicke subspace.

The basis is the ``K_z`` eigenbasis ordered ``m = -N/2, ..., N/2``.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .fields import ControlField
from .integrate import StepStats, dopri5
from .lattice import CouplingMatrix
from .moments import Moments


@dataclass(frozen=True)
class DickeOperators:
    n_spins: int
    m: np.ndarray = field(repr=False)
    Kx: np.ndarray = field(repr=False)
    Ky: np.ndarray = field(repr=False)
    Kz: np.ndarray = field(repr=False)

    @property
    def j(self) -> float:
        return self.n_spins / 2

    @property
    def dim(self) -> int:
        return self.n_spins + 1

    @property
    def Ky2(self) -> np.ndarray:
        """``K_y^2`` as a real matrix."""
        return (self.Ky @ self.Ky).real

    @property
    def Kz2(self) -> np.ndarray:
        return np.diag(self.m**2)


@lru_cache(maxsize=32)
def build_dicke_operators(n_spins: int) -> DickeOperators:
    """Spin-``N/2`` matrices; ``K_+ |m> = sqrt(j(j+1) - m(m+1)) |m+1>``."""
    if n_spins < 1:
        raise ValueError("n_spins must be >= 1")
    j = n_spins / 2
    m = np.arange(n_spins + 1) - j
    up = np.sqrt(j * (j + 1) - m[:-1] * (m[:-1] + 1))
    kp = np.diag(up, -1)  # <m+1|K+|m> sits below the diagonal
    kx = 0.5 * (kp + kp.T)
    ky = (kp - kp.T) / 2j
    kz = np.diag(m)
    for a in (m, kx, ky, kz):
        a.setflags(write=False)
    return DickeOperators(n_spins, m, kx, ky, kz)


class RotorKind(str, enum.Enum):
    PURE = "pure"
    DENSITY = "density"


@dataclass(frozen=True)
class RotorState:
    kind: RotorKind
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", RotorKind(self.kind))
        d = np.asarray(self.data, dtype=complex)
        if self.kind is RotorKind.PURE:
            if d.ndim != 1:
                raise ValueError("pure rotor state must be a vector")
            if abs(np.linalg.norm(d) - 1) > 1e-10:
                raise ValueError("pure rotor state must have unit norm")
        else:
            if d.ndim != 2 or d.shape[0] != d.shape[1]:
                raise ValueError("density matrix must be square")
            if abs(np.trace(d) - 1) > 1e-10:
                raise ValueError("density matrix must have unit trace")
            if np.max(np.abs(d - d.conj().T)) > 1e-10:
                raise ValueError("density matrix must be Hermitian")
        object.__setattr__(self, "data", d)

    @property
    def n_spins(self) -> int:
        return self.data.shape[0] - 1

    def density(self) -> np.ndarray:
        if self.kind is RotorKind.DENSITY:
            return self.data
        return np.outer(self.data, self.data.conj())

    def as_density(self) -> "RotorState":
        return self if self.kind is RotorKind.DENSITY else RotorState(RotorKind.DENSITY, self.density())

    def expect(self, op: np.ndarray) -> complex:
        if self.kind is RotorKind.PURE:
            return complex(self.data.conj() @ op @ self.data)
        return complex(np.trace(op @ self.data))


def initial_css_x(n_spins: int) -> RotorState:
    """Coherent state along +x, ``c_m = 2^-j sqrt(C(2j, j+m))``."""
    if n_spins < 1:
        raise ValueError("n_spins must be >= 1")
    k = np.arange(n_spins + 1)
    logc = 0.5 * (gammaln(n_spins + 1) - gammaln(k + 1) - gammaln(n_spins - k + 1)) - 0.5 * n_spins * np.log(2)
    c = np.exp(logc)
    return RotorState(RotorKind.PURE, c / np.linalg.norm(c))


def rotor_moments(state: RotorState, ops: DickeOperators | None = None) -> Moments:
    """Collective first and symmetrised second moments of a rotor state."""
    ops = ops or build_dicke_operators(state.n_spins)
    K = (ops.Kx, ops.Ky, ops.Kz)
    if state.kind is RotorKind.PURE:
        v = [k @ state.data for k in K]
        mean = np.array([np.vdot(state.data, vi).real for vi in v])
        second = np.array([[np.vdot(va, vb).real for vb in v] for va in v])
    else:
        rho = state.data
        mean = np.array([np.trace(k @ rho).real for k in K])
        second = np.empty((3, 3))
        for a in range(3):
            for b in range(a, 3):
                second[a, b] = second[b, a] = 0.5 * np.trace((K[a] @ K[b] + K[b] @ K[a]) @ rho).real
    return Moments(mean, second)


class HamiltonianKind(str, enum.Enum):
    OAT = "oat"
    TAT = "tat"


@dataclass(frozen=True)
class RotorHamiltonian:
    """``chi K_z^2 - h K_x`` (OAT) or ``chi (K_z^2 - K_y^2) - h K_x`` (TAT)."""

    chi: float
    kind: HamiltonianKind = HamiltonianKind.OAT

    def __post_init__(self):
        if not np.isfinite(self.chi):
            raise ValueError("chi must be finite")
        object.__setattr__(self, "kind", HamiltonianKind(self.kind))

    @classmethod
    def from_couplings(cls, couplings: CouplingMatrix) -> "RotorHamiltonian":
        """Projection of the XX model onto the maximal-spin sector."""
        return cls(inverse_inertia(couplings), HamiltonianKind.OAT)

    def static_part(self, ops: DickeOperators) -> np.ndarray:
        if self.kind is HamiltonianKind.OAT:
            return self.chi * ops.Kz2
        return self.chi * (ops.Kz2 - ops.Ky2)

    def matrix(self, ops: DickeOperators, h: float = 0.0) -> np.ndarray:
        return self.static_part(ops) - h * ops.Kx


def inverse_inertia(couplings: CouplingMatrix, spin: float = 0.5) -> float:
    """Rotor coefficient ``1/(2I)`` from projecting onto ``J = N S``.

    For spin 1/2 the projected XX interaction is
    ``sum_{i<j} J_ij / (N (N-1)) K_z^2 + const``, i.e. half of
    :func:`~spinsqueeze.lattice.collective_chi`; with translational invariance
    this equals ``J_0 / (2 (N-1))``.
    """
    if spin != 0.5:
        raise NotImplementedError("the rotor is implemented for spin 1/2 only")
    n = couplings.n_sites
    return couplings.pair_sum() / (n * (n - 1))


class RotorPropagator:
    """Exact segment propagators ``exp(-i H(h) dt)`` via cached eigendecompositions.

    Safe for concurrent use: reads are lock-free, inserts take a lock.
    """

    def __init__(self, ham: RotorHamiltonian, ops: DickeOperators):
        self.ham = ham
        self.ops = ops
        self._static = ham.static_part(ops)
        self._cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}
        self._lock = threading.Lock()

    def eig(self, h: float):
        h = float(h)
        hit = self._cache.get(h)
        if hit is None:
            hit = np.linalg.eigh(self._static - h * self.ops.Kx)
            with self._lock:
                self._cache.setdefault(h, hit)
        return hit

    def eig_batch(self, hs: np.ndarray):
        """Uncached batched eigendecomposition for an array of fields."""
        H = self._static[None] - np.asarray(hs, dtype=float)[:, None, None] * self.ops.Kx[None]
        return np.linalg.eigh(H)

    def unitary(self, h: float, dt: float) -> np.ndarray:
        w, v = self.eig(h)
        return (v * np.exp(-1j * w * dt)) @ v.T

    def unitary_batch(self, hs: np.ndarray, dt: float) -> np.ndarray:
        w, v = self.eig_batch(hs)
        return (v * np.exp(-1j * w * dt)[:, None, :]) @ np.swapaxes(v, -1, -2)


@dataclass(frozen=True)
class RotorTrajectory:
    times: np.ndarray
    kind: RotorKind
    states: np.ndarray = field(repr=False)

    def __len__(self):
        return self.times.size

    def __getitem__(self, k) -> RotorState:
        return RotorState(self.kind, self.states[k])

    @property
    def final(self) -> RotorState:
        return self[-1]


def _check_dims(state: RotorState, ops: DickeOperators):
    if state.data.shape[0] != ops.dim:
        raise ValueError("state dimension does not match n_spins")


def evolve_unitary(state: RotorState, ham: RotorHamiltonian, field: ControlField,
                   substeps: int = 1, propagator: RotorPropagator | None = None) -> RotorTrajectory:
    """Exact piecewise evolution sampled at ``field.sample_times(substeps)``."""
    ops = build_dicke_operators(state.n_spins)
    _check_dims(state, ops)
    prop = propagator or RotorPropagator(ham, ops)
    dt = field.dt / substeps
    times = field.sample_times(substeps)
    if state.kind is RotorKind.PURE:
        out = np.empty((times.size, ops.dim), dtype=complex)
        psi = state.data
        out[0] = psi
        i = 1
        for h in field.segments:
            U = prop.unitary(h, dt)
            for _ in range(substeps):
                psi = U @ psi
                out[i] = psi
                i += 1
    else:
        out = np.empty((times.size, ops.dim, ops.dim), dtype=complex)
        rho = state.data
        out[0] = rho
        i = 1
        for h in field.segments:
            U = prop.unitary(h, dt)
            for _ in range(substeps):
                rho = U @ rho @ U.conj().T
                out[i] = rho
                i += 1
    return RotorTrajectory(times, state.kind, out)


def dephasing_profile(ops: DickeOperators) -> np.ndarray:
    """``(m - m')^2`` so that the collective dephasing dissipator is ``-gamma/2 * profile * rho``."""
    return (ops.m[:, None] - ops.m[None, :]) ** 2


def lindblad_rhs(H: np.ndarray, gamma_c: float, profile: np.ndarray):
    """``rho -> -i[H, rho] + gamma_c (K_z rho K_z - {K_z^2, rho}/2)`` (batched over H)."""
    damp = 0.5 * gamma_c * profile

    def f(rho):
        return -1j * (H @ rho - rho @ H) - damp * rho

    return f


def lindblad_adjoint_rhs(H: np.ndarray, gamma_c: float, profile: np.ndarray):
    """Heisenberg-picture generator of :func:`lindblad_rhs`."""
    damp = 0.5 * gamma_c * profile

    def f(op):
        return 1j * (H @ op - op @ H) - damp * op

    return f


def hermitize(rho):
    return 0.5 * (rho + np.swapaxes(rho, -1, -2).conj())


def evolve_lindblad_collective(state: RotorState, ham: RotorHamiltonian, field: ControlField,
                               gamma_c: float, substeps: int = 1, rtol: float = 1e-8,
                               atol: float = 1e-10) -> RotorTrajectory:
    """Collective-dephasing master equation for the rotor.

    Integrated with adaptive Dormand-Prince 5(4); the density matrix is
    re-symmetrised after every accepted step.
    """
    if not gamma_c >= 0:
        raise ValueError(f"gamma_c must be >= 0, got {gamma_c}")
    ops = build_dicke_operators(state.n_spins)
    _check_dims(state, ops)
    rho = state.density().copy()
    profile = dephasing_profile(ops)
    dt = field.dt / substeps
    times = field.sample_times(substeps)
    out = np.empty((times.size, ops.dim, ops.dim), dtype=complex)
    out[0] = rho
    stats = StepStats()
    i = 1
    for h in field.segments:
        f = lindblad_rhs(ham.matrix(ops, h), gamma_c, profile)
        for _ in range(substeps):
            rho = dopri5(f, rho, dt, rtol=rtol, atol=atol, post_step=hermitize, stats=stats)
            out[i] = rho
            i += 1
    return RotorTrajectory(times, RotorKind.DENSITY, out)


def _tat_evolver(n_spins: int, chi: float):
    from .moments import LostMeanSpinError, wineland

    if not chi > 0:
        raise ValueError("chi must be > 0")
    ops = build_dicke_operators(n_spins)
    H = RotorHamiltonian(chi, HamiltonianKind.TAT).matrix(ops)
    w, v = np.linalg.eigh(H)
    c0 = v.T @ initial_css_x(n_spins).data

    def xi2(t: float) -> float:
        psi = v @ (np.exp(-1j * w * t) * c0)
        psi = psi / np.linalg.norm(psi)
        try:
            return wineland(rotor_moments(RotorState(RotorKind.PURE, psi), ops), n_spins)[0]
        except LostMeanSpinError:
            return np.inf

    return xi2


def tat_benchmark(n_spins: int, chi: float, t_grid) -> float:
    """Smallest Wineland ratio of two-axis twisting from the +x CSS over ``t_grid``.

    Grid points where the mean spin vanishes are skipped.
    """
    t = np.asarray(t_grid, dtype=float).reshape(-1)
    if t.size == 0:
        raise ValueError("empty time grid")
    xi2 = _tat_evolver(n_spins, chi)
    return float(min(xi2(tk) for tk in t))


def tat_optimum(n_spins: int, chi: float, n_grid: int = 2001) -> tuple[float, float]:
    """First minimum of the TAT squeezing curve, ``(xi2_min, t_min)``.

    A dense grid out to a few times the ``ln(N)/(N chi)`` optimum is refined
    with a bounded scalar search around the best grid point.
    """
    from scipy.optimize import minimize_scalar

    xi2 = _tat_evolver(n_spins, chi)
    t_max = 4.0 * np.log(4.0 * n_spins) / (n_spins * chi)
    t = np.linspace(0.0, t_max, n_grid)
    vals = np.array([xi2(tk) for tk in t])
    k = int(np.argmin(vals))
    lo, hi = t[max(k - 1, 0)], t[min(k + 1, n_grid - 1)]
    if hi <= lo:
        return float(vals[k]), float(t[k])
    res = minimize_scalar(xi2, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12 * t_max})
    if res.fun < vals[k]:
        return float(res.fun), float(res.x)
    return float(vals[k]), float(t[k])
