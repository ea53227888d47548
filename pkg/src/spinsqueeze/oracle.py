"""Exact small-system references: full Hilbert-space dynamics of the XX model.

Basis convention: site ``i`` is bit ``i`` of the basis index and a 0 bit is
spin up (``S^z = +1/2``).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal
from scipy.special import comb

from .fields import ControlField
from .integrate import StepStats, dopri5
from .lattice import CouplingMatrix
from .moments import LostMeanSpinError, Moments, wineland
from .rotor import RotorKind, RotorState, build_dicke_operators

MAX_PURE_SPINS = 16
MAX_DENSITY_SPINS = 10
DENSE_DIM = 256


class OracleSizeError(ValueError):
    pass


class KrylovError(RuntimeError):
    pass


def _check_size(n: int, cap: int, what: str) -> None:
    if n > cap:
        raise OracleSizeError(f"{what} limited to N <= {cap} spins, got {n}")


@dataclass(frozen=True)
class ManyBodyState:
    """Pure state (length ``2^N``) or density matrix (``2^N x 2^N``)."""

    n_spins: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        d = np.asarray(self.data, dtype=complex)
        dim = 2**self.n_spins
        if d.ndim == 1:
            _check_size(self.n_spins, MAX_PURE_SPINS, "pure states")
            if d.shape != (dim,) or abs(np.linalg.norm(d) - 1) > 1e-10:
                raise ValueError("pure state must be a unit vector of length 2^N")
        elif d.ndim == 2:
            _check_size(self.n_spins, MAX_DENSITY_SPINS, "density matrices")
            if d.shape != (dim, dim) or abs(np.trace(d) - 1) > 1e-10:
                raise ValueError("density matrix must be 2^N x 2^N with unit trace")
        else:
            raise ValueError("state must be a vector or a matrix")
        object.__setattr__(self, "data", d)

    @property
    def is_pure(self) -> bool:
        return self.data.ndim == 1

    def moments(self) -> Moments:
        ops = spin_operators(self.n_spins)
        if self.is_pure:
            return _pure_moments(ops, self.data)
        return _density_moments(ops, self.data)


class SpinOperators:
    """Sparse collective operators and per-site ``S^z`` eigenvalues for ``N`` spins."""

    def __init__(self, n: int):
        _check_size(n, MAX_PURE_SPINS, "exact operators")
        self.n = n
        self.dim = 2**n
        idx = np.arange(self.dim)
        bits = (idx[:, None] >> np.arange(n)) & 1
        self.site_sz = 0.5 - bits  # (dim, N)
        self.sz = self.site_sz.sum(axis=1)
        rows, cols, vy = [], [], []
        for i in range(n):
            flipped = idx ^ (1 << i)
            rows.append(flipped)
            cols.append(idx)
            vy.append(np.where(bits[:, i] == 0, 0.5j, -0.5j))
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        self.Sx = sp.csr_matrix((np.full(rows.size, 0.5), (rows, cols)), shape=(self.dim, self.dim))
        self.Sy = sp.csr_matrix((np.concatenate(vy), (rows, cols)), shape=(self.dim, self.dim))
        self.Sz = sp.diags(self.sz).tocsr()

    def interaction(self, couplings: CouplingMatrix) -> sp.csr_matrix:
        """``-sum_{i<j} J_ij (S^x_i S^x_j + S^y_i S^y_j)``."""
        n = self.n
        if couplings.n_sites != n:
            raise ValueError("couplings do not match the number of spins")
        idx = np.arange(self.dim)
        bits = self.site_sz < 0
        rows, cols, vals = [np.empty(0, int)], [np.empty(0, int)], [np.empty(0)]
        J = couplings.values
        for i in range(n):
            for j in range(i + 1, n):
                if J[i, j] == 0:
                    continue
                anti = np.nonzero(bits[:, i] != bits[:, j])[0]
                rows.append(idx[anti] ^ ((1 << i) | (1 << j)))
                cols.append(anti)
                vals.append(np.full(anti.size, -0.5 * J[i, j]))
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.dim, self.dim))


@lru_cache(maxsize=8)
def spin_operators(n: int) -> SpinOperators:
    return SpinOperators(n)


def _pure_moments(ops: SpinOperators, psi: np.ndarray) -> Moments:
    v = [ops.Sx @ psi, ops.Sy @ psi, ops.sz * psi]
    mean = np.array([np.vdot(psi, x).real for x in v])
    second = np.array([[np.vdot(a, b).real for b in v] for a in v])
    return Moments(mean, second)


def _density_moments(ops: SpinOperators, rho: np.ndarray) -> Moments:
    S = [ops.Sx, ops.Sy, ops.Sz]
    X = [s @ rho for s in S]
    mean = np.array([np.trace(x).real for x in X])
    second = np.empty((3, 3))
    for a in range(3):
        for b in range(a, 3):
            second[a, b] = second[b, a] = (S[a].T.multiply(X[b])).sum().real
    return Moments(mean, second)


def initial_css_x_full(n_spins: int) -> ManyBodyState:
    """Product state ``(|up> + |down>)^N / 2^(N/2)``."""
    dim = 2**n_spins
    return ManyBodyState(n_spins, np.full(dim, dim**-0.5, dtype=complex))


def build_hamiltonian(couplings: CouplingMatrix, h: float = 0.0) -> sp.csr_matrix:
    """Sparse ``H = -sum_{i<j} J_ij (S^x S^x + S^y S^y) - h sum_i S^x_i``."""
    n = couplings.n_sites
    _check_size(n, MAX_PURE_SPINS, "build_hamiltonian")
    ops = spin_operators(n)
    return (ops.interaction(couplings) - h * ops.Sx).tocsr()


def expm_krylov(matvec, v: np.ndarray, dt: float, tol: float = 1e-10, m_max: int = 40,
                min_step: float = 1e-12) -> np.ndarray:
    """``exp(-i H dt) v`` for Hermitian ``H`` by Lanczos with adaptive subspace size.

    Sub-steps are halved when ``m_max`` Lanczos vectors do not reach ``tol``.
    """
    w = np.array(v, dtype=complex)
    done, tau = 0.0, dt
    while done < dt * (1 - 1e-14):
        tau = min(tau, dt - done)
        beta0 = np.linalg.norm(w)
        if beta0 == 0:
            return w
        V = [w / beta0]
        alphas, betas = [], []
        result = None
        for j in range(m_max):
            u = matvec(V[j])
            a = np.vdot(V[j], u).real
            u = u - a * V[j] - (betas[-1] * V[j - 1] if j else 0)
            for q in V:  # full re-orthogonalisation
                u -= np.vdot(q, u) * q
            b = np.linalg.norm(u)
            alphas.append(a)
            ev, evec = eigh_tridiagonal(np.array(alphas), np.array(betas)) if j else (np.array(alphas), np.ones((1, 1)))
            coef = evec @ (np.exp(-1j * ev * tau) * evec[0].conj())
            err = b * abs(coef[-1]) * beta0
            if b < 1e-13 * max(1.0, abs(a)) or err <= tol * tau / dt:
                result = beta0 * (np.array(V).T @ coef)
                break
            betas.append(b)
            V.append(u / b)
        if result is None:
            tau /= 2
            if tau < min_step * dt:
                raise KrylovError("Krylov step size underflow")
            continue
        w = result
        done += tau
        tau *= 2
    return w


class _Propagator:
    """``exp(-i H(h) t) psi``: dense eigendecomposition for small spaces, Lanczos otherwise."""

    def __init__(self, couplings: CouplingMatrix, tol: float = 1e-10):
        n = couplings.n_sites
        self.ops = spin_operators(n)
        self.H0 = self.ops.interaction(couplings)
        self.tol = tol
        self.dense = self.ops.dim <= DENSE_DIM
        self._eig: dict[float, tuple] = {}
        self._lock = threading.Lock()

    def hamiltonian(self, h: float):
        return (self.H0 - h * self.ops.Sx).tocsr()

    def apply(self, h: float, psi: np.ndarray, t: float) -> np.ndarray:
        if t == 0:
            return psi
        if self.dense:
            e = self._eig.get(h)
            if e is None:
                e = np.linalg.eigh(self.hamiltonian(h).toarray().real)
                with self._lock:
                    self._eig.setdefault(h, e)
            w, v = e
            return v @ (np.exp(-1j * w * t) * (v.T @ psi))
        H = self.hamiltonian(h)
        return expm_krylov(H.dot, psi, t, tol=self.tol)


@dataclass(frozen=True)
class ExactTrajectory:
    times: np.ndarray
    moments: list = field(repr=False)
    n_spins: int = 0
    states: list | None = field(default=None, repr=False)

    def xi_squared(self) -> np.ndarray:
        out = []
        for m in self.moments:
            try:
                out.append(wineland(m, self.n_spins)[0])
            except LostMeanSpinError:
                out.append(np.nan)
        return np.array(out)

    def mean_spin(self) -> np.ndarray:
        return np.array([np.linalg.norm(m.mean) for m in self.moments])

    def total_spin_squared(self) -> np.ndarray:
        return np.array([m.total_spin_squared for m in self.moments])


def evolve_krylov(state: ManyBodyState, couplings: CouplingMatrix, field: ControlField,
                  substeps: int = 1, keep_states: bool = False, tol: float = 1e-10) -> ExactTrajectory:
    """Pure-state evolution under the piecewise-constant field."""
    if not state.is_pure:
        raise ValueError("evolve_krylov needs a pure state")
    n = state.n_spins
    _check_size(n, MAX_PURE_SPINS, "evolve_krylov")
    prop = _Propagator(couplings, tol)
    dt = field.dt / substeps
    psi = state.data
    moms = [_pure_moments(prop.ops, psi)]
    states = [psi] if keep_states else None
    for h in field.segments:
        for _ in range(substeps):
            psi = prop.apply(float(h), psi, dt)
            psi = psi / np.linalg.norm(psi)
            moms.append(_pure_moments(prop.ops, psi))
            if keep_states:
                states.append(psi)
    return ExactTrajectory(field.sample_times(substeps), moms, n, states)


def evolve_lindblad_full(state: ManyBodyState, couplings: CouplingMatrix, field: ControlField,
                         gamma_c: float = 0.0, gamma_phi: float = 0.0, substeps: int = 1,
                         keep_states: bool = False, rtol: float = 1e-8, atol: float = 1e-10) -> ExactTrajectory:
    """Master equation with collective (``S_z``) and/or per-site (``S^z_i``) dephasing."""
    if gamma_c < 0 or gamma_phi < 0:
        raise ValueError("dephasing rates must be >= 0")
    n = state.n_spins
    _check_size(n, MAX_DENSITY_SPINS, "evolve_lindblad_full")
    ops = spin_operators(n)
    rho = state.data if not state.is_pure else np.outer(state.data, state.data.conj())
    damp = 0.5 * gamma_c * (ops.sz[:, None] - ops.sz[None, :]) ** 2
    if gamma_phi:
        damp = damp - gamma_phi * (ops.site_sz @ ops.site_sz.T - n / 4)
    H0 = ops.interaction(couplings)
    dt = field.dt / substeps
    moms = [_density_moments(ops, rho)]
    states = [rho] if keep_states else None
    stats = StepStats()
    for h in field.segments:
        H = (H0 - h * ops.Sx).tocsr()

        def f(r, H=H):
            hr = H @ r
            return -1j * (hr - hr.conj().T) - damp * r

        for _ in range(substeps):
            rho = dopri5(f, rho, dt, rtol=rtol, atol=atol, stats=stats,
                         post_step=lambda r: 0.5 * (r + r.conj().T))
            moms.append(_density_moments(ops, rho))
            if keep_states:
                states.append(rho)
    return ExactTrajectory(field.sample_times(substeps), moms, n, states)


@dataclass(frozen=True)
class McwfResult:
    times: np.ndarray
    n_trajectories: int
    moments_mean: Moments = field(repr=False)
    xi_squared: np.ndarray = field(repr=False)
    xi_squared_se: np.ndarray = field(repr=False)
    mean_spin: np.ndarray = field(repr=False)
    mean_spin_se: np.ndarray = field(repr=False)
    s_squared: np.ndarray = field(repr=False)
    s_squared_se: np.ndarray = field(repr=False)
    mean_vector_se: np.ndarray = field(repr=False)
    n_jumps: int = 0


def _jackknife(fn, samples: np.ndarray, n_blocks: int = 100):
    """Block jackknife estimate and standard error of ``fn(mean of samples)``."""
    n = samples.shape[0]
    nb = min(n_blocks, n)
    blocks = np.array_split(np.arange(n), nb)
    total = samples.sum(axis=0)
    full = fn(total / n)
    reps = np.array([fn((total - samples[b].sum(axis=0)) / (n - b.size)) for b in blocks])
    se = np.sqrt((nb - 1) / nb * np.sum((reps - reps.mean(axis=0)) ** 2, axis=0))
    return full, se


def evolve_mcwf_individual(state: ManyBodyState, couplings: CouplingMatrix, field: ControlField,
                           gamma_phi: float, n_trajectories: int, seed: int, substeps: int = 1) -> McwfResult:
    """Quantum-trajectory unravelling with jump operators ``sqrt(gamma_phi) S^z_i``.

    ``sum_i L_i^+ L_i = gamma_phi N / 4`` is proportional to the identity, so the
    no-jump norm decays as ``exp(-gamma_phi N t / 4)`` for every state and the
    waiting times follow from it exactly. Trajectory ``k`` draws from
    ``numpy.random.default_rng([seed, k])``.
    """
    if n_trajectories < 1:
        raise ValueError("need at least one trajectory")
    if seed is None:
        raise ValueError("a seed is required")
    if gamma_phi < 0:
        raise ValueError("gamma_phi must be >= 0")
    if not state.is_pure:
        raise ValueError("MCWF needs a pure initial state")
    n = state.n_spins
    prop = _Propagator(couplings)
    ops = prop.ops
    rate = gamma_phi * n / 4
    dt = field.dt / substeps
    times = field.sample_times(substeps)
    nt = times.size
    means = np.empty((n_trajectories, nt, 3))
    seconds = np.empty((n_trajectories, nt, 3, 3))
    total_jumps = 0
    for k in range(n_trajectories):
        rng = np.random.default_rng([seed, k])
        psi = state.data.copy()
        clock = -np.log(rng.random()) / rate if rate > 0 else np.inf
        m0 = _pure_moments(ops, psi)
        means[k, 0], seconds[k, 0] = m0.mean, m0.second
        i = 1
        for h in field.segments:
            h = float(h)
            for _ in range(substeps):
                left = dt
                while clock < left:
                    psi = prop.apply(h, psi, clock)
                    left -= clock
                    w = np.einsum("ai,a->i", ops.site_sz**2, np.abs(psi) ** 2)
                    site = rng.choice(n, p=w / w.sum())
                    psi = ops.site_sz[:, site] * psi
                    psi /= np.linalg.norm(psi)
                    total_jumps += 1
                    clock = -np.log(rng.random()) / rate
                psi = prop.apply(h, psi, left)
                psi /= np.linalg.norm(psi)
                clock -= left
                m = _pure_moments(ops, psi)
                means[k, i], seconds[k, i] = m.mean, m.second
                i += 1

    flat = np.concatenate([means, seconds.reshape(n_trajectories, nt, 9)], axis=2)

    def xi_of(avg):
        out = np.empty(nt)
        for t in range(nt):
            mom = Moments(avg[t, :3], avg[t, 3:].reshape(3, 3))
            try:
                out[t] = wineland(mom, n)[0]
            except LostMeanSpinError:
                out[t] = np.nan
        return out

    xi, xi_se = _jackknife(xi_of, flat)
    mag, mag_se = _jackknife(lambda avg: np.linalg.norm(avg[:, :3], axis=1), flat)
    s2 = np.trace(seconds, axis1=2, axis2=3)
    avg = flat.mean(axis=0)
    sem = flat.std(axis=0, ddof=1) / np.sqrt(n_trajectories) if n_trajectories > 1 else np.zeros_like(avg)
    return McwfResult(
        times=times, n_trajectories=n_trajectories,
        moments_mean=Moments(avg[:, :3], avg[:, 3:].reshape(nt, 3, 3)),
        xi_squared=xi, xi_squared_se=xi_se, mean_spin=mag, mean_spin_se=mag_se,
        s_squared=s2.mean(axis=0),
        s_squared_se=s2.std(axis=0, ddof=1) / np.sqrt(n_trajectories) if n_trajectories > 1 else np.zeros(nt),
        mean_vector_se=sem[:, :3], n_jumps=total_jumps,
    )


@lru_cache(maxsize=8)
def dicke_isometry(n_spins: int) -> sp.csr_matrix:
    """Columns ``|J=N/2, m>`` (ascending ``m``) written in the computational basis."""
    _check_size(n_spins, MAX_PURE_SPINS, "dicke_isometry")
    ops = spin_operators(n_spins)
    n_up = np.rint(ops.sz + n_spins / 2).astype(int)  # = N/2 + m
    vals = 1.0 / np.sqrt(comb(n_spins, n_up))
    return sp.csr_matrix((vals, (np.arange(ops.dim), n_up)), shape=(ops.dim, n_spins + 1))


def embed_dicke(rotor_state: RotorState, n_spins: int | None = None) -> ManyBodyState:
    """Map a rotor state into the full ``2^N`` space."""
    n = rotor_state.n_spins if n_spins is None else n_spins
    if n != rotor_state.n_spins:
        raise ValueError("rotor state does not match n_spins")
    E = dicke_isometry(n)
    if rotor_state.kind is RotorKind.PURE:
        return ManyBodyState(n, E @ rotor_state.data)
    _check_size(n, MAX_DENSITY_SPINS, "embedding density matrices")
    return ManyBodyState(n, (E @ (E @ rotor_state.data).conj().T).conj().T)


def comparison_report(times, rsw_values, oracle_values, label: str = "xi_db") -> dict:
    """Per-time deviations between an RSW series and its exact reference."""
    rsw = np.asarray(rsw_values, dtype=float)
    ref = np.asarray(oracle_values, dtype=float)
    absdev = np.abs(rsw - ref)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = absdev / np.abs(ref)
    points = [
        {"t": float(t), "rsw": float(a), "oracle": float(b), "abs_dev": float(d),
         "rel_dev": None if not np.isfinite(r) else float(r)}
        for t, a, b, d, r in zip(times, rsw, ref, absdev, rel)
    ]
    return {"observable": label, "max_abs_dev": float(np.nanmax(absdev)), "points": points}


__all__ = [
    "MAX_PURE_SPINS", "MAX_DENSITY_SPINS", "OracleSizeError", "KrylovError", "ManyBodyState",
    "SpinOperators", "spin_operators", "initial_css_x_full", "build_hamiltonian", "expm_krylov",
    "ExactTrajectory", "evolve_krylov", "evolve_lindblad_full", "McwfResult",
    "evolve_mcwf_individual", "dicke_isometry", "embed_dicke", "comparison_report",
    "build_dicke_operators",
]
