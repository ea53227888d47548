"""Paraunitary diagonalisation of the BdG matrix with a Goldstone zero mode.

``eta M0`` has a single zero mode ``P`` and a Jordan partner ``Q``
(``eta M0 Q = -(i/mu) P``); the remaining spectrum pairs as ``+-omega_n``.
The transformation is stored in the ordering
``T = (V^0, W^0, V^1..V^{N-1}, W^1..W^{N-1})`` with metric
``eta_tilde = diag(1, -1) + diag(I, -I)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .quadratic import QuadraticHamiltonian, nambu_metric, nambu_swap

DEGENERACY_RTOL = 1e-8
GRAM_MIN_EIGENVALUE = 1e-12
ZERO_MODE_RTOL = 1e-9


class BdgError(ValueError):
    pass


@dataclass(frozen=True)
class BdgDecomposition:
    M0: np.ndarray = field(repr=False)
    T: np.ndarray = field(repr=False)
    frequencies: np.ndarray
    P: np.ndarray = field(repr=False)
    Q: np.ndarray = field(repr=False)
    mu: float
    T_S: np.ndarray = field(repr=False)
    T_S_inv: np.ndarray = field(repr=False)

    @property
    def n_sites(self) -> int:
        return self.M0.shape[0] // 2

    @property
    def eta(self) -> np.ndarray:
        return nambu_metric(self.n_sites)

    @property
    def gamma(self) -> np.ndarray:
        return nambu_swap(self.n_sites)

    @property
    def eta_tilde(self) -> np.ndarray:
        n = self.n_sites
        return np.diag(np.r_[1.0, -1.0, np.ones(n - 1), -np.ones(n - 1)])

    @property
    def gamma_tilde(self) -> np.ndarray:
        """Column permutation swapping each ``V^n`` with ``W^n`` in the stored ordering."""
        n = self.n_sites
        g = np.zeros((2 * n, 2 * n))
        g[0, 1] = g[1, 0] = 1
        g[2:, 2:] = nambu_swap(n - 1)
        return g

    @property
    def projector(self) -> np.ndarray:
        """``Pi = T_S T_S^{-1}``, projector onto the spin-wave subspace."""
        return self.T_S @ self.T_S_inv

    def T_inv(self) -> np.ndarray:
        return self.eta_tilde @ self.T.conj().T @ self.eta

    def bdg_matrix(self, h: float) -> np.ndarray:
        """``M(h) = M0 + h I``."""
        return self.M0 + h * np.eye(self.M0.shape[0])

    def generator(self, h: float) -> np.ndarray:
        """Projected generator ``K(h) = Pi eta M(h) Pi``."""
        Pi = self.projector
        return Pi @ (self.eta @ self.bdg_matrix(h)) @ Pi

    def omega(self, h: float) -> np.ndarray:
        """``T^{-1} eta M(h) T`` (zero-mode block first)."""
        return self.T_inv() @ self.eta @ self.bdg_matrix(h) @ self.T

    @property
    def inertia_coefficient(self) -> float:
        """``1/(N mu)``, the bare quadratic rotor coefficient."""
        return 1.0 / (self.n_sites * self.mu)

    def diagnostics(self) -> dict:
        eta, gamma = self.eta, self.gamma
        T = self.T
        etM = eta @ self.M0
        return {
            "n_sites": self.n_sites,
            "mu": self.mu,
            "frequencies": self.frequencies.tolist(),
            "paraunitarity": float(np.max(np.abs(T @ self.eta_tilde @ T.conj().T - eta))),
            "conjugation": float(np.max(np.abs(T.conj() - gamma @ T @ self.gamma_tilde))),
            "zero_mode": float(np.max(np.abs(etM @ self.P))),
            "jordan": float(np.max(np.abs(etM @ self.Q + 1j / self.mu * self.P))),
            "projector_idempotency": float(np.max(np.abs(self.projector @ self.projector - self.projector))),
            "condition_T": float(np.linalg.cond(T)),
        }

    def dump_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.diagnostics(), fh, indent=2, sort_keys=True)


def _inv_sqrt_gram(G: np.ndarray) -> np.ndarray:
    G = 0.5 * (G + G.conj().T)
    w, u = np.linalg.eigh(G)
    if w.min() < GRAM_MIN_EIGENVALUE:
        raise BdgError(f"Gram matrix not positive definite (min eigenvalue {w.min():.3e})")
    return (u / np.sqrt(w)) @ u.conj().T


def _cluster(values: np.ndarray, tol: float) -> list[np.ndarray]:
    """Group sorted ``values`` into runs whose neighbours differ by at most ``tol``."""
    groups, start = [], 0
    for i in range(1, values.size + 1):
        if i == values.size or values[i] - values[i - 1] > tol:
            groups.append(np.arange(start, i))
            start = i
    return groups


def _zero_mode(M0: np.ndarray, eta: np.ndarray, gamma: np.ndarray):
    """Kernel vector ``P`` and Jordan partner ``Q`` with canonical normalisation."""
    n2 = M0.shape[0]
    w, u = np.linalg.eigh(M0)
    scale = np.max(np.abs(w))
    kernel = np.abs(w) < ZERO_MODE_RTOL * scale
    if kernel.sum() != 1:
        raise BdgError(f"expected exactly one zero mode, found {int(kernel.sum())} "
                       "(disconnected lattice?)")
    p = u[:, kernel][:, 0]
    # fix the sign so the first nonzero component is positive, then P = -i p
    lead = p[np.argmax(np.abs(p) > 1e-8)]
    p = p * np.sign(lead) / np.linalg.norm(p)
    P = -1j * p
    etM = eta @ M0
    # minimum-norm solution of eta M0 Qt = P
    Qt = np.linalg.lstsq(etM, P, rcond=None)[0]
    mu_c = Qt.conj() @ eta @ P
    if abs(mu_c.imag) > 1e-8 * abs(mu_c) or mu_c.real <= 0:
        raise BdgError(f"zero-mode normalisation failed (Q^+ eta P = {mu_c})")
    mu = float(mu_c.real)
    Q = (-1j / mu) * Qt
    Q = 0.5 * (Q - gamma @ Q.conj())
    if np.linalg.norm(etM @ Q + 1j / mu * P) > 1e-6 * np.linalg.norm(P) / mu * np.sqrt(n2):
        raise BdgError("Jordan chain construction failed")
    return P, Q, mu


def bdg_decompose(quad: QuadraticHamiltonian) -> BdgDecomposition:
    """Canonical decomposition of ``eta M0`` for a zero-field quadratic Hamiltonian."""
    if quad.h != 0:
        raise ValueError("bdg_decompose expects the zero-field Hamiltonian")
    n = quad.n_modes
    M0 = quad.bdg_matrix()
    if not np.allclose(M0, M0.conj().T, atol=1e-12):
        raise BdgError("BdG matrix is not Hermitian")
    eta, gamma = nambu_metric(n), nambu_swap(n)
    P, Q, mu = _zero_mode(M0, eta, gamma)

    w, vecs = np.linalg.eig(eta @ M0)
    order = np.argsort(np.abs(w))
    finite = order[2:]  # the two smallest belong to the Jordan block
    wf = w[finite]
    wmax = np.max(np.abs(wf))
    if np.max(np.abs(wf.imag)) > 1e-7 * wmax:
        raise BdgError("complex BdG frequencies: the quadratic Hamiltonian is unstable")
    pos = finite[wf.real > 0]
    if pos.size != n - 1:
        raise BdgError(f"expected {n - 1} positive frequencies, found {pos.size}")
    pos = pos[np.argsort(w[pos].real)]
    omegas = w[pos].real
    Vt = vecs[:, pos]

    V = np.empty_like(Vt)
    for grp in _cluster(omegas, DEGENERACY_RTOL * wmax):
        Sp = Vt[:, grp]
        G = Sp.conj().T @ eta @ Sp
        V[:, grp] = Sp @ _inv_sqrt_gram(G)
        omegas[grp] = omegas[grp].mean()
    W = gamma @ V.conj()

    V0 = (P + 1j * Q) / np.sqrt(2)
    W0 = -(P - 1j * Q) / np.sqrt(2)
    T = np.column_stack([V0, W0, V, W])
    T_S = np.column_stack([V, W])
    eta_S = nambu_metric(n - 1)
    T_S_inv = eta_S @ T_S.conj().T @ eta
    return BdgDecomposition(M0=M0, T=T, frequencies=omegas, P=P, Q=Q, mu=mu, T_S=T_S, T_S_inv=T_S_inv)
