"""Independent reference implementations used only by the tests.

Nothing here imports from the package: each function is a separate,
deliberately naive evaluation against which package results are checked.
"""

from functools import reduce

import numpy as np
from scipy.linalg import expm

PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex) / 2,
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex) / 2,
    "z": np.array([[1, 0], [0, -1]], dtype=complex) / 2,
}


def oat_xi_squared(n, chi, t):
    """Closed-form Wineland ratio of one-axis twisting ``chi S_z^2`` from the +x coherent state."""
    t = np.asarray(t, dtype=float)
    mu = 2.0 * chi * t
    a = 1.0 - np.cos(mu) ** (n - 2)
    b = 4.0 * np.sin(mu / 2) * np.cos(mu / 2) ** (n - 2)
    vmin = 1.0 + (n - 1) / 4.0 * (a - np.sqrt(a * a + b * b))
    return vmin / np.cos(mu / 2) ** (2 * (n - 1))


def site_op(op, i, n):
    return reduce(np.kron, [op if k == i else np.eye(2) for k in range(n)])


def collective(n):
    """Total ``(S_x, S_y, S_z)`` on ``(C^2)^n`` from explicit Kronecker products."""
    return tuple(sum(site_op(PAULI[a], i, n) for i in range(n)) for a in "xyz")


def xx_hamiltonian(J, h):
    n = J.shape[0]
    sx = [site_op(PAULI["x"], i, n) for i in range(n)]
    sy = [site_op(PAULI["y"], i, n) for i in range(n)]
    H = -h * sum(sx)
    for i in range(n):
        for j in range(i + 1, n):
            H = H - J[i, j] * (sx[i] @ sx[j] + sy[i] @ sy[j])
    return H


def product_x_state(n):
    v = np.ones(2, dtype=complex) / np.sqrt(2)
    return reduce(np.kron, [v] * n)


def wineland_brute(psi_or_rho, S, n, n_angles=20000):
    """Wineland ratio by explicit minimisation over a dense angle grid."""
    if psi_or_rho.ndim == 1:
        ex = lambda op: np.vdot(psi_or_rho, op @ psi_or_rho)
    else:
        ex = lambda op: np.trace(op @ psi_or_rho)
    mean = np.array([ex(s).real for s in S])
    nhat = mean / np.linalg.norm(mean)
    e1 = np.cross(nhat, [0, 0, 1.0]) if abs(nhat[2]) < 0.9 else np.cross(nhat, [1.0, 0, 0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(nhat, e1)
    th = np.linspace(0, np.pi, n_angles, endpoint=False)
    A = sum(e1[k] * S[k] for k in range(3))
    B = sum(e2[k] * S[k] for k in range(3))
    va, vb = ex(A @ A).real - ex(A).real ** 2, ex(B @ B).real - ex(B).real ** 2
    cab = 0.5 * ex(A @ B + B @ A).real - ex(A).real * ex(B).real
    var = np.cos(th) ** 2 * va + np.sin(th) ** 2 * vb + 2 * np.sin(th) * np.cos(th) * cab
    return n * var.min() / (mean @ mean)


def evolve_dense(H, psi, t):
    return expm(-1j * H * t) @ psi
