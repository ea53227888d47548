import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spinsqueeze.lattice import (Boundary, CouplingMatrix, LatticeSpec, build_couplings, collective_chi,
                                 fourier_coupling, fourier_couplings_all)

dims = st.integers(1, 5)


def brute_force_distance(spec, i, j):
    """Shortest distance over all periodic images within one cell."""
    xi, yi = i % spec.Lx, i // spec.Lx
    xj, yj = j % spec.Lx, j // spec.Lx
    best = np.inf
    for ax, ay in itertools.product((-1, 0, 1), repeat=2):
        dx = xj - xi + ax * spec.Lx
        dy = yj - yi + ay * spec.Ly
        best = min(best, np.hypot(dx, dy))
    return best


def test_two_site_open():
    c = build_couplings(LatticeSpec(2, 1, Boundary.OPEN))
    assert c.values[0, 1] == 4.0
    assert np.array_equal(c.values, build_couplings(LatticeSpec(1, 2, Boundary.OPEN)).values)


def test_minimum_image_4x4():
    spec = LatticeSpec(4, 4)
    c = build_couplings(spec)
    assert c.values[0, 2] == pytest.approx(0.5, abs=1e-15)
    for j in range(1, spec.n_sites):
        d = brute_force_distance(spec, 0, j)
        assert c.values[0, j] == pytest.approx(4.0 * d**-3, rel=1e-14)


def test_rejects_bad_specs():
    for args in [(1, 1), (0, 3), (3, 0), (-1, 2)]:
        with pytest.raises(ValueError):
            LatticeSpec(*args)
    with pytest.raises(ValueError):
        LatticeSpec(2, 2, alpha=0.0)


def test_coupling_matrix_validation():
    with pytest.raises(ValueError):
        CouplingMatrix(np.array([[0.0, 1.0], [2.0, 0.0]]))
    with pytest.raises(ValueError):
        CouplingMatrix(np.array([[1.0, 1.0], [1.0, 0.0]]))


def test_chi_values():
    c = build_couplings(LatticeSpec(2, 1, Boundary.OPEN))
    assert collective_chi(c) == 4.0
    spec = LatticeSpec(3, 3)
    c = build_couplings(spec)
    total = 0.0
    for i in range(9):
        for j in range(i + 1, 9):
            total += 4.0 / brute_force_distance(spec, i, j) ** 3
    assert collective_chi(c) == pytest.approx(2 * total / (8 * 9), rel=1e-13)
    assert collective_chi(c.scaled(2.5)) == pytest.approx(2.5 * collective_chi(c), rel=1e-14)


def test_fourier_direct_sum():
    spec = LatticeSpec(4, 4)
    c = build_couplings(spec)
    r = spec.positions()
    q = np.array([np.pi, 0.0])
    direct = sum(np.exp(1j * q @ (r[i] - r[j])) * c.values[i, j] for i in range(16) for j in range(16)) / 16
    assert abs(direct.imag) < 1e-12
    assert fourier_coupling(c, spec, q) == pytest.approx(direct.real, abs=1e-12)
    assert fourier_coupling(c, spec, [0, 0]) == pytest.approx(c.values[0].sum(), rel=1e-14)


def test_fourier_rejects():
    c = build_couplings(LatticeSpec(3, 3, Boundary.OPEN))
    with pytest.raises(ValueError):
        fourier_coupling(c, LatticeSpec(3, 3, Boundary.OPEN), [0, 0])
    spec = LatticeSpec(3, 3)
    with pytest.raises(ValueError):
        fourier_coupling(build_couplings(spec), spec, [0.3, 0.0])


@settings(max_examples=30, deadline=None)
@given(lx=dims, ly=dims, alpha=st.floats(0.5, 6.0), periodic=st.booleans())
def test_coupling_properties(lx, ly, alpha, periodic):
    if lx * ly < 2:
        return
    spec = LatticeSpec(lx, ly, Boundary.PERIODIC if periodic else Boundary.OPEN, alpha)
    c = build_couplings(spec)
    v = c.values
    assert np.array_equal(v, v.T)
    assert np.all(np.diag(v) == 0)
    assert np.all(v[~np.eye(spec.n_sites, dtype=bool)] > 0)
    if periodic:
        rs = c.row_sums()
        assert np.ptp(rs) <= 1e-12 * rs.max()


@settings(max_examples=20, deadline=None)
@given(lx=dims, ly=dims, alpha=st.floats(0.5, 6.0))
def test_fourier_inversion(lx, ly, alpha):
    if lx * ly < 2:
        return
    spec = LatticeSpec(lx, ly, alpha=alpha)
    c = build_couplings(spec)
    q = spec.momenta()
    jq = fourier_couplings_all(c, spec)
    r = spec.positions()
    for k in range(len(q)):
        mq = (-q[k]) % (2 * np.pi * np.array([1 / lx, 1 / ly]) * np.array([lx, ly]))
        assert fourier_coupling(c, spec, mq) == pytest.approx(jq[k], abs=1e-10)
    recon = np.einsum("q,qij->ij", jq, np.exp(-1j * np.einsum("qa,ija->qij", q, r[:, None] - r[None, :]))).real
    recon /= spec.n_sites
    np.fill_diagonal(recon, 0.0)
    np.testing.assert_allclose(recon, c.values, atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(lx=st.integers(3, 5), ly=st.integers(1, 5), alpha=st.floats(0.5, 6.0))
def test_open_chi_below_periodic(lx, ly, alpha):
    # requires a side of length >= 3; with both sides <= 2 the two boundaries coincide
    o = collective_chi(build_couplings(LatticeSpec(lx, ly, Boundary.OPEN, alpha)))
    p = collective_chi(build_couplings(LatticeSpec(lx, ly, Boundary.PERIODIC, alpha)))
    assert o < p


def test_small_lattices_boundaries_coincide():
    for lx, ly in [(2, 2), (2, 1)]:
        o = build_couplings(LatticeSpec(lx, ly, Boundary.OPEN)).values
        p = build_couplings(LatticeSpec(lx, ly)).values
        np.testing.assert_array_equal(o, p)
