import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import collective, oat_xi_squared, product_x_state, wineland_brute
from spinsqueeze.fields import ControlField
from spinsqueeze.lattice import Boundary, LatticeSpec, build_couplings, collective_chi
from spinsqueeze.moments import wineland
from spinsqueeze.rotor import (HamiltonianKind, RotorHamiltonian, RotorKind, RotorState, build_dicke_operators,
                               evolve_lindblad_collective, evolve_unitary, initial_css_x, inverse_inertia,
                               rotor_moments, tat_benchmark, tat_optimum)
from scipy.linalg import expm


def fidelity(a, b):
    return abs(np.vdot(a, b)) ** 2


@pytest.mark.parametrize("n", [1, 2, 3, 4, 7, 16])
def test_dicke_algebra(n):
    ops = build_dicke_operators(n)
    Kx, Ky, Kz = ops.Kx, ops.Ky, ops.Kz
    comm = lambda a, b: a @ b - b @ a
    assert np.abs(comm(Kx, Ky) - 1j * Kz).max() < 1e-12
    assert np.abs(comm(Ky, Kz) - 1j * Kx).max() < 1e-12
    assert np.abs(comm(Kz, Kx) - 1j * Ky).max() < 1e-12
    j = n / 2
    cas = Kx @ Kx + Ky @ Ky + Kz @ Kz
    assert np.abs(cas - j * (j + 1) * np.eye(n + 1)).max() < 1e-10


def test_dicke_small():
    o1 = build_dicke_operators(1)
    np.testing.assert_allclose(o1.Kz, np.diag([-0.5, 0.5]))
    np.testing.assert_allclose(o1.Kx, [[0, 0.5], [0.5, 0]])
    np.testing.assert_allclose(build_dicke_operators(2).Kz, np.diag([-1.0, 0.0, 1.0]))
    with pytest.raises(ValueError):
        build_dicke_operators(0)


@pytest.mark.parametrize("n", [1, 4, 9, 40])
def test_css(n):
    s = initial_css_x(n)
    if n == 1:
        np.testing.assert_allclose(s.data, [2**-0.5, 2**-0.5])
    m = rotor_moments(s)
    assert m.mean[0] == pytest.approx(n / 2, abs=1e-10)
    assert abs(m.mean[1]) < 1e-10 and abs(m.mean[2]) < 1e-10
    assert m.covariance[2, 2] == pytest.approx(n / 4, abs=1e-10)
    assert m.covariance[1, 1] == pytest.approx(n / 4, abs=1e-10)


def test_state_validation():
    with pytest.raises(ValueError):
        RotorState(RotorKind.PURE, np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        RotorState(RotorKind.DENSITY, np.diag([0.6, 0.6]))
    with pytest.raises(ValueError):
        RotorState(RotorKind.DENSITY, np.array([[0.5, 0.1], [0.2, 0.5]]))
    with pytest.raises(ValueError):
        ControlField(1.0, [0.0, np.nan])


def test_identity_and_x_rotation():
    n = 6
    s = initial_css_x(n)
    tr = evolve_unitary(s, RotorHamiltonian(0.0), ControlField.zeros(1.0, 4))
    for k in range(len(tr)):
        assert fidelity(tr.states[k], s.data) == pytest.approx(1.0, abs=1e-14)
    tr = evolve_unitary(s, RotorHamiltonian(0.0), ControlField(1.0, [0.3, -1.2, 2.0]), substeps=3)
    for k in range(len(tr)):
        m = rotor_moments(tr[k])
        assert abs(m.mean[2]) < 1e-12
        assert m.covariance[2, 2] == pytest.approx(n / 4, abs=1e-12)


@pytest.mark.parametrize("n", [8, 16, 32])
def test_oat_closed_form(n):
    chi = 0.7
    T = 1.2 / np.sqrt(n)
    fld = ControlField.zeros(T, 20)
    tr = evolve_unitary(initial_css_x(n), RotorHamiltonian(chi), fld, substeps=2)
    ops = build_dicke_operators(n)
    got = np.array([wineland(rotor_moments(tr[k], ops), n)[0] for k in range(len(tr))])
    ref = oat_xi_squared(n, chi, tr.times)
    np.testing.assert_allclose(got, ref, rtol=1e-6)


def test_oat_amplitudes_constant_and_casimir():
    n = 12
    s = initial_css_x(n)
    tr = evolve_unitary(s, RotorHamiltonian(1.1), ControlField.zeros(2.0, 8), substeps=2)
    ops = build_dicke_operators(n)
    for k in range(len(tr)):
        np.testing.assert_array_equal(np.abs(tr.states[k]).round(13), np.abs(s.data).round(13))
        assert np.linalg.norm(tr.states[k]) == pytest.approx(1.0, abs=1e-10)
        assert rotor_moments(tr[k], ops).total_spin_squared == pytest.approx(n / 2 * (n / 2 + 1), abs=1e-9)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6), st.floats(0.1, 3.0), st.integers(2, 12))
def test_segment_splitting(hs, T, n):
    ham = RotorHamiltonian(0.9)
    f1 = ControlField(T, hs)
    f2 = f1.refined(2)
    a = evolve_unitary(initial_css_x(n), ham, f1).final.data
    b = evolve_unitary(initial_css_x(n), ham, f2).final.data
    assert fidelity(a, b) == pytest.approx(1.0, abs=1e-10)


def test_unitary_matches_expm():
    n = 5
    ops = build_dicke_operators(n)
    ham = RotorHamiltonian(0.8)
    fld = ControlField(1.0, [1.0, -0.5])
    psi = initial_css_x(n).data
    for h in fld.segments:
        psi = expm(-1j * (0.8 * ops.Kz2 - h * ops.Kx) * 0.5) @ psi
    got = evolve_unitary(initial_css_x(n), ham, fld).final.data
    assert fidelity(got, psi) == pytest.approx(1.0, abs=1e-12)


def test_lindblad_zero_rate_matches_unitary():
    n = 10
    ham = RotorHamiltonian(0.6)
    fld = ControlField(1.0, [0.5, -1.0, 2.0, 0.0])
    psi = evolve_unitary(initial_css_x(n), ham, fld).states
    rho = evolve_lindblad_collective(initial_css_x(n), ham, fld, 0.0).states
    for k in range(psi.shape[0]):
        assert np.vdot(psi[k], rho[k] @ psi[k]).real == pytest.approx(1.0, abs=1e-8)


def test_pure_dephasing_closed_form():
    n = 6
    ops = build_dicke_operators(n)
    g, T = 0.3, 1.5
    tr = evolve_lindblad_collective(initial_css_x(n), RotorHamiltonian(0.0), ControlField.zeros(T, 3), g)
    rho0 = tr.states[0]
    dm = (ops.m[:, None] - ops.m[None, :]) ** 2
    for k, t in enumerate(tr.times):
        np.testing.assert_allclose(tr.states[k], rho0 * np.exp(-g * dm * t / 2), atol=1e-9)
    # <Kx> of the CSS decays as exp(-g t / 2) for every spin
    assert np.trace(ops.Kx @ tr.states[-1]).real == pytest.approx(n / 2 * np.exp(-g * T / 2), rel=1e-8)


def test_lindblad_trace_and_positivity():
    n = 16
    c = build_couplings(LatticeSpec(4, 4))
    tr = evolve_lindblad_collective(initial_css_x(n), RotorHamiltonian.from_couplings(c),
                                    ControlField(1.0, np.linspace(-1, 1, 8)), 0.2, substeps=2)
    for k in range(len(tr)):
        assert np.trace(tr.states[k]).real == pytest.approx(1.0, abs=1e-8)
        assert np.linalg.eigvalsh(tr.states[k]).min() > -1e-7
    with pytest.raises(ValueError):
        evolve_lindblad_collective(initial_css_x(4), RotorHamiltonian(1.0), ControlField.zeros(1.0), -0.1)


def test_rotor_coefficient():
    for spec in [LatticeSpec(4, 4), LatticeSpec(3, 3, Boundary.OPEN), LatticeSpec(2, 1)]:
        c = build_couplings(spec)
        assert inverse_inertia(c) == pytest.approx(collective_chi(c) / 2, rel=1e-14)
    c = build_couplings(LatticeSpec(4, 4))
    j0 = c.values[0].sum()
    assert inverse_inertia(c) == pytest.approx(j0 / (2 * 15), rel=1e-13)


def test_tat_basics():
    n, chi = 16, 0.3
    t = np.linspace(0, 2, 301)
    assert tat_benchmark(n, chi, [0.0]) == pytest.approx(1.0, abs=1e-12)
    v = tat_benchmark(n, chi, t)
    assert v < 1
    assert tat_benchmark(n, 2.5 * chi, t / 2.5) == pytest.approx(v, rel=1e-10)
    with pytest.raises(ValueError):
        tat_benchmark(n, chi, [])
    with pytest.raises(ValueError):
        tat_benchmark(n, 0.0, t)
    best, tmin = tat_optimum(n, chi)
    assert best <= v + 1e-12
    assert tat_optimum(n, 3 * chi)[0] == pytest.approx(best, rel=1e-6)


def test_tat_n4_against_full_space():
    n, chi = 4, 1.0
    S = collective(n)
    H = chi * (S[2] @ S[2] - S[1] @ S[1])
    w, v = np.linalg.eigh(H)
    psi0 = product_x_state(n)
    t = np.linspace(0, 1.5, 151)
    ref = []
    for tk in t:
        psi = v @ (np.exp(-1j * w * tk) * (v.conj().T @ psi0))
        ref.append(wineland_brute(psi, S, n, n_angles=200000))
    assert tat_benchmark(n, chi, t) == pytest.approx(min(ref), rel=1e-8)


def test_tat_hamiltonian_kind():
    ops = build_dicke_operators(3)
    H = RotorHamiltonian(2.0, HamiltonianKind.TAT).matrix(ops, 0.5)
    np.testing.assert_allclose(H, 2.0 * (ops.Kz2 - ops.Ky2) - 0.5 * ops.Kx)
    with pytest.raises(ValueError):
        RotorHamiltonian(np.inf)
