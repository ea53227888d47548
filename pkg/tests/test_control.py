import json

import numpy as np
import pytest

from spinsqueeze.control import (PENALTY, OptimizerOptions, SqueezingProblem, bfgs, crossover_time,
                                 crossover_time_fit, optimize, uncontrolled_reference)
from spinsqueeze.fields import ControlField
from spinsqueeze.lattice import Boundary, CouplingMatrix, LatticeSpec, build_couplings
from spinsqueeze.oracle import evolve_krylov, initial_css_x_full
from spinsqueeze.rotor import RotorHamiltonian, evolve_unitary, initial_css_x
from spinsqueeze.observables import squeezing_from_rsw
from spinsqueeze.spinwave import SpinWaveState, bdg_decompose, build_quadratic, evolve_obc_covariance, evolve_pbc_modes


def rand_field(m, seed, scale=1.0):
    return np.random.default_rng([99, seed]).uniform(-scale, scale, m)


def test_objective_matches_module_pipeline_pbc():
    spec = LatticeSpec(3, 3)
    p = SqueezingProblem(spec, 0.25, 6)
    h = rand_field(6, 0)
    fld = p.make_field(h)
    c = build_couplings(spec)
    rotor = evolve_unitary(initial_css_x(9), RotorHamiltonian.from_couplings(c), fld).final
    n_fm = evolve_pbc_modes(None, c, spec, fld).final.n_fm
    ref = squeezing_from_rsw(rotor, SpinWaveState(SpinWaveState.empty().kind, None, n_fm), 9).xi_squared
    assert ref < PENALTY
    assert p.objective(fld) == pytest.approx(ref, rel=1e-11)
    # past the band edge the value is continued logarithmically
    p = SqueezingProblem(spec, 0.6, 6)
    fld = p.make_field(h)
    rotor = evolve_unitary(initial_css_x(9), RotorHamiltonian.from_couplings(c), fld).final
    n_fm = evolve_pbc_modes(None, c, spec, fld).final.n_fm
    big = squeezing_from_rsw(rotor, SpinWaveState(SpinWaveState.empty().kind, None, n_fm), 9).xi_squared
    assert big > PENALTY
    assert p.objective(fld) == pytest.approx(PENALTY * (1 + np.log(big / PENALTY)), rel=1e-11)


def test_objective_matches_module_pipeline_obc():
    spec = LatticeSpec(3, 2, Boundary.OPEN)
    p = SqueezingProblem(spec, 0.5, 5)
    fld = p.make_field(rand_field(5, 1))
    c = build_couplings(spec)
    rotor = evolve_unitary(initial_css_x(6), RotorHamiltonian.from_couplings(c), fld).final
    sw = evolve_obc_covariance(bdg_decompose(build_quadratic(c)), fld).final
    assert p.objective(fld) == pytest.approx(squeezing_from_rsw(rotor, sw, 6).xi_squared, rel=1e-10)


def test_zero_chi_constant_field():
    n = 4
    p = SqueezingProblem(LatticeSpec(2, 2), 1.0, 4, couplings=CouplingMatrix(1e-300 * (1 - np.eye(n))))
    assert p.objective(np.full(4, 0.7)) == pytest.approx(1.0, abs=1e-12)


def test_zero_field_equals_uncontrolled_endpoint():
    p = SqueezingProblem(LatticeSpec(3, 3), 0.3, 8)
    tr = p.trajectory(np.zeros(8), substeps=3)
    assert p.objective(np.zeros(8)) == pytest.approx(tr["xi_squared"][-1], rel=1e-12)
    ref = uncontrolled_reference(p)
    assert ref["xi_db_end"] == pytest.approx(tr["xi_db"][-1], rel=1e-12)
    assert ref["xi_db_best"] >= ref["xi_db_end"]


def test_determinism():
    p = SqueezingProblem(LatticeSpec(4, 4), 1.0, 16, gamma_c=0.1)
    h = rand_field(16, 2)
    a = p.objective(h)
    p2 = SqueezingProblem(LatticeSpec(4, 4), 1.0, 16, gamma_c=0.1)
    assert p2.objective(h) == a
    np.testing.assert_array_equal(p.gradient(h), p2.gradient(h))


@pytest.mark.parametrize("spec,gamma", [(LatticeSpec(4, 4), 0.0), (LatticeSpec(3, 3, Boundary.OPEN), 0.0),
                                        (LatticeSpec(3, 3), 0.2)])
def test_efficient_gradient_equals_naive(spec, gamma):
    p = SqueezingProblem(spec, 0.8, 10, gamma_c=gamma)
    h = rand_field(10, 3)
    g = p.gradient(h)
    naive = p._naive_gradient(h, 1e-4)
    np.testing.assert_allclose(g, naive, rtol=1e-6, atol=1e-8 * np.abs(naive).max())


def test_gradient_richardson():
    # central differences: the error term scales as delta^2
    p = SqueezingProblem(LatticeSpec(3, 3), 0.5, 6)
    h = rand_field(6, 4)
    g1, g2, g4 = (p.gradient(h, d) for d in (0.2, 0.1, 0.05))
    e1 = np.linalg.norm(g1 - g4)
    e2 = np.linalg.norm(g2 - g4)
    # e(d) ~ c d^2 with e measured against d/4: ratio (1 - 1/16)/(1/4 - 1/16) = 5
    assert 5 / 4 < e1 / e2 < 5 * 4
    gd, gh = p.gradient(h, 1e-4), p.gradient(h, 5e-5)
    assert np.linalg.norm(gd - gh) < 1e-6 * np.linalg.norm(gd)


def test_penalty_band():
    p = SqueezingProblem(LatticeSpec(4, 4), 1.0, 4)
    v = p.objective(np.zeros(4))  # the uncontrolled 4x4 state has lost its mean spin by T = 1
    assert np.isfinite(v) and v > PENALTY
    unstable = p.objective(np.full(4, -9.5))
    assert np.isfinite(unstable) and unstable > PENALTY
    assert p.objective(np.full(4, -9.9)) > unstable  # distance proxy grows into the infeasible region


def test_field_validation():
    p = SqueezingProblem(LatticeSpec(2, 2), 1.0, 4)
    with pytest.raises(ValueError):
        p.objective(np.zeros(3))
    with pytest.raises(ValueError):
        p.objective(ControlField.zeros(2.0, 4))
    with pytest.raises(ValueError):
        SqueezingProblem(LatticeSpec(2, 2), 1.0, 4, gamma_c=-0.1)
    with pytest.raises(ValueError):
        p.objective(np.array([0, 0, np.nan, 0]))


def test_short_time_against_ed():
    # deep in the perturbative regime the rotor/spin-wave estimate tracks ED closely
    spec = LatticeSpec(2, 2)
    c = build_couplings(spec)
    h = rand_field(8, 5)
    T = 0.05
    p = SqueezingProblem(spec, T, 8)
    ed = evolve_krylov(initial_css_x_full(4), c, ControlField(T, h)).xi_squared()[-1]
    assert p.objective(h) == pytest.approx(ed, rel=0.01)


@pytest.mark.xfail(strict=True, reason="at N = 4 the depletion-corrected estimate deviates from ED by "
                                       "2.6% at T = 0.1, 9% at T = 0.2 and 14% at T = 0.3")
@pytest.mark.parametrize("T", [0.1, 0.2, 0.3])
def test_random_field_against_ed_2x2(T):
    spec = LatticeSpec(2, 2)
    c = build_couplings(spec)
    h = rand_field(8, 6)
    p = SqueezingProblem(spec, T, 8)
    ed = evolve_krylov(initial_css_x_full(4), c, ControlField(T, h)).xi_squared()[-1]
    assert p.objective(h) == pytest.approx(ed, rel=0.02)


def test_bfgs_monotone_and_reevaluation():
    p = SqueezingProblem(LatticeSpec(3, 3), 0.4, 8)
    opts = OptimizerOptions(max_iter=15, n_random_starts=1)
    res = optimize(p, options=opts)
    for s in res.starts:
        assert all(b < a for a, b in zip(s.history, s.history[1:]))
        assert s.best_value == min(s.history)
    fresh = SqueezingProblem(LatticeSpec(3, 3), 0.4, 8).objective(res.best_field)
    assert res.xi_squared_opt == pytest.approx(fresh, abs=1e-10)
    assert res.xi_db_opt == pytest.approx(-10 * np.log10(res.xi_squared_opt))
    zero = p.objective(np.zeros(8))
    assert res.xi_squared_opt <= zero
    assert res.xi_squared_opt == min(s.best_value for s in res.starts)
    assert len(res.starts) == 3 and [s.label for s in res.starts] == ["zero", "positive", "random-0"]
    assert np.all(np.abs(res.best_field.segments) <= p.h_max)


def test_bfgs_stationary_point():
    # with no interaction the objective is flat: the start is already stationary
    n = 4
    p = SqueezingProblem(LatticeSpec(2, 2), 1.0, 4, couplings=CouplingMatrix(1e-300 * (1 - np.eye(n))))
    r = bfgs(p, np.full(4, 0.3), OptimizerOptions())
    assert r.converged and r.gradient_norm < OptimizerOptions().gtol
    np.testing.assert_allclose(r.best_segments, 0.3)


def test_bfgs_respects_bounds():
    p = SqueezingProblem(LatticeSpec(3, 3), 0.5, 6, h_max=0.2)
    r = bfgs(p, np.full(6, 5.0), OptimizerOptions(max_iter=10))
    assert np.all(np.abs(r.best_segments) <= 0.2)


def test_nonfinite_start_rejected(monkeypatch):
    p = SqueezingProblem(LatticeSpec(2, 2), 1.0, 2)
    monkeypatch.setattr(p, "objective", lambda x: np.nan)
    with pytest.raises(FloatingPointError):
        bfgs(p, np.zeros(2), OptimizerOptions())


def test_threads_do_not_change_result():
    p = SqueezingProblem(LatticeSpec(2, 3), 0.5, 6)
    a = optimize(p, options=OptimizerOptions(max_iter=8, n_random_starts=2))
    b = optimize(p, options=OptimizerOptions(max_iter=8, n_random_starts=2, threads=3))
    assert json.dumps(a.to_json(), sort_keys=True) == json.dumps(b.to_json(), sort_keys=True)


def test_checkpoint_resume(tmp_path):
    ck = tmp_path / "ck.json"
    p = SqueezingProblem(LatticeSpec(2, 3), 0.5, 6)
    opts = OptimizerOptions(max_iter=6, n_random_starts=1)
    full = optimize(p, options=opts, checkpoint=ck)
    saved = json.loads(ck.read_text())
    assert len(saved["starts"]) == 3
    # drop the last start and resume
    saved["starts"] = saved["starts"][:2]
    ck.write_text(json.dumps(saved))
    resumed = optimize(SqueezingProblem(LatticeSpec(2, 3), 0.5, 6), options=opts, checkpoint=ck)
    assert json.dumps(full.to_json(), sort_keys=True) == json.dumps(resumed.to_json(), sort_keys=True)


def test_crossover_fit():
    s, i = crossover_time_fit([16, 64], [0.38, 0.86])
    assert s == pytest.approx(0.01, abs=1e-12) and i == pytest.approx(0.22, abs=1e-12)
    s, i = crossover_time_fit([4, 9, 16], [0.5, 0.5, 0.5])
    assert s == pytest.approx(0.0, abs=1e-14) and i == pytest.approx(0.5)
    rng = np.random.default_rng(0)
    x = np.arange(4, 200, 4.0)
    y = 0.013 * x + 0.2 + rng.normal(0, 0.01, x.size)
    s, i = crossover_time_fit(x, y)
    ref = np.polyfit(x, y, 1)
    assert s == pytest.approx(ref[0], rel=1e-10) and i == pytest.approx(ref[1], rel=1e-10)
    resid = y - (s * x + i)
    assert abs(resid.sum()) < 1e-10 and abs(resid @ x) < 1e-8
    for bad in ([[16], [0.3]], [[16, 16], [0.3, 0.4]], [[1, 2], [1.0]]):
        with pytest.raises(ValueError):
            crossover_time_fit(*bad)


def test_crossover_time():
    t = [0.2, 0.4, 0.6]
    xi = 10 ** (-np.array([2.0, 4.0, 8.0]) / 10)
    assert crossover_time(t, xi, 10 ** (-0.6)) == pytest.approx(0.5)
    assert np.isnan(crossover_time(t, xi, 10 ** (-1.0)))


def test_no_boost_before_saturation():
    # uncontrolled 4x4 squeezing peaks near Jt = 0.19; before that the free evolution is near optimal
    spec = LatticeSpec(4, 4)
    opts = OptimizerOptions(max_iter=60, n_random_starts=2)
    gains = []
    for T in (0.1, 0.3):
        p = SqueezingProblem(spec, T, 16)
        gains.append(optimize(p, options=opts).xi_db_opt - uncontrolled_reference(p)["xi_db_end"])
    assert 0 <= gains[0] < 0.25
    assert gains[1] > 1.0
