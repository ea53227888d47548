"""Squeezing objective over piecewise-constant fields and its optimization.

The objective is the rotor/spin-wave estimate of ``xi^2`` at the final time.
Gradients are central finite differences, evaluated segment by segment: the
state entering segment ``k`` and the observables pulled back from ``T`` to the
end of segment ``k`` are cached, so each perturbed objective needs only one
segment propagation. This gives the same numbers as re-running the whole
pipeline for every perturbed field, at ``O(M)`` instead of ``O(M^2)`` cost.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh

from .fields import ControlField
from .integrate import dopri5
from .lattice import LatticeSpec, build_couplings, CouplingMatrix
from .moments import LostMeanSpinError, min_quadrature_variance
from .observables import (LOST_SPIN_THRESHOLD, rsw_squeezing_from_moments, to_db,
                          total_spin_squared)
from .rotor import (RotorHamiltonian, RotorPropagator, build_dicke_operators,
                    dephasing_profile, evolve_lindblad_collective, evolve_unitary, hermitize,
                    initial_css_x, lindblad_adjoint_rhs, lindblad_rhs, rotor_moments)
from .spinwave import (DynamicalInstabilityError, PbcModel, ProjectedDynamics, SpinWaveKind, SpinWaveState,
                       bdg_decompose, build_quadratic)

log = logging.getLogger(__name__)

PENALTY = 10.0
LINDBLAD_RTOL = 1e-8
LINDBLAD_ATOL = 1e-10

__all__ = [
    "ControlField", "SqueezingProblem", "OptimizerOptions", "OptimizationResult", "StartResult",
    "optimize", "crossover_time_fit", "crossover_time", "PENALTY", "bfgs",
    "dephasing_sweep", "uncontrolled_reference",
]


# --------------------------------------------------------------------------
# spin-wave engines: a stack of covariance blocks C -> U C U^+ and a linear
# read-out n_FM = offset + sum_b tr(sel C_b)


class _PbcEngine:
    def __init__(self, couplings: CouplingMatrix, spec: LatticeSpec):
        self.model = PbcModel(couplings, spec)
        nm = self.model.n_modes
        self.cov0 = np.zeros((nm, 2, 2), dtype=complex)
        self.cov0[:, 0, 0] = 1.0
        self.selector = np.array([[0.0, 0.0], [0.0, 1.0]])
        self.offset = 0.0

    def margin(self, hs) -> np.ndarray:
        return self.model.stability_margin(hs)

    def propagators(self, hs, dt) -> np.ndarray:
        return self.model.propagators(hs, dt)


class _ObcEngine:
    def __init__(self, couplings: CouplingMatrix):
        self.decomp = bdg_decompose(build_quadratic(couplings, 0.0))
        self.dyn = ProjectedDynamics(self.decomp)
        self.cov0 = self.dyn.cov_s0[None]
        self.selector = self.dyn.d_select
        self.offset = float(np.trace(self.dyn.d_select @ self.dyn.cov_remain).real)
        d = self.decomp
        # M(h) = M0 + h I must stay positive definite on the spin-wave subspace
        # (for PBC this is A_q > |B_q|); the threshold field is -lambda_min
        ts = d.T_S
        gram = ts.conj().T @ ts
        self.lambda_min = float(eigh(ts.conj().T @ d.M0 @ ts, gram, eigvals_only=True)[0])

    def margin(self, hs) -> np.ndarray:
        """``-(lambda_min + h)``; positive means the spin-wave sector is unstable."""
        return -(self.lambda_min + np.asarray(hs, dtype=float))

    def propagators(self, hs, dt) -> np.ndarray:
        return self.dyn.propagators(hs, dt)[..., None, :, :]


# --------------------------------------------------------------------------


@dataclass
class _Forward:
    """Cached forward pass for one field."""

    hs: np.ndarray
    value: float
    feasible: bool
    rotor_states: list | None = None  # state entering each segment, plus the final one
    sw_covs: list | None = None
    sw_props: np.ndarray | None = None
    rotor_aux: list | None = None


class SqueezingProblem:
    """Final-time squeezing ``xi^2(T)`` of the rotor/spin-wave model for a lattice.

    Parameters
    ----------
    lattice : LatticeSpec
    total_time : float
        ``T`` in units of ``1/J``.
    n_segments : int
        Number of piecewise-constant segments ``M``.
    gamma_c : float
        Collective dephasing rate acting on the rotor (0 means unitary).
    h_max : float
        Bound on ``|h_k|`` enforced by the optimizer.
    """

    def __init__(self, lattice: LatticeSpec, total_time: float = 1.0, n_segments: int = 64,
                 gamma_c: float = 0.0, h_max: float = 10.0, couplings: CouplingMatrix | None = None):
        if not gamma_c >= 0:
            raise ValueError(f"gamma_c must be >= 0, got {gamma_c}")
        if n_segments < 1:
            raise ValueError("n_segments must be >= 1")
        if not (total_time > 0 and h_max > 0):
            raise ValueError("total_time and h_max must be positive")
        self.lattice = lattice
        self.total_time = float(total_time)
        self.n_segments = int(n_segments)
        self.gamma_c = float(gamma_c)
        self.h_max = float(h_max)
        self.couplings = couplings if couplings is not None else build_couplings(lattice)
        self.n_spins = self.couplings.n_sites
        self.ham = RotorHamiltonian.from_couplings(self.couplings)
        self.ops = build_dicke_operators(self.n_spins)
        self.rotor_prop = RotorPropagator(self.ham, self.ops)
        self.engine = _PbcEngine(self.couplings, lattice) if lattice.periodic else _ObcEngine(self.couplings)
        self.psi0 = initial_css_x(self.n_spins)
        o = self.ops
        ky, kz = o.Ky, o.Kz
        # read-out operators: Kx, Ky, Kz, Ky^2, Kz^2, {Ky, Kz}/2
        self.readout = np.array([o.Kx, ky, kz, ky @ ky, kz @ kz, 0.5 * (ky @ kz + kz @ ky)])
        self._profile = dephasing_profile(o)
        self._static = self.ham.static_part(o)
        self._last: _Forward | None = None

    # ---- basic pieces -------------------------------------------------

    @property
    def dt(self) -> float:
        return self.total_time / self.n_segments

    def make_field(self, segments) -> ControlField:
        return ControlField(self.total_time, np.asarray(segments, dtype=float))

    def _hs(self, fld) -> np.ndarray:
        if isinstance(fld, ControlField):
            if abs(fld.total_time - self.total_time) > 1e-12 * self.total_time or fld.n_segments != self.n_segments:
                raise ValueError("field does not match the problem's T and M")
            return np.array(fld.segments)
        hs = np.asarray(fld, dtype=float).reshape(-1)
        if hs.size != self.n_segments:
            raise ValueError(f"expected {self.n_segments} segment values, got {hs.size}")
        if not np.all(np.isfinite(hs)):
            raise ValueError("control field values must be finite")
        return hs

    def _combine(self, vals: np.ndarray, n_fm: float) -> float:
        """``xi^2`` from rotor read-outs, mapped into the penalty band when it exceeds 10.

        Above ``PENALTY`` the value continues as ``PENALTY (1 + ln(xi^2 / PENALTY))``
        (continuous with a continuous slope); once the mean spin is lost it grows
        linearly with the deficit ``floor - (<K_x> - N_FM)``.
        """
        kx, ky, kz, ky2, kz2, kyz = vals
        vmin, _ = min_quadrature_variance(ky2 - ky * ky, kz2 - kz * kz, kyz - ky * kz)
        vmin = max(vmin, 1e-300)
        denom = kx - n_fm
        floor = LOST_SPIN_THRESHOLD * self.n_spins
        lost = not denom > floor
        xi2 = self.n_spins * vmin / max(denom, floor) ** 2
        if xi2 <= PENALTY and not lost:
            return xi2
        value = PENALTY * (1.0 + np.log(max(xi2, PENALTY) / PENALTY))
        if lost:
            value += (floor - denom) / (0.5 * self.n_spins)
        return float(value)

    @staticmethod
    def _instability_penalty(margins: np.ndarray) -> float:
        return PENALTY + float(np.sum(np.maximum(margins, 0.0)))

    def _segment_rhs(self, H, adjoint=False):
        f = lindblad_adjoint_rhs if adjoint else lindblad_rhs
        return f(H, self.gamma_c, self._profile)

    def _rotor_H(self, hs) -> np.ndarray:
        hs = np.asarray(hs, dtype=float)
        return self._static - hs[..., None, None] * self.ops.Kx

    def _lindblad_step(self, rho, H, adjoint=False):
        post = None if adjoint else hermitize
        return dopri5(self._segment_rhs(H, adjoint), rho, self.dt, rtol=LINDBLAD_RTOL, atol=LINDBLAD_ATOL,
                      batch_ndim=rho.ndim - 2, post_step=post)

    # ---- forward pass -----------------------------------------------------

    def _forward(self, hs: np.ndarray) -> _Forward:
        last = self._last
        if last is not None and np.array_equal(last.hs, hs):
            return last
        margins = self.engine.margin(hs)
        if np.any(margins > 0):
            fw = _Forward(hs.copy(), self._instability_penalty(margins), False)
            self._last = fw
            return fw
        eng = self.engine
        props = eng.propagators(hs, self.dt)
        cov = eng.cov0
        covs = [cov]
        for k in range(hs.size):
            U = props[k]
            cov = U @ cov @ U.conj().swapaxes(-1, -2)
            covs.append(cov)
        n_fm = eng.offset + float(np.einsum("ij,bji->", eng.selector, cov).real)
        if self.gamma_c == 0:
            psi = self.psi0.data
            states = [psi]
            for h in hs:
                psi = self.rotor_prop.unitary(h, self.dt) @ psi
                states.append(psi)
            vals = np.einsum("i,oij,j->o", psi.conj(), self.readout, psi).real
        else:
            rho = self.psi0.density()
            states = [rho]
            for h in hs:
                rho = self._lindblad_step(rho, self._rotor_H(h))
                states.append(rho)
            vals = np.einsum("oij,ji->o", self.readout, rho).real
        fw = _Forward(hs.copy(), self._combine(vals, n_fm), True, states, covs, props)
        self._last = fw
        return fw

    def objective(self, fld) -> float:
        """``xi^2(T)``; infeasible fields return ``10 + distance proxy``."""
        return self._forward(self._hs(fld)).value

    def xi_db(self, fld) -> float:
        return to_db(self.objective(fld))

    # ---- gradient -------------------------------------------------------------

    def gradient(self, fld, delta: float = 1e-4) -> np.ndarray:
        """Central finite differences ``(f(h + d e_k) - f(h - d e_k)) / 2d`` for every segment."""
        hs = self._hs(fld)
        fw = self._forward(hs)
        if not fw.feasible:
            return self._naive_gradient(hs, delta)
        M = hs.size
        hp = np.concatenate([hs + delta, hs - delta])  # perturbed value of segment k (and k again)
        seg = np.concatenate([np.arange(M), np.arange(M)])

        # spin waves
        eng = self.engine
        sel = np.broadcast_to(eng.selector, eng.cov0.shape)
        back = [None] * (M + 1)
        back[M] = sel
        for k in range(M - 1, -1, -1):
            U = fw.sw_props[k]
            back[k] = U.conj().swapaxes(-1, -2) @ back[k + 1] @ U
        # back[k+1] is the selector pulled back to the end of segment k
        pert_margin = self.engine.margin(hp)
        Up = eng.propagators(hp, self.dt)
        n_fm = np.empty(2 * M)
        for i in range(2 * M):
            k = seg[i]
            c = Up[i] @ fw.sw_covs[k] @ Up[i].conj().swapaxes(-1, -2)
            n_fm[i] = eng.offset + np.einsum("bij,bji->", back[k + 1], c).real

        # rotor
        vals = self._rotor_perturbed(fw, hp, seg)

        base_margins = self.engine.margin(hs)
        fvals = np.empty(2 * M)
        for i in range(2 * M):
            if pert_margin[i] > 0:
                m = base_margins.copy()
                m[seg[i]] = pert_margin[i]
                fvals[i] = self._instability_penalty(m)
            else:
                fvals[i] = self._combine(vals[i], n_fm[i])
        return (fvals[:M] - fvals[M:]) / (2 * delta)

    def _rotor_perturbed(self, fw: _Forward, hp: np.ndarray, seg: np.ndarray) -> np.ndarray:
        M = self.n_segments
        R = self.readout
        if self.gamma_c == 0:
            # Heisenberg-picture read-outs at the end of every segment
            back = [None] * (M + 1)
            back[M] = R
            for k in range(M - 1, -1, -1):
                U = self.rotor_prop.unitary(fw.hs[k], self.dt)
                back[k] = U.conj().T @ back[k + 1] @ U
            Up = self.rotor_prop.unitary_batch(hp, self.dt)
            psi_in = np.array([fw.rotor_states[k] for k in seg])
            psi = np.einsum("bij,bj->bi", Up, psi_in)
            ops = np.array([back[k + 1] for k in seg])
            return np.einsum("bi,boij,bj->bo", psi.conj(), ops, psi).real
        back = [None] * (M + 1)
        back[M] = R.astype(complex)
        for k in range(M - 1, -1, -1):
            back[k] = self._lindblad_step(back[k + 1], self._rotor_H(fw.hs[k])[None], adjoint=True)
        rho_in = np.array([fw.rotor_states[k] for k in seg])
        rho = self._lindblad_step(rho_in, self._rotor_H(hp))
        ops = np.array([back[k + 1] for k in seg])
        return np.einsum("boij,bji->bo", ops, rho).real

    def _naive_gradient(self, hs: np.ndarray, delta: float) -> np.ndarray:
        g = np.empty(hs.size)
        for k in range(hs.size):
            e = np.zeros(hs.size)
            e[k] = delta
            g[k] = (self._forward(hs + e).value - self._forward(hs - e).value) / (2 * delta)
        return g

    def value_and_gradient(self, fld, delta: float = 1e-4):
        hs = self._hs(fld)
        f = self._forward(hs).value
        return f, self.gradient(hs, delta)

    # ---- trajectories ----------------------------------------------------------

    def rotor_trajectory(self, fld, substeps: int = 1):
        f = fld if isinstance(fld, ControlField) else self.make_field(fld)
        if self.gamma_c == 0:
            return evolve_unitary(self.psi0, self.ham, f, substeps, propagator=self.rotor_prop)
        return evolve_lindblad_collective(self.psi0, self.ham, f, self.gamma_c, substeps,
                                          rtol=LINDBLAD_RTOL, atol=LINDBLAD_ATOL)

    def spinwave_trajectory(self, fld, substeps: int = 1) -> list[SpinWaveState]:
        f = fld if isinstance(fld, ControlField) else self.make_field(fld)
        eng = self.engine
        margins = eng.margin(f.segments)
        if np.any(margins > 0):
            raise DynamicalInstabilityError("spin-wave sector unstable for this field", float(margins.max()))
        cov = eng.cov0
        out = [cov]
        for h in f.segments:
            U = eng.propagators(np.array([h]), f.dt / substeps)[0]
            Ud = U.conj().swapaxes(-1, -2)
            for _ in range(substeps):
                cov = U @ cov @ Ud
                out.append(cov)
        if isinstance(eng, _PbcEngine):
            return [SpinWaveState(SpinWaveKind.PBC_MODES, c, float(c[:, 1, 1].real.sum())) for c in out]
        return [SpinWaveState.from_covariance(c[0] + eng.dyn.cov_remain) for c in out]

    def trajectory(self, fld, substeps: int = 1) -> dict:
        """Observables along the schedule at ``fld.sample_times(substeps)``.

        Keys: ``t, xi_squared, xi_db, mean_spin, s_squared, n_fm, h``. ``mean_spin``
        is ``|<S>| / S_max`` and ``s_squared`` is ``<S^2> / (S_max (S_max + 1))``;
        ``xi`` entries are NaN where the mean spin is lost.
        """
        f = fld if isinstance(fld, ControlField) else self.make_field(fld)
        rt = self.rotor_trajectory(f, substeps)
        sw = self.spinwave_trajectory(f, substeps)
        n = self.n_spins
        smax = n / 2
        t = f.sample_times(substeps)
        out = {k: np.empty(t.size) for k in ("xi_squared", "xi_db", "mean_spin", "s_squared", "n_fm")}
        for i in range(t.size):
            rs = rt[i]
            mom = rotor_moments(rs, self.ops)
            nfm = sw[i].n_fm
            try:
                xi2 = rsw_squeezing_from_moments(mom, nfm, n).xi_squared
            except LostMeanSpinError:
                xi2 = np.nan
            out["xi_squared"][i] = xi2
            out["xi_db"][i] = to_db(xi2) if np.isfinite(xi2) else np.nan
            sx = mom.mean[0] - nfm
            out["mean_spin"][i] = np.sqrt(sx**2 + mom.mean[1] ** 2 + mom.mean[2] ** 2) / smax
            out["s_squared"][i] = total_spin_squared(rs, sw[i], n).value / (smax * (smax + 1))
            out["n_fm"][i] = nfm
        out["t"] = t
        out["h"] = f.value_at(np.minimum(t, np.nextafter(f.total_time, 0)))
        return out


# --------------------------------------------------------------------------
# optimizer


@dataclass(frozen=True)
class OptimizerOptions:
    """BFGS settings. ``n_random_starts`` random seeds come after the zero field and
    the constant ``positive_seed`` field; start ``i`` draws from ``default_rng([seed, i])``."""

    max_iter: int = 200
    gtol: float = 1e-6
    ftol: float = 1e-12
    delta: float = 1e-4
    c1: float = 1e-4
    shrink: float = 0.5
    max_line_search: int = 40
    n_random_starts: int = 8
    seed: int = 0
    positive_seed: float = 0.5
    random_scale: float = 1.0
    include_deterministic: bool = True
    threads: int = 1


@dataclass(frozen=True)
class StartResult:
    index: int
    label: str
    best_segments: np.ndarray = field(repr=False)
    best_value: float = np.inf
    history: list = field(default_factory=list, repr=False)
    gradient_norm: float = np.nan
    n_evaluations: int = 0
    converged: bool = False
    message: str = ""

    def to_json(self) -> dict:
        return {
            "index": self.index, "label": self.label, "best_segments": [float(x) for x in self.best_segments],
            "best_value": float(self.best_value), "history": [float(x) for x in self.history],
            "gradient_norm": float(self.gradient_norm), "n_evaluations": int(self.n_evaluations),
            "converged": bool(self.converged), "message": self.message,
        }

    @classmethod
    def from_json(cls, d: dict) -> "StartResult":
        return cls(d["index"], d["label"], np.array(d["best_segments"], dtype=float), d["best_value"],
                   list(d["history"]), d["gradient_norm"], d["n_evaluations"], d["converged"], d["message"])


@dataclass(frozen=True)
class OptimizationResult:
    best_field: ControlField
    xi_squared_opt: float
    xi_db_opt: float
    objective_history: list = field(repr=False)
    gradient_norm_final: float = np.nan
    n_evaluations: int = 0
    converged: bool = False
    best_start: int = 0
    starts: list = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        return {
            "best_field": {"total_time": self.best_field.total_time,
                           "segments": [float(x) for x in self.best_field.segments]},
            "xi_squared_opt": float(self.xi_squared_opt),
            "xi_db_opt": float(self.xi_db_opt),
            "objective_history": [float(x) for x in self.objective_history],
            "gradient_norm_final": float(self.gradient_norm_final),
            "n_evaluations": int(self.n_evaluations),
            "converged": bool(self.converged),
            "best_start": int(self.best_start),
            "starts": [s.to_json() for s in self.starts],
        }


def _start_fields(problem: SqueezingProblem, opts: OptimizerOptions, initial=None):
    M = problem.n_segments
    seeds = []
    if initial is not None:
        seeds.append(("initial", problem._hs(initial)))
    if opts.include_deterministic:
        seeds.append(("zero", np.zeros(M)))
        seeds.append(("positive", np.full(M, opts.positive_seed)))
    for i in range(opts.n_random_starts):
        rng = np.random.default_rng([opts.seed, i])
        seeds.append((f"random-{i}", rng.uniform(-opts.random_scale, opts.random_scale, M)))
    return seeds


def _projected_gradient(x, g, lo, hi):
    pg = g.copy()
    pg[(x <= lo) & (g > 0)] = 0.0
    pg[(x >= hi) & (g < 0)] = 0.0
    return pg


def bfgs(problem: SqueezingProblem, x0: np.ndarray, opts: OptimizerOptions, index: int = 0,
         label: str = "") -> StartResult:
    """Box-projected BFGS with Armijo backtracking from ``x0``; keeps the best iterate."""
    lo, hi = -problem.h_max, problem.h_max
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    n_eval = 1
    f = problem.objective(x)
    if not np.isfinite(f):
        raise FloatingPointError(f"objective is not finite at the initial point ({f})")
    g = problem.gradient(x, opts.delta)
    n_eval += 2 * x.size
    Hinv = np.eye(x.size)
    history = [f]
    best_x, best_f = x.copy(), f
    converged, message = False, "maximum iterations reached"
    first = True
    for _ in range(opts.max_iter):
        pg = _projected_gradient(x, g, lo, hi)
        if np.linalg.norm(pg) < opts.gtol:
            converged, message = True, "projected gradient below tolerance"
            break
        d = -Hinv @ g
        if g @ d >= 0:
            Hinv = np.eye(x.size)
            d = -g
        if first:
            d = d * min(1.0, 1.0 / np.linalg.norm(d))
        step, accepted = 1.0, False
        for _ in range(opts.max_line_search):
            xn = np.clip(x + step * d, lo, hi)
            s = xn - x
            if not np.any(s):
                break
            fn = problem.objective(xn)
            n_eval += 1
            if np.isfinite(fn) and fn < f and fn <= f + opts.c1 * (g @ s):
                accepted = True
                break
            step *= opts.shrink
        if not accepted:
            message = "line search failed"
            converged = np.linalg.norm(pg) < 10 * opts.gtol
            break
        gn = problem.gradient(xn, opts.delta)
        n_eval += 2 * x.size
        y = gn - g
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if first:
                Hinv = np.eye(x.size) * (sy / (y @ y))
            rho = 1.0 / sy
            V = np.eye(x.size) - rho * np.outer(s, y)
            Hinv = V @ Hinv @ V.T + rho * np.outer(s, s)
        first = False
        df = f - fn
        x, f, g = xn, fn, gn
        history.append(f)
        if f < best_f:
            best_x, best_f = x.copy(), f
        if df <= opts.ftol * max(1.0, abs(f)):
            converged, message = True, "objective change below tolerance"
            break
    gnorm = float(np.linalg.norm(_projected_gradient(x, g, lo, hi)))
    return StartResult(index, label, best_x, float(best_f), history, gnorm, n_eval, bool(converged), message)


def _clone(problem: SqueezingProblem) -> SqueezingProblem:
    """Independent evaluator sharing the immutable set-up (for concurrent starts)."""
    p = object.__new__(SqueezingProblem)
    p.__dict__.update(problem.__dict__)
    p._last = None
    return p


def optimize(problem: SqueezingProblem, initial: ControlField | None = None,
             options: OptimizerOptions | None = None, checkpoint: str | os.PathLike | None = None) -> OptimizationResult:
    """Multi-start BFGS; returns the best iterate visited over all starts.

    With ``checkpoint`` set, finished starts are written to that JSON file after
    each start and are skipped when the same file is found on a later call.
    """
    opts = options or OptimizerOptions()
    starts = _start_fields(problem, opts, initial)
    if not starts:
        raise ValueError("no starting fields")
    done: dict[int, StartResult] = {}
    if checkpoint is not None and os.path.exists(checkpoint):
        with open(checkpoint, encoding="utf-8") as fh:
            saved = json.load(fh)
        for d in saved.get("starts", []):
            r = StartResult.from_json(d)
            if r.index < len(starts) and r.label == starts[r.index][0]:
                done[r.index] = r

    def run(i):
        label, x0 = starts[i]
        return bfgs(_clone(problem), x0, opts, i, label)

    todo = [i for i in range(len(starts)) if i not in done]
    if opts.threads > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=opts.threads) as pool:
            for r in pool.map(run, todo):
                done[r.index] = r
                _write_checkpoint(checkpoint, done)
    else:
        for i in todo:
            done[i] = run(i)
            log.info("start %s (%s): xi2=%.6g", i, done[i].label, done[i].best_value)
            _write_checkpoint(checkpoint, done)

    results = [done[i] for i in range(len(starts))]
    best = min(results, key=lambda r: (r.best_value, r.index))
    best_field = problem.make_field(best.best_segments)
    value = problem.objective(best_field)
    return OptimizationResult(
        best_field=best_field, xi_squared_opt=value, xi_db_opt=to_db(value),
        objective_history=best.history, gradient_norm_final=best.gradient_norm,
        n_evaluations=sum(r.n_evaluations for r in results), converged=best.converged,
        best_start=best.index, starts=results,
    )


def _write_checkpoint(path, done: dict) -> None:
    if path is None:
        return
    payload = {"starts": [done[i].to_json() for i in sorted(done)]}
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
    os.replace(tmp, path)


# --------------------------------------------------------------------------
# crossover with the TAT benchmark


def crossover_time_fit(sizes, t_tat_values) -> tuple[float, float]:
    """Least-squares line ``t_TAT = slope * N + intercept``."""
    x = np.asarray(sizes, dtype=float)
    y = np.asarray(t_tat_values, dtype=float)
    if x.size != y.size:
        raise ValueError("sizes and times differ in length")
    if x.size < 2:
        raise ValueError("need at least two points")
    if np.ptp(x) == 0:
        raise ValueError("all sizes are equal; the fit is degenerate")
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(slope), float(intercept)


def crossover_time(times, xi_squared_opt, xi_squared_tat: float) -> float:
    """First ``T`` where the optimized ``xi^2(T)`` drops below the TAT minimum.

    Linear interpolation in dB between the bracketing samples; NaN if never.
    """
    t = np.asarray(times, dtype=float)
    db = -10 * np.log10(np.asarray(xi_squared_opt, dtype=float))
    target = -10 * np.log10(xi_squared_tat)
    above = db > target
    if not above.any():
        return float("nan")
    k = int(np.argmax(above))
    if k == 0:
        return float(t[0])
    return float(t[k - 1] + (target - db[k - 1]) * (t[k] - t[k - 1]) / (db[k] - db[k - 1]))


# --------------------------------------------------------------------------
# collective-dephasing sweep


def uncontrolled_reference(problem: SqueezingProblem, substeps: int = 4) -> dict:
    """``h = 0`` squeezing at ``T`` and the best value reached at any ``t <= T`` (in dB)."""
    tr = problem.trajectory(np.zeros(problem.n_segments), substeps)
    db = tr["xi_db"]
    end = db[-1] if np.isfinite(db[-1]) else -np.inf
    return {"xi_db_end": float(end), "xi_db_best": float(np.nanmax(db)),
            "t_best": float(tr["t"][int(np.nanargmax(db))])}


def dephasing_sweep(lattice: LatticeSpec, gammas, total_times, n_segments: int = 64,
                    options: OptimizerOptions | None = None, h_max: float = 10.0,
                    refine_iter: int = 60) -> list[dict]:
    """Optimized ``xi^2`` versus collective dephasing rate for several ``T``.

    For each ``T`` the first rate gets a full multi-start. The other rates are
    reached by continuation, first upward then downward in ``gamma``, each
    warm-started from its neighbour's optimum; the better of the two passes
    is kept.
    """
    opts = options or OptimizerOptions()
    gammas = [float(g) for g in gammas]
    if any(g < 0 for g in gammas):
        raise ValueError("dephasing rates must be >= 0")
    warm = OptimizerOptions(**{**opts.__dict__, "n_random_starts": 0, "max_iter": refine_iter,
                               "include_deterministic": False})
    rows = []
    for T in total_times:
        problems = [SqueezingProblem(lattice, T, n_segments, g, h_max) for g in gammas]
        best: list[OptimizationResult | None] = [None] * len(gammas)
        best[0] = optimize(problems[0], options=opts)
        order = list(range(1, len(gammas))) + list(range(len(gammas) - 2, -1, -1))
        prev = 0
        for i in order:
            res = optimize(problems[i], initial=best[prev].best_field, options=warm)
            if best[i] is None or res.xi_squared_opt < best[i].xi_squared_opt:
                best[i] = res
            prev = i
        for g, p, r in zip(gammas, problems, best):
            ref = uncontrolled_reference(p)
            rows.append({
                "gamma_c": g, "total_time": float(T), "xi_squared_opt": r.xi_squared_opt,
                "xi_db_opt": r.xi_db_opt, "xi_db_uncontrolled_end": ref["xi_db_end"],
                "xi_db_uncontrolled_best": ref["xi_db_best"], "best_field": r.best_field,
            })
    return rows
