"""Adaptive Dormand-Prince 5(4) integration for autonomous linear ODEs.

The state may carry leading batch axes; all batch members share one step
size and the error norm is the maximum over the batch, so a batch of
independent density matrices is advanced in lock-step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class IntegrationError(RuntimeError):
    """Raised when the adaptive step size underflows."""


# Dormand & Prince (1980) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


@dataclass
class StepStats:
    accepted: int = 0
    rejected: int = 0
    last_step: float | None = None


def dopri5(f, y0, duration, *, rtol=1e-8, atol=1e-10, batch_ndim=0, h0=None,
           min_step=1e-14, post_step=None, stats: StepStats | None = None):
    """Integrate ``dy/dt = f(y)`` over ``[0, duration]``.

    Parameters
    ----------
    f : callable
        Right-hand side, must accept and return arrays shaped like ``y0``.
    batch_ndim : int
        Number of leading axes of ``y0`` that index independent systems.
    h0 : float, optional
        Initial step; defaults to the previous step recorded in ``stats`` or a
        norm-based guess.
    post_step : callable, optional
        Applied to every accepted state (e.g. Hermitian symmetrisation).
    """
    y = np.array(y0, copy=True)
    if duration == 0:
        return y
    if stats is None:
        stats = StepStats()
    red_axes = tuple(range(batch_ndim, y.ndim))

    def err_norm(err, ya, yb):
        scale = atol + rtol * np.maximum(np.abs(ya), np.abs(yb))
        r = np.sqrt(np.mean(np.abs(err / scale) ** 2, axis=red_axes))
        return float(np.max(r))

    k1 = f(y)
    if h0 is None:
        h0 = stats.last_step
    if h0 is None:
        d0 = err_norm(y, y, y)
        d1 = err_norm(k1, y, y)
        h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h = min(float(h0), duration)
    t = 0.0
    while t < duration:
        if h < min_step * max(1.0, duration):
            raise IntegrationError(f"step size underflow at t={t:.3e} (h={h:.3e})")
        last = t + h >= duration * (1 - 1e-13)
        if last:
            h = duration - t
        ks = [k1]
        for s in range(1, 7):
            incr = sum(a * ks[j] for j, a in enumerate(_A[s]) if a != 0.0)
            ks.append(f(y + h * incr))
        y_new = y + h * sum(b * k for b, k in zip(_B5, ks) if b != 0.0)
        err = h * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
        en = err_norm(err, y, y_new)
        if en <= 1.0:
            t = duration if last else t + h
            y = y_new if post_step is None else post_step(y_new)
            k1 = ks[6] if post_step is None else f(y)
            stats.accepted += 1
            if not last:
                stats.last_step = h
            fac = 5.0 if en == 0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
            h *= fac
        else:
            stats.rejected += 1
            h *= max(0.2, 0.9 * en ** -0.2)
    return y
