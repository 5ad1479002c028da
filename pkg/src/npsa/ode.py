"""Explicit adaptive Runge-Kutta integration with dosing events.

Dormand-Prince 5(4) pair with a PI step-size controller. State jumps
(bolus doses) and piecewise-constant input rates (infusions) are handled
by splitting the time axis at every event and output time; a step never
crosses one of these breakpoints.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DEFAULT_ATOL = 1e-4
DEFAULT_RTOL = 1e-4

# Dormand-Prince 5(4) tableau
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
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# fifth-order weights minus embedded fourth-order weights
_E = np.array(
    [
        71 / 57600,
        0.0,
        -71 / 16695,
        71 / 1920,
        -17253 / 339200,
        22 / 525,
        -1 / 40,
    ]
)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_ALPHA = 0.17  # PI controller exponents (Hairer & Wanner)
_BETA = 0.04


class ODEError(RuntimeError):
    """Integration failed (step underflow, too many steps or non-finite rhs)."""


@dataclass(frozen=True)
class JumpEvent:
    """Instantaneous addition of ``amount`` to state component ``index``."""

    time: float
    index: int
    amount: float


@dataclass(frozen=True)
class RateEvent:
    """Constant input ``rate`` into component ``index`` on [start, stop)."""

    start: float
    stop: float
    index: int
    rate: float


@dataclass
class IntegrationProblem:
    rhs: Callable[[float, np.ndarray], np.ndarray]
    y0: Sequence[float]
    output_times: Sequence[float]
    jumps: Sequence[JumpEvent] = ()
    rates: Sequence[RateEvent] = ()
    t0: float = 0.0
    atol: float = DEFAULT_ATOL
    rtol: float = DEFAULT_RTOL
    max_steps: int = 100_000

    def __post_init__(self):
        if not (self.atol > 0 and self.rtol > 0):
            raise ValueError("atol and rtol must be positive")
        out = np.asarray(self.output_times, dtype=float)
        if out.ndim != 1 or np.any(np.diff(out) < 0):
            raise ValueError("output times must be a non-decreasing vector")
        if out.size and out[0] < self.t0:
            raise ValueError("output times precede t0")
        for ev in self.jumps:
            if not np.isfinite(ev.time):
                raise ValueError("event times must be finite")
        for ev in self.rates:
            if not (np.isfinite(ev.start) and np.isfinite(ev.stop)) or ev.stop < ev.start:
                raise ValueError("rate windows must be finite with stop >= start")


def _initial_step(f, t, y, f0, atol, rtol, span):
    scale = atol + np.abs(y) * rtol
    d0 = np.sqrt(np.mean((y / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, span)
    y1 = y + h0 * f0
    f1 = f(t + h0, y1)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, span)


def integrate(problem: IntegrationProblem) -> np.ndarray:
    """Integrate ``problem`` and return the state at each output time.

    Jumps scheduled at an output time are applied before that output is
    recorded. Returns an array of shape (len(output_times), len(y0)).
    """
    y = np.array(problem.y0, dtype=float)
    out_times = np.asarray(problem.output_times, dtype=float)
    result = np.empty((out_times.size, y.size))
    t0 = float(problem.t0)
    if out_times.size == 0:
        return result

    t_end = float(out_times[-1])
    breaks = {t0, t_end}
    breaks.update(float(t) for t in out_times)
    for ev in problem.jumps:
        if t0 <= ev.time <= t_end:
            breaks.add(float(ev.time))
    for ev in problem.rates:
        for t in (ev.start, ev.stop):
            if t0 <= t <= t_end:
                breaks.add(float(t))
    breaks = sorted(breaks)

    jumps_at: dict[float, list[JumpEvent]] = {}
    for ev in problem.jumps:
        jumps_at.setdefault(float(ev.time), []).append(ev)

    def apply_jumps(t, y):
        for ev in jumps_at.get(t, ()):
            y[ev.index] += ev.amount

    def record(t, y):
        for i in np.flatnonzero(out_times == t):
            result[i] = y

    n_steps = 0
    h = None
    atol, rtol = problem.atol, problem.rtol
    for seg, t_a in enumerate(breaks):
        apply_jumps(t_a, y)
        record(t_a, y)
        if seg + 1 == len(breaks):
            break
        t_b = breaks[seg + 1]

        u = np.zeros_like(y)
        for ev in problem.rates:
            if ev.start <= t_a < ev.stop:
                u[ev.index] += ev.rate

        def f(t, y, _u=u):
            dy = np.asarray(problem.rhs(t, y), dtype=float) + _u
            if not np.all(np.isfinite(dy)):
                raise ODEError(f"non-finite derivative at t={t!r}")
            return dy

        t = t_a
        k1 = f(t, y)
        if h is None:
            h = _initial_step(f, t, y, k1, atol, rtol, t_end - t0)
        err_prev = 1e-4
        while t < t_b:
            if n_steps >= problem.max_steps:
                raise ODEError("maximum number of steps exceeded")
            last = h >= t_b - t
            h_step = t_b - t if last else h
            if h_step <= 16 * np.finfo(float).eps * max(1.0, abs(t)):
                raise ODEError(f"step size underflow at t={t!r}")
            k = [k1]
            for s in range(1, 7):
                ys = y + h_step * np.dot(_A[s], k[:s])
                k.append(f(t + _C[s] * h_step, ys))
            y_new = y + h_step * np.dot(_B[:6], k[:6])
            err_vec = h_step * np.dot(_E, k)
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err = float(np.max(np.abs(err_vec) / scale))
            n_steps += 1
            if err <= 1.0:
                t = t_b if last else t + h_step
                y = y_new
                k1 = k[6]
                if err == 0.0:
                    factor = _MAX_FACTOR
                else:
                    factor = _SAFETY * err**-_ALPHA * err_prev**_BETA
                    factor = min(_MAX_FACTOR, max(_MIN_FACTOR, factor))
                err_prev = max(err, 1e-4)
                h = h_step * factor
            else:
                factor = max(_MIN_FACTOR, _SAFETY * err**-0.2)
                h = h_step * factor
    return result
