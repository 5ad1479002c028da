"""Coordinate-wise simulated annealing in the style of Corana et al. (1987)
and Goffe et al. (1994).

The building blocks here (proposal, Metropolis test, step adaptation,
cooling, stopping rule) are shared by the full mixture solver, the
per-subject fits and the D-function maximization. :func:`anneal` is a
complete minimizer for an arbitrary box-constrained energy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

STEP_FACTOR = 2.0  # Corana's c
ACCEPT_LOW = 0.4
ACCEPT_HIGH = 0.6


@dataclass(frozen=True)
class SAConfig:
    t0: float = 60.0
    rt: float = 0.85
    ns: int = 20
    nt: int = 10
    eps: float = 1e-4
    n_eps: int = 4
    seed: int = 0
    max_cycles: int = 500

    def __post_init__(self):
        if not self.t0 > 0:
            raise ValueError("t0 must be positive")
        if not 0 < self.rt < 1:
            raise ValueError("rt must lie in (0, 1)")
        if min(self.ns, self.nt, self.n_eps, self.max_cycles) < 1:
            raise ValueError("ns, nt, n_eps and max_cycles must be >= 1")
        if not self.eps > 0:
            raise ValueError("eps must be positive")


def propose_coordinate(value: float, step: float, lower: float, upper: float, rng: np.random.Generator) -> float:
    """value + u * step with u ~ U[-1, 1]; out-of-bounds draws are replaced
    by a uniform draw on [lower, upper]."""
    x = value + (2.0 * rng.random() - 1.0) * step
    if x < lower or x > upper:
        x = lower + (upper - lower) * rng.random()
    return x


def acceptance_probability(loglik_old: float, loglik_new: float, n: int, temperature: float) -> float:
    if loglik_new == -math.inf:
        return 0.0
    if loglik_new >= loglik_old:
        return 1.0
    return math.exp((loglik_new - loglik_old) / (n * temperature))


def metropolis_accept(loglik_old: float, loglik_new: float, n: int, temperature: float, rng: np.random.Generator) -> bool:
    """Accept with probability min(1, exp((lnL_new - lnL_old) / (n T))).

    A uniform number is drawn only when the move is downhill.
    """
    if loglik_new == -math.inf:
        return False
    if loglik_new >= loglik_old:
        return True
    return rng.random() <= math.exp((loglik_new - loglik_old) / (n * temperature))


def adjust_steps(accepted, attempts, steps, lower, upper, c: float = STEP_FACTOR) -> np.ndarray:
    """Corana step update toward a 40-60% acceptance ratio, capped at the
    bound width. Coordinates without attempts keep their step."""
    accepted = np.asarray(accepted, dtype=float)
    attempts = np.asarray(attempts, dtype=float)
    steps = np.array(steps, dtype=float)
    width = np.asarray(upper, dtype=float) - np.asarray(lower, dtype=float)
    tried = attempts > 0
    ratio = np.where(tried, accepted / np.where(tried, attempts, 1.0), 0.5)
    hi = ratio > ACCEPT_HIGH
    lo = ratio < ACCEPT_LOW
    steps[hi] *= 1.0 + c * (ratio[hi] - ACCEPT_HIGH) / ACCEPT_LOW
    steps[lo] /= 1.0 + c * (ACCEPT_LOW - ratio[lo]) / ACCEPT_LOW
    return np.minimum(steps, width)


def cool(temperature: float, rt: float) -> float:
    return rt * temperature


def check_stop(history: Sequence[float], current_final: float, best: float, eps: float, n_eps: int | None = None) -> bool:
    """True when the current cycle's final energy is within ``eps`` of each
    of the last ``n_eps`` cycles' finals and of the best energy."""
    n_eps = len(history) if n_eps is None else n_eps
    if n_eps < 1 or len(history) < n_eps:
        return False
    recent = history[-n_eps:]
    if any(not abs(current_final - h) < eps for h in recent):
        return False
    return abs(current_final - best) < eps


@dataclass
class SAState:
    x: np.ndarray
    energy: float
    best_x: np.ndarray
    best_energy: float
    steps: np.ndarray
    temperature: float
    accepted: np.ndarray
    attempts: np.ndarray
    history: list[float] = field(default_factory=list)

    @classmethod
    def start(cls, x0, energy, steps, temperature):
        x0 = np.array(x0, dtype=float)
        d = x0.size
        return cls(x0, energy, x0.copy(), energy, np.array(steps, dtype=float), temperature, np.zeros(d), np.zeros(d))

    def offer_best(self):
        if self.energy < self.best_energy:
            self.best_energy = self.energy
            self.best_x = self.x.copy()

    def restart_from_best(self):
        self.x = self.best_x.copy()
        self.energy = self.best_energy


@dataclass
class CycleRecord:
    cycle: int
    temperature: float
    final_energy: float
    best_energy: float
    evaluations: int


@dataclass
class AnnealResult:
    x: np.ndarray
    energy: float
    n_evals: int
    cycles: int
    converged: bool
    trace: list[CycleRecord]


def anneal(
    energy_fn: Callable[[np.ndarray], float],
    x0,
    lower,
    upper,
    config: SAConfig = SAConfig(),
    rng: np.random.Generator | None = None,
    steps0=None,
) -> AnnealResult:
    """Minimize ``energy_fn`` over the box [lower, upper].

    Each sweep proposes every coordinate once in a freshly shuffled order.
    Steps adapt after ``ns`` sweeps; after ``nt`` adaptations the stopping
    rule is tested and, failing it, the temperature drops by ``rt`` and the
    walk restarts from the best point seen. Coordinates with zero bound
    width are never proposed.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    x0 = np.clip(np.asarray(x0, dtype=float), lower, upper)
    width = upper - lower
    steps = width.copy() if steps0 is None else np.minimum(np.asarray(steps0, dtype=float), width)
    free = np.flatnonzero(width > 0)

    n_evals = 1
    state = SAState.start(x0, float(energy_fn(x0)), steps, config.t0)
    trace: list[CycleRecord] = []
    converged = False
    for cycle in range(config.max_cycles):
        for _ in range(config.nt):
            state.accepted[:] = 0
            state.attempts[:] = 0
            for _ in range(config.ns):
                for j in free[rng.permutation(free.size)]:
                    trial = state.x.copy()
                    trial[j] = propose_coordinate(state.x[j], state.steps[j], lower[j], upper[j], rng)
                    e_new = float(energy_fn(trial))
                    n_evals += 1
                    state.attempts[j] += 1
                    if metropolis_accept(-state.energy, -e_new, 1, state.temperature, rng):
                        state.x, state.energy = trial, e_new
                        state.accepted[j] += 1
                        state.offer_best()
            state.steps = adjust_steps(state.accepted, state.attempts, state.steps, lower, upper)
        trace.append(CycleRecord(cycle, state.temperature, state.energy, state.best_energy, n_evals))
        if check_stop(state.history, state.energy, state.best_energy, config.eps, config.n_eps):
            converged = True
            break
        state.history.append(state.energy)
        state.temperature = cool(state.temperature, config.rt)
        state.restart_from_best()
    return AnnealResult(state.best_x.copy(), state.best_energy, n_evals, len(trace), converged, trace)
