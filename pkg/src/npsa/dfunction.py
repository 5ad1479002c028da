"""Fedorov's D function as a global-optimality check.

For a candidate phi with mixture sums N_i,

    D(theta, phi) = sum_i p(Y_i | beta, theta) / N_i - n
    D(phi)        = n * ln(1 + max_theta D(theta, phi) / n)

and ln L(phi_ML) - ln L(phi) <= D(phi). The bound only holds if the inner
maximum is actually found; an under-maximized inner problem understates D.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .anneal import SAConfig, anneal
from .likelihood import CellEvaluator
from .models import Model
from .types import Bounds, Candidate, Subject

DEFAULT_INNER = SAConfig(t0=10.0, rt=0.7, ns=20, nt=5, eps=1e-6, n_eps=4)
RANDOM_SEEDS_PER_DIM = 20


@dataclass
class DResult:
    value: float
    max_d_theta: float
    theta_max: np.ndarray
    loglik: float
    n_evals: int
    converged: bool

    @property
    def relative(self) -> float:
        """D(phi) / |ln L|."""
        return self.value / abs(self.loglik) if self.loglik != 0 else math.inf

    @property
    def percent(self) -> float:
        return 100.0 * self.relative


def d_phi_from_max(max_d: float, n: int) -> float:
    return n * math.log1p(max_d / n)


def cached_sums(evaluator: CellEvaluator, candidate: Candidate) -> np.ndarray:
    matrix = evaluator.matrix(candidate, count=False)
    if np.any(~(matrix.row_mix > 0)):
        raise ValueError("zero mixture likelihood N_i for some subject")
    return matrix.row_mix


def d_theta_many(evaluator: CellEvaluator, points, candidate: Candidate, N: np.ndarray) -> np.ndarray:
    """D(theta, phi) for each row of ``points``."""
    values, _ = evaluator.columns(points, candidate.beta, candidate.sigma)
    return (values / N[:, None]).sum(axis=0) - values.shape[0]


def d_theta(theta, model: Model, subjects: Sequence[Subject], candidate: Candidate, cached_Ni=None) -> float:
    with CellEvaluator(model, subjects) as ev:
        N = cached_sums(ev, candidate) if cached_Ni is None else np.asarray(cached_Ni, dtype=float)
        if np.any(~(N > 0)):
            raise ValueError("zero mixture likelihood N_i for some subject")
        return float(d_theta_many(ev, np.atleast_2d(theta), candidate, N)[0])


def weighted_d_sum(model: Model, subjects: Sequence[Subject], candidate: Candidate) -> float:
    """sum_k w_k D(mu_k, phi); zero up to rounding for any candidate."""
    with CellEvaluator(model, subjects) as ev:
        matrix = ev.matrix(candidate, count=False)
        d = (matrix.values / matrix.row_mix[:, None]).sum(axis=0) - matrix.shape[0]
        return float(d @ matrix.weights)


def d_phi(
    model: Model,
    subjects: Sequence[Subject],
    candidate: Candidate,
    bounds: Bounds | None = None,
    config: SAConfig = DEFAULT_INNER,
    n_random: int | None = None,
    workers: int = 1,
) -> DResult:
    """Maximize D(theta, phi) by annealing and return the bound D(phi).

    The inner search is seeded with every support point of the candidate
    (which guarantees a maximum >= 0) plus ``n_random`` uniform draws; the
    annealing run starts from the best seed. Beta and sigma stay at the
    candidate's values.
    """
    bounds = bounds if bounds is not None else model.default_bounds()
    if bounds is None:
        raise ValueError(f"model {model.name!r} has no default bounds; supply them")
    lo, hi = bounds.mu_lower, bounds.mu_upper
    rng = np.random.default_rng(config.seed)
    n_random = RANDOM_SEEDS_PER_DIM * lo.size if n_random is None else n_random
    with CellEvaluator(model, subjects, workers) as ev:
        n = ev.n
        N = cached_sums(ev, candidate)
        seeds = np.vstack([candidate.distribution.points, lo + (hi - lo) * rng.random((n_random, lo.size))])
        seed_d = d_theta_many(ev, seeds, candidate, N)
        start = int(np.argmax(seed_d))

        def energy(theta):
            return -float(d_theta_many(ev, theta[None, :], candidate, N)[0]) / n

        res = anneal(energy, seeds[start], lo, hi, config, rng=rng)
        best_d = -res.energy * n
        theta_max = res.x
        if seed_d[start] > best_d:
            best_d, theta_max = float(seed_d[start]), seeds[start]
        n_evals = ev.n_evals
        loglik = float(np.sum(np.log(N)))
    if not res.converged:
        warnings.warn("inner D maximization did not converge; D(phi) may be understated", RuntimeWarning)
    # the seeds make the true maximum >= 0; clip rounding noise below zero
    best_d = max(best_d, 0.0)
    return DResult(d_phi_from_max(best_d, n), best_d, np.asarray(theta_max), loglik, n_evals, res.converged)
