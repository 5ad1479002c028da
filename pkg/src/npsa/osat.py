"""One-subject-at-a-time fitting (OSAT).

Each subject gets its own annealing run for a single support point with
beta held fixed. The n resulting points are pooled and only then are the
mixture weights optimized, so the model cost grows linearly in n (plus one
n x n matrix build for the weights).
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .anneal import SAConfig, anneal
from .likelihood import CellEvaluator
from .models import Model
from .solver import NPSAResult
from .types import Bounds, Candidate, DiscreteDistribution, Subject, validate_dataset
from .weights import optimize_weights


class SubjectFitError(RuntimeError):
    pass


@dataclass
class SubjectFit:
    subject_id: str
    theta: np.ndarray
    loglik: float
    n_evals: int
    cycles: int
    converged: bool


def subject_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def fit_subject(
    model: Model,
    subject: Subject,
    beta=None,
    sigma: float | None = None,
    bounds: Bounds | None = None,
    config: SAConfig = SAConfig(),
    rng: np.random.Generator | None = None,
) -> SubjectFit:
    """Maximize ln p(Y_i | beta, theta) over theta inside ``bounds``."""
    bounds = bounds if bounds is not None else model.default_bounds()
    if bounds is None:
        raise ValueError(f"model {model.name!r} has no default bounds; supply them")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    beta = np.zeros(0) if beta is None else np.asarray(beta, dtype=float).reshape(-1)
    if beta.size != model.descriptor.beta_dim:
        raise ValueError(f"model {model.name!r} needs a fixed beta of length {model.descriptor.beta_dim}")
    data = model.prepare([subject])
    idx = np.zeros(1, dtype=int)

    def energy(theta):
        stats = model.cell_stats(data, idx, theta[None, :], beta)
        return -float(model.loglik_from_stats(data, idx, stats, sigma)[0])

    lo, hi = bounds.mu_lower, bounds.mu_upper
    x0 = lo + (hi - lo) * rng.random(lo.size)
    res = anneal(energy, x0, lo, hi, config, rng=rng)
    if not math.isfinite(res.energy):
        raise SubjectFitError(f"subject {subject.id!r}: no feasible point inside the bounds")
    return SubjectFit(str(subject.id), res.x, -res.energy, res.n_evals, res.cycles, res.converged)


def fit_osat(
    model: Model,
    subjects: Sequence[Subject],
    beta=None,
    sigma: float | None = None,
    bounds: Bounds | None = None,
    config: SAConfig = SAConfig(),
    workers: int = 1,
    weight_tol: float = 1e-10,
    weight_max_iter: int = 10_000,
) -> NPSAResult:
    """Pool per-subject optima and optimize their weights.

    Subject i draws from the stream ``SeedSequence([config.seed, i])`` so the
    result is independent of how subjects are spread over workers. The
    returned distribution keeps all n points; pruning is left to reporting.
    """
    t_start = time.perf_counter()
    subjects = validate_dataset(subjects, model.descriptor)
    if model.descriptor.has_beta and beta is None:
        raise ValueError("OSAT requires a fixed beta for models with fixed effects")
    bounds = bounds if bounds is not None else model.default_bounds()
    if bounds is None:
        raise ValueError(f"model {model.name!r} has no default bounds; supply them")
    if model.uses_sigma and sigma is None:
        sigma = model.error.sigma
    beta = np.zeros(0) if beta is None else np.asarray(beta, dtype=float).reshape(-1)

    def one(i):
        return fit_subject(model, subjects[i], beta, sigma, bounds, config, subject_rng(config.seed, i))

    workers = max(1, int(workers))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            fits = list(pool.map(one, range(len(subjects))))
    else:
        fits = [one(i) for i in range(len(subjects))]

    points = np.array([f.theta for f in fits])
    sa_evals = sum(f.n_evals for f in fits)
    n = len(subjects)
    with CellEvaluator(model, subjects, workers) as ev:
        dist = DiscreteDistribution(points, np.full(n, 1.0 / n))
        matrix = ev.matrix(Candidate(dist, beta, sigma if model.uses_sigma else None))
        weights = optimize_weights(matrix, tol=weight_tol, max_iter=weight_max_iter)
        loglik = matrix.with_weights(weights).objective().loglik
        matrix_evals, n_failed = ev.n_evals, ev.n_failed
    candidate = Candidate(
        DiscreteDistribution(points, weights, normalize=True), beta, sigma if model.uses_sigma else None
    )
    trace = [
        dict(subject=f.subject_id, loglik=f.loglik, cycles=f.cycles, evaluations=f.n_evals, converged=f.converged)
        for f in fits
    ]
    return NPSAResult(
        candidate=candidate,
        loglik=loglik,
        mode="osat",
        trace=trace,
        n_evals=sa_evals + matrix_evals,
        n_failed=n_failed,
        cycles=max(f.cycles for f in fits),
        converged=all(f.converged for f in fits),
        acceptance={},
        wall_time=time.perf_counter() - t_start,
    )
