"""The n x K likelihood matrix p(Y_i | beta, mu_k), mixture sums N_i and
log-likelihood, plus population and individual predictions."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .models import Model
from .types import Candidate, DiscreteDistribution, Subject

LOG_FLOOR = -700.0
LOG_CEIL = 700.0


@dataclass(frozen=True)
class ObjectiveValue:
    loglik: float
    n: int

    @property
    def energy(self) -> float:
        return -self.loglik / self.n

    @property
    def feasible(self) -> bool:
        return self.loglik > -math.inf


def partition_cells(count: int, workers: int) -> list[tuple[int, int]]:
    """Split ``range(count)`` into ``workers`` contiguous blocks whose sizes
    differ by at most one. Empty blocks are dropped."""
    workers = max(1, int(workers))
    base, extra = divmod(count, workers)
    blocks, start = [], 0
    for w in range(workers):
        stop = start + base + (1 if w < extra else 0)
        if stop > start:
            blocks.append((start, stop))
        start = stop
    return blocks


def loglik_to_values(ll: np.ndarray) -> np.ndarray:
    """Exponentiate log-likelihoods, clamping finite values to
    [e^-700, e^700]; ``-inf`` maps to an exact zero."""
    ll = np.asarray(ll, dtype=float)
    values = np.exp(np.clip(ll, LOG_FLOOR, LOG_CEIL))
    values[ll == -np.inf] = 0.0
    return values


def mixture_sums(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # elementwise product + row reduction: summation order depends only on shape
    return (values * weights).sum(axis=1)


def _loglik_from_sums(row_mix: np.ndarray) -> float:
    if np.any(~(row_mix > 0)):
        return -math.inf
    return float(np.sum(np.log(row_mix)))


class LikelihoodMatrix:
    """Likelihood values with the mixture sums N_i for one weight vector.

    ``stats`` keeps the per-cell model statistic (residual sums of squares
    for fixed-sigma models) so a sigma move can be rescored without model
    calls.
    """

    def __init__(self, values, weights, stats=None):
        values = np.array(values, dtype=float, ndmin=2, order="C")
        weights = np.array(weights, dtype=float).reshape(-1)
        if values.shape[1] != weights.size:
            raise ValueError("weight vector length differs from column count")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("likelihood values must be finite and non-negative")
        self.values = values
        self.weights = weights
        self.stats = None if stats is None else np.array(stats, dtype=float, order="C")
        self.row_mix = mixture_sums(values, weights)
        for arr in (self.values, self.weights, self.row_mix):
            arr.setflags(write=False)
        if self.stats is not None:
            self.stats.setflags(write=False)

    @property
    def shape(self):
        return self.values.shape

    def with_weights(self, weights) -> "LikelihoodMatrix":
        return LikelihoodMatrix(self.values, weights, self.stats)

    def objective(self) -> ObjectiveValue:
        return ObjectiveValue(_loglik_from_sums(self.row_mix), self.values.shape[0])


def log_likelihood(matrix: LikelihoodMatrix, weights=None) -> ObjectiveValue:
    """ln L = sum_i ln(sum_k w_k n_ik); ``-inf`` when some N_i is zero."""
    if weights is None:
        return matrix.objective()
    weights = np.asarray(weights, dtype=float)
    n = matrix.values.shape[0]
    return ObjectiveValue(_loglik_from_sums(mixture_sums(matrix.values, weights)), n)


def replace_column(matrix: LikelihoodMatrix, k: int, new_column, new_stats=None) -> LikelihoodMatrix:
    """Return a copy with column ``k`` replaced and N_i fully recomputed."""
    n, K = matrix.values.shape
    if not 0 <= k < K:
        raise IndexError(f"column {k} out of range for K={K}")
    new_column = np.asarray(new_column, dtype=float)
    if new_column.shape != (n,):
        raise ValueError(f"column must have length {n}")
    values = matrix.values.copy()
    values[:, k] = new_column
    stats = None
    if matrix.stats is not None:
        stats = matrix.stats.copy()
        stats[:, k] = np.nan if new_stats is None else new_stats
    return LikelihoodMatrix(values, matrix.weights, stats)


class CellEvaluator:
    """Evaluates likelihood cells for (subject, support point) pairs.

    Cells are split into ``workers`` near-equal contiguous blocks evaluated
    on a thread pool; each cell is a pure function of its inputs so the
    assembled output does not depend on the worker count. ``n_evals``
    counts model evaluations (one per cell).
    """

    def __init__(self, model: Model, subjects: Sequence[Subject], workers: int = 1):
        self.model = model
        self.subjects = list(subjects)
        self.data = model.prepare(self.subjects)
        self.workers = max(1, int(workers))
        self.n_evals = 0
        self.n_failed = 0
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

    @property
    def n(self) -> int:
        return len(self.subjects)

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def stats(self, subj_idx, thetas, beta=None, count=True) -> np.ndarray:
        subj_idx = np.asarray(subj_idx, dtype=int)
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        blocks = partition_cells(len(subj_idx), self.workers)

        def run(block):
            a, b = block
            return self.model.cell_stats(self.data, subj_idx[a:b], thetas[a:b], beta)

        if self._pool is None or len(blocks) <= 1:
            parts = [run(b) for b in blocks]
        else:
            parts = list(self._pool.map(run, blocks))
        out = np.concatenate(parts) if parts else np.zeros(0)
        if count:
            self.n_evals += len(subj_idx)
            self.n_failed += int(np.count_nonzero(np.isnan(out)))
        return out

    def loglik(self, subj_idx, stats, sigma=None) -> np.ndarray:
        return self.model.loglik_from_stats(self.data, subj_idx, stats, sigma)

    def columns(self, points, beta=None, sigma=None, count=True):
        """Likelihood values and stats for every subject against each point.

        Returns two (n, K) arrays; cells are enumerated column by column.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n, K = self.n, points.shape[0]
        subj_idx = np.tile(np.arange(n), K)
        thetas = np.repeat(points, n, axis=0)
        stats = self.stats(subj_idx, thetas, beta, count=count)
        values = loglik_to_values(self.loglik(subj_idx, stats, sigma))
        return values.reshape(K, n).T, stats.reshape(K, n).T

    def rescore(self, stats, sigma) -> np.ndarray:
        """Values for an existing (n, K) stats array under a new sigma."""
        n, K = stats.shape
        subj_idx = np.tile(np.arange(n), K)
        ll = self.loglik(subj_idx, stats.T.reshape(-1), sigma)
        return loglik_to_values(ll).reshape(K, n).T

    def matrix(self, candidate: Candidate, count=True) -> LikelihoodMatrix:
        dist = candidate.distribution
        values, stats = self.columns(dist.points, candidate.beta, candidate.sigma, count=count)
        return LikelihoodMatrix(values, dist.weights, stats)


def build_matrix(model: Model, subjects: Sequence[Subject], candidate: Candidate, workers: int = 1) -> LikelihoodMatrix:
    with CellEvaluator(model, subjects, workers) as ev:
        return ev.matrix(candidate)


def _prediction_table(model, subjects, distribution, beta):
    return [
        np.array([model.predict(s, mu, beta) for mu in distribution.points])
        for s in subjects
    ]


def population_prediction(model: Model, subject: Subject, distribution: DiscreteDistribution, beta=None) -> np.ndarray:
    """Prior-weighted mean prediction sum_k w_k y(mu_k) at the subject's times."""
    preds = _prediction_table(model, [subject], distribution, beta)[0]
    return distribution.weights @ preds


def posterior_weights(model: Model, subject: Subject, distribution: DiscreteDistribution, beta=None, sigma=None) -> np.ndarray:
    data = model.prepare([subject])
    K = distribution.K
    stats = model.cell_stats(data, np.zeros(K, dtype=int), distribution.points, beta)
    ll = model.loglik_from_stats(data, np.zeros(K, dtype=int), stats, sigma)
    with np.errstate(divide="ignore"):
        logpost = np.log(distribution.weights) + ll
    top = np.max(logpost)
    if top == -np.inf:
        raise ValueError(f"subject {subject.id!r} has zero likelihood under distribution")
    post = np.exp(logpost - top)
    return post / post.sum()


def individual_prediction(model: Model, subject: Subject, distribution: DiscreteDistribution, beta=None, sigma=None) -> np.ndarray:
    """Posterior-weighted mean prediction sum_k y(mu_k) w_k n_ik / N_i."""
    post = posterior_weights(model, subject, distribution, beta, sigma)
    preds = _prediction_table(model, [subject], distribution, beta)[0]
    return post @ preds
