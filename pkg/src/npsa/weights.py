"""Mixture weights for fixed support points."""

from __future__ import annotations

import numpy as np

from .likelihood import LikelihoodMatrix, mixture_sums
from .types import DiscreteDistribution

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000


def _as_values(matrix) -> np.ndarray:
    if isinstance(matrix, LikelihoodMatrix):
        return matrix.values
    return np.asarray(matrix, dtype=float)


def weight_step(values: np.ndarray, w: np.ndarray) -> np.ndarray:
    """One fixed-point update w_k <- (1/n) sum_i w_k n_ik / N_i."""
    n = values.shape[0]
    N = mixture_sums(values, w)
    return w * ((values / N[:, None]).sum(axis=0) / n)


def optimize_weights(matrix, w0=None, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> np.ndarray:
    """Maximize sum_i ln(sum_k w_k n_ik) over the simplex by the multiplicative
    fixed-point (EM) iteration.

    Each update keeps the weights on the simplex and never decreases the
    log-likelihood. Iteration stops once no weight moves by ``tol`` or more,
    or after ``max_iter`` updates.

    Parameters
    ----------
    matrix : LikelihoodMatrix or array_like, shape (n, K)
    w0 : array_like, shape (K,), optional
        Strictly positive starting weights summing to one; uniform 1/K if
        omitted. Weights that start at zero stay at zero.
    """
    values = _as_values(matrix)
    n, K = values.shape
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise ValueError("likelihood values must be finite and non-negative")
    zero_rows = np.flatnonzero(values.sum(axis=1) <= 0)
    if zero_rows.size:
        raise ValueError(f"subject row {int(zero_rows[0])} has zero likelihood for every point")
    if w0 is None:
        w = np.full(K, 1.0 / K)
    else:
        w = np.array(w0, dtype=float).reshape(-1)
        if w.size != K or np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("w0 must be a strictly positive simplex vector of length K")
    for _ in range(max_iter):
        w_new = weight_step(values, w)
        delta = np.max(np.abs(w_new - w))
        w = w_new
        if delta < tol:
            break
    return w / w.sum()


def prune_and_merge(distribution: DiscreteDistribution, weight_floor: float = 1e-5, merge_radius=None) -> DiscreteDistribution:
    """Drop points lighter than ``weight_floor`` and greedily merge points
    whose coordinates all lie within ``merge_radius`` of a cluster centroid.

    Points are visited heaviest first; a merged cluster sits at the
    weight-weighted centroid of its members. The result is renormalized and
    sorted ascending.
    """
    points, weights = distribution.points, distribution.weights
    keep = weights >= weight_floor
    if not np.any(keep):
        raise ValueError("empty distribution: every point fell below the weight floor")
    points, weights = points[keep], weights[keep]
    radius = np.zeros(points.shape[1]) if merge_radius is None else np.broadcast_to(
        np.asarray(merge_radius, dtype=float), (points.shape[1],)
    )

    centroids: list[np.ndarray] = []
    masses: list[float] = []
    for idx in np.argsort(-weights, kind="stable"):
        p, w = points[idx], weights[idx]
        for c in range(len(centroids)):
            if np.all(np.abs(p - centroids[c]) <= radius):
                total = masses[c] + w
                centroids[c] = (centroids[c] * masses[c] + p * w) / total
                masses[c] = total
                break
        else:
            centroids.append(p.copy())
            masses.append(w)
    return DiscreteDistribution(np.array(centroids), np.array(masses), normalize=True).sorted()
