"""Domain types shared across the solver: subjects, mixing distributions,
candidates and parameter bounds."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


class DatasetError(ValueError):
    """Raised when a dataset violates a structural requirement."""


@dataclass(frozen=True)
class DoseEvent:
    time: float
    amount: float
    duration: float = 0.0
    route: str = ""

    @property
    def is_bolus(self) -> bool:
        return self.duration == 0.0


@dataclass(frozen=True, eq=False)
class Subject:
    """One individual's observations, dosing history and covariates.

    ``aux`` holds per-observation auxiliary columns such as the binomial
    trial count ``n_trials`` and regressor ``x`` of the logistic model.
    """

    id: str
    times: np.ndarray
    observations: np.ndarray
    dose_events: tuple[DoseEvent, ...] = ()
    covariates: Mapping[str, float] = field(default_factory=dict)
    aux: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        obs = np.asarray(self.observations, dtype=float).reshape(-1)
        times.setflags(write=False)
        obs.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "dose_events", tuple(self.dose_events))
        object.__setattr__(self, "covariates", dict(self.covariates))
        aux = {}
        for key, value in dict(self.aux).items():
            arr = np.asarray(value, dtype=float).reshape(-1)
            arr.setflags(write=False)
            aux[key] = arr
        object.__setattr__(self, "aux", aux)

    @property
    def m(self) -> int:
        return len(self.times)

    def __eq__(self, other):
        if not isinstance(other, Subject):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.observations, other.observations)
            and self.dose_events == other.dose_events
            and self.covariates == other.covariates
            and self.aux.keys() == other.aux.keys()
            and all(np.array_equal(self.aux[k], other.aux[k]) for k in self.aux)
        )

    __hash__ = None


class DiscreteDistribution:
    """K weighted support points; the weights always sum to one.

    Parameters
    ----------
    points : array_like, shape (K, d)
    weights : array_like, shape (K,)
    normalize : bool
        Rescale ``weights`` to sum to one instead of rejecting them.
    """

    SUM_TOL = 1e-9

    def __init__(self, points, weights, normalize: bool = False):
        points = np.array(points, dtype=float, ndmin=2)
        weights = np.array(weights, dtype=float).reshape(-1)
        if points.shape[0] != weights.shape[0]:
            raise ValueError(
                f"{points.shape[0]} support points but {weights.shape[0]} weights"
            )
        if points.shape[0] == 0:
            raise ValueError("empty distribution")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and non-negative")
        total = weights.sum()
        if normalize:
            if total <= 0:
                raise ValueError("weights sum to zero")
            weights = weights / total
        elif abs(total - 1.0) > self.SUM_TOL:
            raise ValueError(f"weights sum to {total!r}, not 1")
        points.setflags(write=False)
        weights.setflags(write=False)
        self.points = points
        self.weights = weights

    @property
    def K(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def sorted(self) -> "DiscreteDistribution":
        """Copy with support points in ascending lexicographic order."""
        order = np.lexsort(self.points.T[::-1])
        return DiscreteDistribution(self.points[order], self.weights[order], normalize=True)

    def __repr__(self):
        return f"DiscreteDistribution(K={self.K}, dim={self.dim})"


@dataclass(frozen=True)
class Bounds:
    """Box constraints for support points, fixed effects and residual scale."""

    mu_lower: np.ndarray
    mu_upper: np.ndarray
    beta_lower: np.ndarray = field(default_factory=lambda: np.zeros(0))
    beta_upper: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sigma_lower: float | None = None
    sigma_upper: float | None = None

    def __post_init__(self):
        for name in ("mu_lower", "mu_upper", "beta_lower", "beta_upper"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.mu_lower.shape != self.mu_upper.shape or self.mu_lower.size == 0:
            raise ValueError("mu bounds must be non-empty and of equal length")
        if self.beta_lower.shape != self.beta_upper.shape:
            raise ValueError("beta bounds must have equal length")
        for lo, hi, what in (
            (self.mu_lower, self.mu_upper, "mu"),
            (self.beta_lower, self.beta_upper, "beta"),
        ):
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise ValueError(f"{what} bounds must be finite")
            if np.any(lo > hi):
                raise ValueError(f"{what} lower bound exceeds upper bound")
        if (self.sigma_lower is None) != (self.sigma_upper is None):
            raise ValueError("give both sigma bounds or neither")
        if self.sigma_lower is not None:
            if not (0 < self.sigma_lower <= self.sigma_upper < np.inf):
                raise ValueError("sigma bounds must satisfy 0 < lower <= upper < inf")

    @property
    def dim(self) -> int:
        return self.mu_lower.size

    @property
    def has_sigma(self) -> bool:
        return self.sigma_lower is not None

    def width(self) -> np.ndarray:
        return self.mu_upper - self.mu_lower

    def contains(self, points) -> bool:
        points = np.atleast_2d(points)
        return bool(np.all(points >= self.mu_lower) and np.all(points <= self.mu_upper))


@dataclass(frozen=True)
class Candidate:
    """A full optimization state: fixed effects, residual scale and mixing
    distribution."""

    distribution: DiscreteDistribution
    beta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sigma: float | None = None

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float).reshape(-1)
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def check_bounds(self, bounds: Bounds) -> None:
        if not bounds.contains(self.distribution.points):
            raise ValueError("support point outside bounds")
        if self.beta.size != bounds.beta_lower.size:
            raise ValueError("beta dimension does not match bounds")
        if np.any(self.beta < bounds.beta_lower) or np.any(self.beta > bounds.beta_upper):
            raise ValueError("beta outside bounds")


def validate_dataset(subjects: Sequence[Subject], requirements=None) -> list[Subject]:
    """Check structural invariants of a dataset.

    ``requirements`` is any object exposing ``covariates`` and ``aux_fields``
    name sequences (a :class:`~npsa.models.ModelDescriptor` does).
    """
    subjects = list(subjects)
    if not subjects:
        raise DatasetError("empty dataset")
    covariates = tuple(getattr(requirements, "covariates", ()) or ())
    aux_fields = tuple(getattr(requirements, "aux_fields", ()) or ())
    seen = set()
    for s in subjects:
        where = f"subject {s.id!r}"
        if s.id in seen:
            raise DatasetError(f"{where}: duplicate id")
        seen.add(s.id)
        if s.m < 1:
            raise DatasetError(f"{where}: field 'times': no observations")
        if s.observations.shape != s.times.shape:
            raise DatasetError(f"{where}: field 'observations': length differs from times")
        if not np.all(np.isfinite(s.times)) or not np.all(np.isfinite(s.observations)):
            raise DatasetError(f"{where}: field 'times': non-finite value")
        if np.any(np.diff(s.times) <= 0):
            raise DatasetError(f"{where}: field 'times': non-monotone times")
        for d in s.dose_events:
            if d.amount < 0:
                raise DatasetError(f"{where}: field 'dose': negative dose")
            if d.duration < 0:
                raise DatasetError(f"{where}: field 'duration': negative duration")
        for name in covariates:
            if name not in s.covariates:
                raise DatasetError(f"{where}: field {name!r}: missing covariate")
        for name in aux_fields:
            if name not in s.aux:
                raise DatasetError(f"{where}: field {name!r}: missing column")
            if s.aux[name].shape != s.times.shape:
                raise DatasetError(f"{where}: field {name!r}: length differs from times")
    return subjects
