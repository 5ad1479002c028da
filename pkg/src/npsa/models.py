"""Likelihood models: p(Y_i | beta, theta) for one subject and one support
point, in scalar form and in a batched per-cell form used to fill the
likelihood matrix.

Four models are provided:

``wang``
    Random-intercept logistic model for binomial counts with a fixed
    slope ``beta``.
``onecomp``
    One-compartment bolus model, ``y = (20 / V) exp(-K t)``, fixed-sigma
    Gaussian error.
``twocomp``
    Two-compartment analytic bolus model with dose 20, fixed-sigma
    Gaussian error.
``voriconazole``
    Three-state ODE with oral absorption, Michaelis-Menten elimination and
    a peripheral compartment; error standard deviation ``c0 + c1 * y``.

Batched evaluation returns a per-cell *statistic*. For fixed-sigma
Gaussian models it is the residual sum of squares, so a change of sigma
can be scored without re-running the structural model; for the other
models it is the log-likelihood itself. Failed cells are NaN and score as
``-inf``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ode import DEFAULT_ATOL, DEFAULT_RTOL, IntegrationProblem, JumpEvent, ODEError, RateEvent, integrate
from .types import Bounds, Subject

LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)

ONECOMP_DOSE = 20.0
TWOCOMP_DOSE = 20.0

FIXED_SIGMA = "fixed_sigma"
AFFINE_SIGMA = "affine_sigma"
BINOMIAL = "binomial"


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ErrorSpec:
    kind: str
    sigma: float | None = None
    c0: float = 0.0
    c1: float = 0.0

    def __post_init__(self):
        if self.kind == FIXED_SIGMA:
            if self.sigma is not None and not self.sigma > 0:
                raise ValueError("sigma must be positive")
        elif self.kind == AFFINE_SIGMA:
            if self.c0 < 0 or self.c1 < 0 or self.c0 + self.c1 <= 0:
                raise ValueError("need c0 >= 0, c1 >= 0 and c0 + c1 > 0")
        elif self.kind != BINOMIAL:
            raise ValueError(f"unknown error model {self.kind!r}")

    def sd(self, predictions) -> np.ndarray:
        predictions = np.asarray(predictions, dtype=float)
        if self.kind == FIXED_SIGMA:
            return np.full(predictions.shape, float(self.sigma))
        if self.kind == AFFINE_SIGMA:
            return self.c0 + self.c1 * predictions
        raise ModelError("binomial error model has no standard deviation")


@dataclass(frozen=True)
class ModelDescriptor:
    name: str
    param_names: tuple[str, ...]
    error_kind: str
    beta_dim: int = 0
    covariates: tuple[str, ...] = ()
    aux_fields: tuple[str, ...] = ()
    default_mu_bounds: tuple[tuple[float, ...], tuple[float, ...]] | None = None
    default_beta_bounds: tuple[tuple[float, ...], tuple[float, ...]] | None = None

    def __post_init__(self):
        if len(self.param_names) < 1:
            raise ValueError("a model needs at least one support-point parameter")

    @property
    def dim(self) -> int:
        return len(self.param_names)

    @property
    def has_beta(self) -> bool:
        return self.beta_dim > 0


# -- scalar building blocks ------------------------------------------------


def _log_logistic(eta):
    """log(e^eta / (1 + e^eta)) without overflow."""
    return -np.logaddexp(0.0, -eta)


def wang_loglik(y, n_trials, x, beta, mu) -> float:
    if not 0 <= y <= n_trials:
        raise ModelError(f"count y={y} outside [0, n_trials={n_trials}]")
    eta = mu + beta * x
    return float(y * _log_logistic(eta) + (n_trials - y) * _log_logistic(-eta))


def wang_likelihood(y, n_trials, x, beta, mu) -> float:
    """[p(mu + beta x)]^y [1 - p(mu + beta x)]^(n - y) with logistic p."""
    return math.exp(wang_loglik(y, n_trials, x, beta, mu))


def onecomp_predict(K, V, t):
    if np.any(np.asarray(V) <= 0):
        raise ModelError("volume V must be positive")
    return ONECOMP_DOSE / V * np.exp(-K * np.asarray(t, dtype=float))


def _twocomp_rates(K, Kcp, Kpc):
    s = K + Kcp + Kpc
    disc = s * s - 4.0 * K * Kpc
    root = np.sqrt(np.maximum(disc, 0.0))
    return disc, (s + root) / 2.0, (s - root) / 2.0


def twocomp_predict(K, V, Kcp, Kpc, t):
    """Central concentration of the two-compartment model after a bolus of 20."""
    if V <= 0:
        raise ModelError("volume V must be positive")
    disc, alpha, beta = _twocomp_rates(K, Kcp, Kpc)
    if disc < 0:
        raise ModelError("complex eigenvalues: (K+Kcp+Kpc)^2 < 4 K Kpc")
    if abs(alpha - beta) <= 1e-12:
        raise ModelError("degenerate repeated root alpha == beta")
    t = np.asarray(t, dtype=float)
    A = TWOCOMP_DOSE * (alpha - Kpc) / (V * (alpha - beta))
    B = TWOCOMP_DOSE * (Kpc - beta) / (V * (alpha - beta))
    return A * np.exp(-alpha * t) + B * np.exp(-beta * t)


VORI_PARAMS = ("Ka", "Vmax0", "Km", "Vc0", "FA1", "Kcp", "Kpc")


def voriconazole_problem(theta, subject: Subject, times, atol=DEFAULT_ATOL, rtol=DEFAULT_RTOL):
    Ka, Vmax0, Km, Vc0, FA1, Kcp, Kpc = (float(v) for v in theta)
    wt = float(subject.covariates["wt"])
    Vm = Vmax0 * wt**0.75
    V = Vc0 * wt

    def rhs(t, x):
        x1, x2, x3 = x
        return np.array(
            [
                -Ka * x1,
                Ka * x1 - Vm * x2 / (Km * V + x2) - Kcp * x2 + Kpc * x3,
                Kcp * x2 - Kpc * x3,
            ]
        )

    jumps, rates = [], []
    for d in subject.dose_events:
        if d.amount == 0:
            continue
        if d.is_bolus:
            jumps.append(JumpEvent(d.time, 0, d.amount * FA1))
        else:
            rates.append(RateEvent(d.time, d.time + d.duration, 1, d.amount / d.duration))
    times = np.asarray(times, dtype=float)
    t0 = min([0.0, float(times[0])] + [d.time for d in subject.dose_events])
    problem = IntegrationProblem(rhs, np.zeros(3), times, jumps, rates, t0=t0, atol=atol, rtol=rtol)
    return problem, V


def voriconazole_predict(theta, subject: Subject, times=None, atol=DEFAULT_ATOL, rtol=DEFAULT_RTOL):
    """Central concentration x2 / V at ``times`` (default: observation times)."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (7,):
        raise ModelError("voriconazole theta has 7 components")
    if "wt" not in subject.covariates or not subject.covariates["wt"] > 0:
        raise ModelError(f"subject {subject.id!r}: covariate 'wt' must be positive")
    if np.any(np.delete(theta, 4) < 0) or not 0 <= theta[4] <= 1:
        raise ModelError("voriconazole parameters must be non-negative with FA1 in [0, 1]")
    if theta[3] <= 0:
        raise ModelError("Vc0 must be positive")
    times = subject.times if times is None else times
    problem, V = voriconazole_problem(theta, subject, times, atol, rtol)
    try:
        states = integrate(problem)
    except ODEError as exc:
        raise ODEError(f"subject {subject.id!r}, theta={theta.tolist()}: {exc}") from exc
    return states[:, 1] / V


def gaussian_subject_loglik(subject: Subject, predictions, error: ErrorSpec) -> float:
    predictions = np.asarray(predictions, dtype=float)
    if predictions.shape != subject.observations.shape:
        raise ModelError("one prediction per observation required")
    sd = error.sd(predictions)
    bad = np.flatnonzero(~(sd > 0))
    if bad.size:
        raise ModelError(f"non-positive standard deviation at observation {int(bad[0])}")
    z = (subject.observations - predictions) / sd
    return float(-np.sum(0.5 * z * z + np.log(sd) + LOG_SQRT_2PI))


def gaussian_subject_likelihood(subject: Subject, predictions, error: ErrorSpec) -> float:
    """Product over observations of normal densities."""
    return math.exp(gaussian_subject_loglik(subject, predictions, error))


# -- batched models ----------------------------------------------------------


def _rowsum(a: np.ndarray) -> np.ndarray:
    # Fixed left-to-right order so a cell's value is independent of batch shape.
    out = np.zeros(a.shape[0])
    for j in range(a.shape[1]):
        out += a[:, j]
    return out


@dataclass
class PreparedData:
    subjects: list[Subject]
    times: np.ndarray
    obs: np.ndarray
    mask: np.ndarray
    m: np.ndarray
    aux: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.subjects)


class Model:
    """Base class. Subclasses set ``descriptor`` and implement ``_stats``
    and ``predict``."""

    descriptor: ModelDescriptor
    error: ErrorSpec

    @property
    def name(self) -> str:
        return self.descriptor.name

    @property
    def dim(self) -> int:
        return self.descriptor.dim

    @property
    def uses_sigma(self) -> bool:
        return self.error.kind == FIXED_SIGMA

    def default_bounds(self) -> Bounds | None:
        d = self.descriptor
        if d.default_mu_bounds is None:
            return None
        kw = {}
        if d.default_beta_bounds is not None:
            kw = dict(beta_lower=d.default_beta_bounds[0], beta_upper=d.default_beta_bounds[1])
        return Bounds(d.default_mu_bounds[0], d.default_mu_bounds[1], **kw)

    def prepare(self, subjects: Sequence[Subject]) -> PreparedData:
        subjects = list(subjects)
        n = len(subjects)
        m = np.array([s.m for s in subjects])
        width = int(m.max())
        times = np.zeros((n, width))
        obs = np.zeros((n, width))
        mask = np.zeros((n, width), dtype=bool)
        aux = {name: np.zeros((n, width)) for name in self.descriptor.aux_fields}
        for i, s in enumerate(subjects):
            times[i, : s.m] = s.times
            obs[i, : s.m] = s.observations
            mask[i, : s.m] = True
            for name in aux:
                aux[name][i, : s.m] = s.aux[name]
        return PreparedData(subjects, times, obs, mask, m, aux)

    def cell_stats(self, data: PreparedData, subj_idx, thetas, beta=None) -> np.ndarray:
        subj_idx = np.asarray(subj_idx, dtype=int)
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        beta = np.zeros(0) if beta is None else np.asarray(beta, dtype=float)
        with np.errstate(all="ignore"):
            return self._stats(data, subj_idx, thetas, beta)

    def loglik_from_stats(self, data: PreparedData, subj_idx, stats, sigma=None) -> np.ndarray:
        stats = np.asarray(stats, dtype=float)
        if self.error.kind == FIXED_SIGMA:
            sigma = self.error.sigma if sigma is None else sigma
            m = data.m[np.asarray(subj_idx, dtype=int)]
            ll = -m * (math.log(sigma) + LOG_SQRT_2PI) - stats / (2.0 * sigma * sigma)
        else:
            ll = stats.copy()
        ll[np.isnan(ll)] = -np.inf
        return ll

    def subject_loglik(self, subject: Subject, theta, beta=None, sigma=None) -> float:
        """Scalar reference path: log p(Y_i | beta, theta) via ``predict``."""
        if self.error.kind == BINOMIAL:
            raise NotImplementedError
        pred = self.predict(subject, theta, beta)
        error = self.error
        if error.kind == FIXED_SIGMA and sigma is not None:
            error = ErrorSpec(FIXED_SIGMA, sigma=sigma)
        return gaussian_subject_loglik(subject, pred, error)

    def predict(self, subject: Subject, theta, beta=None) -> np.ndarray:
        raise NotImplementedError

    def _stats(self, data, subj_idx, thetas, beta):
        raise NotImplementedError

    def _sum_squares(self, data, subj_idx, pred):
        r = np.where(data.mask[subj_idx], data.obs[subj_idx] - pred, 0.0)
        return _rowsum(r * r)


class WangModel(Model):
    descriptor = ModelDescriptor(
        name="wang",
        param_names=("mu",),
        error_kind=BINOMIAL,
        beta_dim=1,
        aux_fields=("n_trials", "x"),
        default_mu_bounds=((-10.0,), (10.0,)),
        default_beta_bounds=((-10.0,), (10.0,)),
    )

    def __init__(self):
        self.error = ErrorSpec(BINOMIAL)

    def prepare(self, subjects):
        data = super().prepare(subjects)
        for s in data.subjects:
            y, ntr = s.observations, s.aux["n_trials"]
            if np.any(y < 0) or np.any(y > ntr) or np.any(y != np.round(y)):
                raise ModelError(f"subject {s.id!r}: counts must be integers in [0, n_trials]")
        return data

    def _stats(self, data, subj_idx, thetas, beta):
        mu = thetas[:, 0:1]
        eta = mu + beta[0] * data.aux["x"][subj_idx]
        y = data.obs[subj_idx]
        ntr = data.aux["n_trials"][subj_idx]
        ll = y * _log_logistic(eta) + (ntr - y) * _log_logistic(-eta)
        return _rowsum(np.where(data.mask[subj_idx], ll, 0.0))

    def subject_loglik(self, subject, theta, beta=None, sigma=None):
        b = float(np.asarray(beta).reshape(-1)[0])
        return sum(
            wang_loglik(y, n, x, b, float(theta[0]))
            for y, n, x in zip(subject.observations, subject.aux["n_trials"], subject.aux["x"])
        )

    def predict(self, subject, theta, beta=None):
        """Expected count n_trials * p(mu + beta x)."""
        b = float(np.asarray(beta).reshape(-1)[0])
        eta = float(theta[0]) + b * subject.aux["x"]
        return subject.aux["n_trials"] * np.exp(_log_logistic(eta))


class OneCompModel(Model):
    descriptor = ModelDescriptor(
        name="onecomp",
        param_names=("K", "V"),
        error_kind=FIXED_SIGMA,
        default_mu_bounds=((0.01, 0.2), (3.0, 2.5)),
    )

    def __init__(self, sigma: float = 0.5):
        self.error = ErrorSpec(FIXED_SIGMA, sigma=sigma)

    def _stats(self, data, subj_idx, thetas, beta):
        K, V = thetas[:, 0:1], thetas[:, 1:2]
        pred = ONECOMP_DOSE / V * np.exp(-K * data.times[subj_idx])
        ss = self._sum_squares(data, subj_idx, pred)
        ss[(V[:, 0] <= 0) | ~np.isfinite(ss)] = np.nan
        return ss

    def predict(self, subject, theta, beta=None):
        return onecomp_predict(theta[0], theta[1], subject.times)


class TwoCompModel(Model):
    descriptor = ModelDescriptor(
        name="twocomp",
        param_names=("K", "V", "Kcp", "Kpc"),
        error_kind=FIXED_SIGMA,
        default_mu_bounds=((0.01, 0.2, 0.0, 0.5), (2.0, 2.5, 2.0, 4.0)),
    )

    def __init__(self, sigma: float = 0.5):
        self.error = ErrorSpec(FIXED_SIGMA, sigma=sigma)

    def _stats(self, data, subj_idx, thetas, beta):
        K, V, Kcp, Kpc = (thetas[:, j : j + 1] for j in range(4))
        disc, alpha, beta_ = _twocomp_rates(K, Kcp, Kpc)
        gap = alpha - beta_
        A = TWOCOMP_DOSE * (alpha - Kpc) / (V * gap)
        B = TWOCOMP_DOSE * (Kpc - beta_) / (V * gap)
        t = data.times[subj_idx]
        pred = A * np.exp(-alpha * t) + B * np.exp(-beta_ * t)
        ss = self._sum_squares(data, subj_idx, pred)
        bad = (V[:, 0] <= 0) | (disc[:, 0] < 0) | (np.abs(gap[:, 0]) <= 1e-12) | ~np.isfinite(ss)
        ss[bad] = np.nan
        return ss

    def predict(self, subject, theta, beta=None):
        return twocomp_predict(*(float(v) for v in theta), subject.times)


class VoriconazoleModel(Model):
    descriptor = ModelDescriptor(
        name="voriconazole",
        param_names=VORI_PARAMS,
        error_kind=AFFINE_SIGMA,
        covariates=("wt",),
    )

    def __init__(self, c0: float = 0.02, c1: float = 0.1, atol=DEFAULT_ATOL, rtol=DEFAULT_RTOL):
        self.error = ErrorSpec(AFFINE_SIGMA, c0=c0, c1=c1)
        self.atol = atol
        self.rtol = rtol

    def _stats(self, data, subj_idx, thetas, beta):
        out = np.empty(len(subj_idx))
        for c, (i, theta) in enumerate(zip(subj_idx, thetas)):
            subject = data.subjects[i]
            try:
                pred = voriconazole_predict(theta, subject, atol=self.atol, rtol=self.rtol)
                out[c] = gaussian_subject_loglik(subject, pred, self.error)
            except (ODEError, ModelError, FloatingPointError):
                out[c] = np.nan
        return out

    def predict(self, subject, theta, beta=None):
        return voriconazole_predict(theta, subject, atol=self.atol, rtol=self.rtol)


MODELS = {
    "wang": WangModel,
    "onecomp": OneCompModel,
    "twocomp": TwoCompModel,
    "voriconazole": VoriconazoleModel,
}


def get_model(name: str, **kwargs) -> Model:
    try:
        cls = MODELS[name]
    except KeyError:
        raise ModelError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return cls(**kwargs)
