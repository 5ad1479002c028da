"""Nonparametric maximum likelihood by simulated annealing.

The candidate is phi = {beta, sigma, (w_k, mu_k)}. Two parameterizations
are supported:

choice 3 (default)
    K = n support points; the first n - 1 weights are annealed alongside
    the support points and the last weight is 1 - sum(others).
choice 2
    K >= n support points with equal weights 1/K during annealing; the
    weights are optimized by the fixed-point iteration afterwards.

One sweep walks the shuffled d_eff-array. An entry below d (the
support-point dimension) triggers a batched move: every support point
proposes one coordinate, all K candidate columns are evaluated together
(optionally across worker threads) and the Metropolis tests then run
sequentially over k, each against the matrix as left by earlier
acceptances. The remaining entries propose beta, sigma or a weight singly.

Model cost per temperature cycle is n * K * d * ns * nt cell evaluations,
plus n * K per sweep when beta enters the structural model.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .anneal import SAConfig, adjust_steps, check_stop, cool, metropolis_accept, propose_coordinate
from .likelihood import CellEvaluator, LikelihoodMatrix, log_likelihood, replace_column
from .models import Model
from .types import Bounds, Candidate, DiscreteDistribution, Subject, validate_dataset
from .weights import optimize_weights

log = logging.getLogger(__name__)

CHOICES = (2, 3)


class InfeasibleStartError(RuntimeError):
    pass


@dataclass
class NPSAResult:
    candidate: Candidate
    loglik: float
    mode: str
    trace: list[dict] = field(default_factory=list)
    n_evals: int = 0
    n_failed: int = 0
    cycles: int = 0
    converged: bool = False
    acceptance: dict = field(default_factory=dict)
    annealed_loglik: float | None = None
    d_value: float | None = None
    d_max: float | None = None
    wall_time: float = 0.0

    @property
    def energy_trace(self) -> list[float]:
        return [row["best_energy"] for row in self.trace if "best_energy" in row]


@dataclass
class Layout:
    """Index layout of phi: support coordinates (point-major), beta, sigma,
    then the annealed weights."""

    K: int
    d: int
    beta_dim: int
    sigma_dim: int
    weight_dim: int

    @property
    def n_support(self) -> int:
        return self.K * self.d

    @property
    def d_tot(self) -> int:
        return self.n_support + self.beta_dim + self.sigma_dim + self.weight_dim

    @property
    def d_eff(self) -> int:
        return self.d + self.beta_dim + self.sigma_dim + self.weight_dim

    @property
    def beta_start(self) -> int:
        return self.n_support

    @property
    def sigma_index(self) -> int | None:
        return self.n_support + self.beta_dim if self.sigma_dim else None

    @property
    def weight_start(self) -> int:
        return self.n_support + self.beta_dim + self.sigma_dim


@dataclass
class ProposalSchedule:
    q_array: np.ndarray
    d_eff_array: np.ndarray
    point_orders: np.ndarray  # (K, d): coordinate moved by point k at slot j


def _interleave(first: np.ndarray, rest: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    total = first.size + rest.size
    positions = np.sort(rng.choice(total, size=first.size, replace=False))
    out = np.empty(total, dtype=int)
    taken = np.zeros(total, dtype=bool)
    taken[positions] = True
    out[taken] = first
    out[~taken] = rest
    return out


def make_schedule(layout: Layout, support_rng: np.random.Generator, schedule_rng: np.random.Generator) -> ProposalSchedule:
    """Shuffle the q-array and d_eff-array for one sweep.

    The relative order of support entries comes from ``support_rng`` alone
    and the placement of the other entries from ``schedule_rng``; the
    combined arrays are uniform random permutations.
    """
    ns = layout.n_support
    support = support_rng.permutation(ns)
    slots = support_rng.permutation(layout.d)
    others_q = ns + schedule_rng.permutation(layout.d_tot - ns)
    others_eff = layout.d + schedule_rng.permutation(layout.d_eff - layout.d)
    q = _interleave(support, others_q, schedule_rng)
    d_eff = _interleave(slots, others_eff, schedule_rng)
    point = support // layout.d
    coord = support % layout.d
    order = np.argsort(point, kind="stable")
    point_orders = coord[order].reshape(layout.K, layout.d)
    return ProposalSchedule(q, d_eff, point_orders)


class NPSAState:
    """Mutable annealing state for one fit: phi, the running likelihood
    matrix, step sizes, counters and the RNG streams."""

    def __init__(
        self, model, evaluator, bounds, config, choice=3, K=None, sigma_fixed=None, init=None, steps0=None, verify=False
    ):
        K = evaluator.n if K is None else K
        if sigma_fixed is None and model.uses_sigma:
            sigma_fixed = model.error.sigma
        self.model = model
        self.ev = evaluator
        self.bounds = bounds
        self.config = config
        self.choice = choice
        self.n = evaluator.n
        self.verify = verify
        d = model.dim
        beta_dim = model.descriptor.beta_dim
        self.anneal_sigma = model.uses_sigma and bounds.has_sigma
        self.layout = Layout(
            K=K,
            d=d,
            beta_dim=beta_dim,
            sigma_dim=1 if self.anneal_sigma else 0,
            weight_dim=(K - 1) if choice == 3 else 0,
        )
        seeds = np.random.SeedSequence(config.seed).spawn(5)
        (self.init_rng, self.schedule_rng, self.support_rng, self.global_rng, self.weight_rng) = (
            np.random.default_rng(s) for s in seeds
        )

        if init is None:
            pts = bounds.mu_lower + (bounds.mu_upper - bounds.mu_lower) * self.init_rng.random((K, d))
            weights = np.full(K, 1.0 / K)
            beta = (bounds.beta_lower + bounds.beta_upper) / 2.0
        else:
            pts = np.array(init.distribution.points, dtype=float)
            weights = np.array(init.distribution.weights, dtype=float)
            beta = np.array(init.beta, dtype=float)
            if pts.shape != (K, d):
                raise ValueError(f"initial candidate must have {K} points of dimension {d}")
            if choice == 2:
                weights = np.full(K, 1.0 / K)
        if beta.size != beta_dim:
            raise ValueError(f"model {model.name!r} needs {beta_dim} beta bounds")
        if self.anneal_sigma:
            sigma = (bounds.sigma_lower + bounds.sigma_upper) / 2.0
            if init is not None and init.sigma is not None:
                sigma = float(init.sigma)
        else:
            sigma = sigma_fixed
        self.points, self.weights, self.beta, self.sigma = pts, weights, beta, sigma

        lo, hi = [], []
        lo.append(np.tile(bounds.mu_lower, K))
        hi.append(np.tile(bounds.mu_upper, K))
        lo.append(bounds.beta_lower)
        hi.append(bounds.beta_upper)
        if self.anneal_sigma:
            lo.append([bounds.sigma_lower])
            hi.append([bounds.sigma_upper])
        lo.append(np.zeros(self.layout.weight_dim))
        hi.append(np.ones(self.layout.weight_dim))
        self.lower = np.concatenate(lo).astype(float)
        self.upper = np.concatenate(hi).astype(float)
        width = self.upper - self.lower
        self.steps = width.copy() if steps0 is None else np.minimum(np.asarray(steps0, dtype=float), width)
        if self.steps.shape != width.shape:
            raise ValueError(f"steps0 must have length {width.size}")
        self.accepted = np.zeros(self.layout.d_tot)
        self.attempts = np.zeros(self.layout.d_tot)
        self.total_accepted = np.zeros(self.layout.d_tot)
        self.total_attempts = np.zeros(self.layout.d_tot)
        self.failed_columns = 0

        self.matrix = evaluator.matrix(self.candidate())
        self.loglik = self.matrix.objective().loglik
        self.temperature = config.t0
        self._save_best()

    # -- state helpers -------------------------------------------------------

    def candidate(self) -> Candidate:
        dist = DiscreteDistribution(self.points, self.weights, normalize=True)
        return Candidate(dist, self.beta, self.sigma)

    def _save_best(self):
        self.best = (self.points.copy(), self.weights.copy(), self.beta.copy(), self.sigma, self.matrix, self.loglik)

    def _offer_best(self):
        if self.loglik > self.best[-1]:
            self._save_best()

    def restore_best(self):
        pts, w, beta, sigma, matrix, ll = self.best
        self.points, self.weights, self.beta = pts.copy(), w.copy(), beta.copy()
        self.sigma, self.matrix, self.loglik = sigma, matrix, ll

    def _accept(self, ll_new, rng) -> bool:
        return metropolis_accept(self.loglik, ll_new, self.n, self.temperature, rng)

    # -- moves ---------------------------------------------------------------

    def propose_support(self, slot: int, schedule: ProposalSchedule):
        lay = self.layout
        coords = schedule.point_orders[:, slot]
        proposals = self.points.copy()
        for k in range(lay.K):
            c = coords[k]
            proposals[k, c] = propose_coordinate(
                self.points[k, c], self.steps[k * lay.d + c], self.bounds.mu_lower[c], self.bounds.mu_upper[c], self.support_rng
            )
        return proposals, coords

    def apply_support(self, proposals, coords, new_values, new_stats):
        """Sequential Metropolis over k with precomputed candidate columns."""
        lay = self.layout
        for k in range(lay.K):
            idx = k * lay.d + coords[k]
            self.attempts[idx] += 1
            if np.any(np.isnan(new_stats[:, k])):
                self.failed_columns += 1
                continue
            trial = replace_column(self.matrix, k, new_values[:, k], new_stats[:, k])
            ll_new = trial.objective().loglik
            if self._accept(ll_new, self.support_rng):
                self.matrix, self.loglik = trial, ll_new
                self.points[k] = proposals[k]
                self.accepted[idx] += 1
                self._offer_best()

    def batched_support_move(self, slot: int, schedule: ProposalSchedule):
        proposals, coords = self.propose_support(slot, schedule)
        new_values, new_stats = self.ev.columns(proposals, self.beta, self.sigma)
        self.apply_support(proposals, coords, new_values, new_stats)

    def beta_move(self, j: int):
        idx = self.layout.beta_start + j
        if self.upper[idx] == self.lower[idx]:
            return  # fixed beta
        beta = self.beta.copy()
        beta[j] = propose_coordinate(beta[j], self.steps[idx], self.lower[idx], self.upper[idx], self.global_rng)
        self.attempts[idx] += 1
        values, stats = self.ev.columns(self.points, beta, self.sigma)
        trial = LikelihoodMatrix(values, self.weights, stats)
        ll_new = trial.objective().loglik
        if self._accept(ll_new, self.global_rng):
            self.beta, self.matrix, self.loglik = beta, trial, ll_new
            self.accepted[idx] += 1
            self._offer_best()

    def sigma_move(self):
        idx = self.layout.sigma_index
        sigma = propose_coordinate(self.sigma, self.steps[idx], self.lower[idx], self.upper[idx], self.global_rng)
        self.attempts[idx] += 1
        values = self.ev.rescore(self.matrix.stats, sigma)
        trial = LikelihoodMatrix(values, self.weights, self.matrix.stats)
        ll_new = trial.objective().loglik
        if self._accept(ll_new, self.global_rng):
            self.sigma, self.matrix, self.loglik = sigma, trial, ll_new
            self.accepted[idx] += 1
            self._offer_best()

    def weight_move(self, j: int):
        """Propose w_j in [0, 1]; the last weight absorbs the change and a
        negative last weight rejects the move outright."""
        idx = self.layout.weight_start + j
        self.attempts[idx] += 1
        w_old = self.weights[j]
        w_new = propose_coordinate(w_old, self.steps[idx], 0.0, 1.0, self.weight_rng)
        if w_new == w_old:
            self.accepted[idx] += 1
            return
        weights = self.weights.copy()
        weights[j] = w_new
        weights[-1] = 1.0 - weights[:-1].sum()
        if weights[-1] < 0:
            return
        ll_new = log_likelihood(self.matrix, weights).loglik
        if self._accept(ll_new, self.weight_rng):
            self.weights = weights
            self.matrix = self.matrix.with_weights(weights)
            self.loglik = ll_new
            self.accepted[idx] += 1
            self._offer_best()

    # -- driver ----------------------------------------------------------------

    def sweep(self):
        lay = self.layout
        schedule = make_schedule(lay, self.support_rng, self.schedule_rng)
        for e in schedule.d_eff_array:
            if e < lay.d:
                self.batched_support_move(int(e), schedule)
                continue
            element = lay.n_support + (e - lay.d)
            if element < lay.beta_start + lay.beta_dim:
                self.beta_move(int(element - lay.beta_start))
            elif lay.sigma_index is not None and element == lay.sigma_index:
                self.sigma_move()
            else:
                self.weight_move(int(element - lay.weight_start))

    def check_matrix(self):
        fresh = self.ev.matrix(self.candidate(), count=False).values
        current = self.matrix.values
        scale = np.maximum(np.abs(fresh), np.finfo(float).tiny)
        if np.max(np.abs(current - fresh) / scale) > 1e-9:
            raise RuntimeError("running likelihood matrix drifted from a fresh build")

    def run(self, callback=None) -> tuple[list[dict], bool]:
        cfg = self.config
        trace: list[dict] = []
        history: list[float] = []
        converged = False
        for cycle in range(cfg.max_cycles):
            for _ in range(cfg.nt):
                self.accepted[:] = 0
                self.attempts[:] = 0
                for _ in range(cfg.ns):
                    self.sweep()
                self.total_accepted += self.accepted
                self.total_attempts += self.attempts
                self.steps = adjust_steps(self.accepted, self.attempts, self.steps, self.lower, self.upper)
            if self.verify:
                self.check_matrix()
            best_ll = self.best[-1]
            if cycle == 0 and best_ll == -math.inf:
                raise InfeasibleStartError(
                    "no feasible candidate found in the first temperature cycle; widen the bounds"
                )
            final_energy = -self.loglik / self.n
            best_energy = -best_ll / self.n
            trace.append(
                dict(
                    cycle=cycle,
                    temperature=self.temperature,
                    final_energy=final_energy,
                    best_energy=best_energy,
                    evaluations=self.ev.n_evals,
                )
            )
            log.debug("cycle %d T=%.6g E=%.8f best=%.8f", cycle, self.temperature, final_energy, best_energy)
            if callback is not None:
                callback(cycle, self.temperature, best_energy)
            if check_stop(history, final_energy, best_energy, cfg.eps, cfg.n_eps):
                converged = True
                break
            history.append(final_energy)
            self.temperature = cool(self.temperature, cfg.rt)
            self.restore_best()
        self.restore_best()
        return trace, converged

    def acceptance_summary(self) -> dict:
        lay = self.layout

        def rate(sl):
            att = self.total_attempts[sl].sum()
            return float(self.total_accepted[sl].sum() / att) if att else None

        return dict(
            support=rate(slice(0, lay.n_support)),
            beta=rate(slice(lay.beta_start, lay.beta_start + lay.beta_dim)),
            sigma=rate(slice(lay.weight_start - lay.sigma_dim, lay.weight_start)),
            weights=rate(slice(lay.weight_start, lay.d_tot)),
        )


def _check_choice(choice, K, n):
    if choice not in CHOICES:
        raise ValueError(f"choice must be one of {CHOICES}; choice 1 is not implemented")
    if choice == 3:
        if K is not None and K != n:
            raise ValueError("choice 3 uses exactly K = n support points")
        return n
    K = n if K is None else int(K)
    if K < n:
        raise ValueError("choice 2 needs K >= n support points")
    return K


def fit(
    model: Model,
    subjects: Sequence[Subject],
    bounds: Bounds | None = None,
    config: SAConfig = SAConfig(),
    choice: int = 3,
    K: int | None = None,
    workers: int = 1,
    sigma: float | None = None,
    init: Candidate | None = None,
    steps0=None,
    verify: bool = False,
    callback: Callable[[int, float, float], None] | None = None,
    weight_tol: float = 1e-10,
    weight_max_iter: int = 10_000,
) -> NPSAResult:
    """Anneal a nonparametric mixing distribution (plus beta and sigma).

    Parameters
    ----------
    bounds
        Box for support points and beta; sigma is annealed when sigma
        bounds are given and the model has a fixed-sigma error. Defaults
        to the model's built-in bounds.
    sigma
        Residual scale used when sigma is not annealed (defaults to the
        model's own value).
    steps0
        Initial proposal step per element of phi (default: bound width).
    verify
        Rebuild the matrix from scratch after every temperature cycle and
        raise if the running copy drifted.
    """
    t_start = time.perf_counter()
    subjects = validate_dataset(subjects, model.descriptor)
    bounds = bounds if bounds is not None else model.default_bounds()
    if bounds is None:
        raise ValueError(f"model {model.name!r} has no default bounds; supply them")
    if bounds.dim != model.dim:
        raise ValueError(f"bounds have dimension {bounds.dim}, model needs {model.dim}")
    n = len(subjects)
    K = _check_choice(choice, K, n)
    sigma_fixed = (sigma if sigma is not None else model.error.sigma) if model.uses_sigma else None

    with CellEvaluator(model, subjects, workers) as ev:
        run = NPSAState(model, ev, bounds, config, choice, K, sigma_fixed, init, steps0, verify)
        trace, converged = run.run(callback)
        annealed = run.loglik
        matrix = run.matrix
        weights = run.weights
        if choice == 2:
            weights = optimize_weights(matrix, tol=weight_tol, max_iter=weight_max_iter)
            matrix = matrix.with_weights(weights)
        loglik = matrix.objective().loglik
        candidate = Candidate(DiscreteDistribution(run.points, weights, normalize=True), run.beta, run.sigma)
        return NPSAResult(
            candidate=candidate,
            loglik=loglik,
            mode=f"npsa{choice}",
            trace=trace,
            n_evals=ev.n_evals,
            n_failed=ev.n_failed,
            cycles=len(trace),
            converged=converged,
            acceptance=run.acceptance_summary(),
            annealed_loglik=annealed,
            wall_time=time.perf_counter() - t_start,
        )
