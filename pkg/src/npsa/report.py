"""Result bundles: support tables, predictions, summary, trace and a JSON
record holding the full candidate.

Everything written to the bundle is a function of (config, seed, dataset)
only. Wall time and worker count go to a separate ``runinfo.txt``.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .likelihood import individual_prediction, population_prediction
from .models import Model
from .solver import NPSAResult
from .types import Candidate, DiscreteDistribution, Subject
from .weights import prune_and_merge

BUNDLE_FILES = (
    "support_points.csv",
    "support_points_merged.csv",
    "predictions.csv",
    "summary.txt",
    "trace.csv",
    "result.json",
)


@dataclass
class FitStats:
    slope: float
    intercept: float
    r2: float
    rss: float
    n_obs: int


def fit_statistics(observed, predicted) -> FitStats:
    """Least-squares line of observed on predicted, its R^2, and the residual
    sum of squares sum (observed - predicted)^2."""
    observed = np.asarray(observed, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    rss = float(np.sum((observed - predicted) ** 2))
    if observed.size < 2 or np.ptp(predicted) == 0:
        return FitStats(float("nan"), float("nan"), float("nan"), rss, observed.size)
    lr = stats.linregress(predicted, observed)
    return FitStats(float(lr.slope), float(lr.intercept), float(lr.rvalue**2), rss, observed.size)


def _f(v) -> str:
    return "" if v is None else repr(float(v))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _support_rows(dist: DiscreteDistribution):
    return [[_f(v) for v in p] + [_f(w)] for p, w in zip(dist.points, dist.weights)]


def prediction_rows(model: Model, subjects: Sequence[Subject], candidate: Candidate):
    dist = candidate.distribution
    rows = []
    for s in subjects:
        pop = population_prediction(model, s, dist, candidate.beta)
        ind = individual_prediction(model, s, dist, candidate.beta, candidate.sigma)
        for t, y, p, q in zip(s.times, s.observations, pop, ind):
            rows.append([str(s.id), _f(t), _f(y), _f(p), _f(q)])
    return rows


def result_record(result: NPSAResult, model: Model, config: dict) -> dict:
    c = result.candidate
    return dict(
        model=model.name,
        mode=result.mode,
        loglik=result.loglik,
        annealed_loglik=result.annealed_loglik,
        points=c.distribution.points.tolist(),
        weights=c.distribution.weights.tolist(),
        beta=c.beta.tolist(),
        sigma=c.sigma,
        n_evals=result.n_evals,
        n_failed=result.n_failed,
        cycles=result.cycles,
        converged=result.converged,
        acceptance=result.acceptance,
        d_value=result.d_value,
        d_max=result.d_max,
        trace=result.trace,
        config=config,
    )


def candidate_from_record(record: dict) -> Candidate:
    dist = DiscreteDistribution(np.array(record["points"], dtype=float), np.array(record["weights"], dtype=float), normalize=True)
    return Candidate(dist, np.array(record["beta"], dtype=float), record["sigma"])


def load_record(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def result_from_record(record: dict) -> NPSAResult:
    return NPSAResult(
        candidate=candidate_from_record(record),
        loglik=record["loglik"],
        mode=record["mode"],
        trace=record["trace"],
        n_evals=record["n_evals"],
        n_failed=record.get("n_failed", 0),
        cycles=record["cycles"],
        converged=record["converged"],
        acceptance=record.get("acceptance", {}),
        annealed_loglik=record.get("annealed_loglik"),
        d_value=record.get("d_value"),
        d_max=record.get("d_max"),
    )


def write_report(
    result: NPSAResult,
    model: Model,
    subjects: Sequence[Subject],
    out_dir: str,
    config: dict | None = None,
    prune_floor: float = 1e-5,
    merge_radius=None,
    workers: int | None = None,
    runinfo: bool = True,
) -> dict:
    """Write the result bundle into ``out_dir`` and return the summary
    values. ``runinfo`` adds the wall time and worker count in a separate
    file outside the reproducible bundle."""
    config = dict(config or {})
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir!r}: {exc.strerror}") from None
    if not os.access(out_dir, os.W_OK):
        raise OSError(f"output directory {out_dir!r} is not writable")

    cand = result.candidate
    names = list(model.descriptor.param_names)
    raw = cand.distribution.sorted()
    merged = prune_and_merge(cand.distribution, prune_floor, merge_radius)
    if merged.K > len(subjects):
        raise AssertionError("pruned distribution has more points than subjects")
    _write_csv(os.path.join(out_dir, "support_points.csv"), names + ["weight"], _support_rows(raw))
    _write_csv(os.path.join(out_dir, "support_points_merged.csv"), names + ["weight"], _support_rows(merged))

    pred = prediction_rows(model, subjects, cand)
    _write_csv(
        os.path.join(out_dir, "predictions.csv"),
        ["id", "time", "observed", "population", "individual"],
        pred,
    )
    observed = np.array([float(r[2]) for r in pred])
    individual = np.array([float(r[4]) for r in pred])
    fs = fit_statistics(observed, individual)

    if result.trace:
        keys = sorted(result.trace[0].keys())
        _write_csv(
            os.path.join(out_dir, "trace.csv"),
            keys,
            [[row[k] if isinstance(row[k], (str, bool, int)) else _f(row[k]) for k in keys] for row in result.trace],
        )
    else:
        _write_csv(os.path.join(out_dir, "trace.csv"), ["cycle"], [])

    d_rel = None
    if result.d_value is not None and result.loglik != 0:
        d_rel = result.d_value / abs(result.loglik)
    summary = dict(
        model=model.name,
        mode=result.mode,
        n_subjects=len(subjects),
        loglik=result.loglik,
        annealed_loglik=result.annealed_loglik,
        d_value=result.d_value,
        d_relative=d_rel,
        d_percent=None if d_rel is None else 100.0 * d_rel,
        K_raw=cand.distribution.K,
        K_merged=merged.K,
        beta=" ".join(_f(b) for b in cand.beta),
        sigma=cand.sigma,
        n_evals=result.n_evals,
        n_failed=result.n_failed,
        cycles=result.cycles,
        converged=result.converged,
        fit_slope=fs.slope,
        fit_intercept=fs.intercept,
        fit_r2=fs.r2,
        fit_rss=fs.rss,
    )
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        for key, value in summary.items():
            if isinstance(value, float):
                value = _f(value)
            fh.write(f"{key} = {'' if value is None else value}\n")
        for key in sorted(config):
            fh.write(f"config.{key} = {config[key]}\n")
    with open(os.path.join(out_dir, "result.json"), "w") as fh:
        json.dump(result_record(result, model, config), fh, indent=1, sort_keys=True)
        fh.write("\n")
    if runinfo:
        with open(os.path.join(out_dir, "runinfo.txt"), "w") as fh:
            fh.write(f"wall_time_s = {result.wall_time:.3f}\n")
            if workers is not None:
                fh.write(f"workers = {workers}\n")
    return summary
