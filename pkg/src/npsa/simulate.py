"""Synthetic datasets for the one- and two-compartment examples.

Each subject is observed at t = 0.2, 0.4, ..., 1.0 after a fixed dose of
20 units, with additive N(0, 0.5^2) noise. Parameter draws:

onecomp   K ~ equal mixture of N(0.5, 0.05^2) and N(1.5, 0.15^2);
          V ~ N(1.0, 0.2^2)
twocomp   K ~ equal mixture of N(0.5, 0.06^2) and N(0.8, 0.06^2);
          V ~ N(1.0, 0.2^2), Kcp ~ N(0.5, 0.2^2), Kpc ~ N(2.0, 0.1^2)

Draws with a non-positive component are redrawn, since the models are
undefined there.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .io import write_dataset
from .models import onecomp_predict, twocomp_predict
from .types import Subject

TIMES = np.array([0.2, 0.4, 0.6, 0.8, 1.0])
NOISE_SD = 0.5
EXAMPLES = ("onecomp", "twocomp")


@dataclass
class SyntheticData:
    example: str
    subjects: list[Subject]
    param_names: tuple[str, ...]
    truth: np.ndarray  # (n, d) drawn parameters
    component: np.ndarray  # mixture component of K per subject


def _positive(draw):
    while True:
        v = draw()
        if v > 0:
            return v


def _draw_onecomp(rng):
    comp = int(rng.integers(2))
    mean, sd = ((0.5, 0.05), (1.5, 0.15))[comp]
    K = _positive(lambda: rng.normal(mean, sd))
    V = _positive(lambda: rng.normal(1.0, 0.2))
    return comp, np.array([K, V]), onecomp_predict(K, V, TIMES)


def _draw_twocomp(rng):
    comp = int(rng.integers(2))
    mean = (0.5, 0.8)[comp]
    K = _positive(lambda: rng.normal(mean, 0.06))
    V = _positive(lambda: rng.normal(1.0, 0.2))
    Kcp = _positive(lambda: rng.normal(0.5, 0.2))
    Kpc = _positive(lambda: rng.normal(2.0, 0.1))
    return comp, np.array([K, V, Kcp, Kpc]), twocomp_predict(K, V, Kcp, Kpc, TIMES)


def generate_synthetic(example: str, n: int, seed: int) -> SyntheticData:
    if example not in EXAMPLES:
        raise ValueError(f"unknown example {example!r}; choose from {EXAMPLES}")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    draw = _draw_onecomp if example == "onecomp" else _draw_twocomp
    names = ("K", "V") if example == "onecomp" else ("K", "V", "Kcp", "Kpc")
    subjects, truth, comps = [], [], []
    width = len(str(n))
    for i in range(n):
        comp, theta, pred = draw(rng)
        y = pred + NOISE_SD * rng.standard_normal(TIMES.size)
        subjects.append(Subject(f"{i + 1:0{width}d}", TIMES.copy(), y))
        truth.append(theta)
        comps.append(comp)
    return SyntheticData(example, subjects, names, np.array(truth), np.array(comps))


def truth_path(data_path: str | os.PathLike) -> str:
    root, ext = os.path.splitext(os.fspath(data_path))
    return f"{root}_truth{ext or '.csv'}"


def write_synthetic(data: SyntheticData, path: str | os.PathLike) -> str:
    """Write the dataset CSV and a ``*_truth.csv`` file next to it."""
    write_dataset(data.subjects, path)
    tpath = truth_path(path)
    with open(tpath, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("id", "component") + data.param_names)
        for s, comp, theta in zip(data.subjects, data.component, data.truth):
            writer.writerow([s.id, int(comp)] + [repr(float(v)) for v in theta])
    return tpath
