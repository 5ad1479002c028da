"""Dataset CSV reading and writing.

One row per event, grouped by subject id:

    id, time, out, dose, duration, route, [covariates...], [n_trials, x]

A row with a value in ``out`` is an observation; a row with a value in
``dose`` is a dose (``duration`` 0 or empty means bolus). A row may carry
both. Covariates are constant within a subject. ``n_trials`` and ``x`` are
per-observation columns used by the logistic model.
"""

from __future__ import annotations

import csv
import os
from typing import Iterable, Sequence

import numpy as np

from .models import Model
from .types import DatasetError, DoseEvent, Subject

BASE_COLUMNS = ("id", "time", "out", "dose", "duration", "route")
AUX_COLUMNS = ("n_trials", "x")


def _number(text: str, line: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DatasetError(f"line {line}: column {column!r}: not a number: {text!r}") from None
    if not np.isfinite(value):
        raise DatasetError(f"line {line}: column {column!r}: non-finite value")
    return value


class _Builder:
    def __init__(self, sid: str):
        self.id = sid
        self.times: list[float] = []
        self.obs: list[float] = []
        self.doses: list[DoseEvent] = []
        self.covariates: dict[str, float] = {}
        self.aux: dict[str, list[float]] = {}

    def build(self) -> Subject:
        return Subject(self.id, np.array(self.times), np.array(self.obs), tuple(self.doses), self.covariates, self.aux)


def load_dataset(path: str | os.PathLike, model: Model | None = None) -> list[Subject]:
    """Read a dataset CSV.

    With ``model`` given, columns beyond the base set must be covariates
    or auxiliary columns that model uses.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        missing = [c for c in ("id", "time") if c not in header]
        if missing:
            raise DatasetError(f"{path}: missing column(s) {missing}")
        if len(set(header)) != len(header):
            raise DatasetError(f"{path}: duplicate column names")
        extra = [c for c in header if c not in BASE_COLUMNS]
        aux_cols = [c for c in extra if c in AUX_COLUMNS]
        cov_cols = [c for c in extra if c not in AUX_COLUMNS]
        if model is not None:
            allowed = set(model.descriptor.covariates) | set(model.descriptor.aux_fields)
            unknown = [c for c in extra if c not in allowed]
            if unknown:
                raise DatasetError(f"{path}: column {unknown[0]!r} is not used by model {model.name!r}")
            aux_cols = [c for c in aux_cols if c in model.descriptor.aux_fields]
        col = {name: i for i, name in enumerate(header)}

        subjects: list[_Builder] = []
        seen: set[str] = set()
        for line, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DatasetError(f"line {line}: expected {len(header)} fields, found {len(row)}")
            cell = {name: row[i].strip() for name, i in col.items()}
            sid = cell["id"]
            if not sid:
                raise DatasetError(f"line {line}: empty id")
            if not subjects or subjects[-1].id != sid:
                if sid in seen:
                    raise DatasetError(f"line {line}: rows for subject {sid!r} are not contiguous")
                seen.add(sid)
                subjects.append(_Builder(sid))
            b = subjects[-1]
            t = _number(cell["time"], line, "time")
            for name in cov_cols:
                if cell[name]:
                    v = _number(cell[name], line, name)
                    if b.covariates.setdefault(name, v) != v:
                        raise DatasetError(f"line {line}: covariate {name!r} changes within subject {sid!r}")
            dose = cell.get("dose", "")
            if dose:
                duration = cell.get("duration", "")
                b.doses.append(
                    DoseEvent(
                        t,
                        _number(dose, line, "dose"),
                        _number(duration, line, "duration") if duration else 0.0,
                        cell.get("route", ""),
                    )
                )
            out = cell.get("out", "")
            if out:
                b.times.append(t)
                b.obs.append(_number(out, line, "out"))
                for name in aux_cols:
                    if not cell[name]:
                        raise DatasetError(f"line {line}: column {name!r} empty on an observation row")
                    b.aux.setdefault(name, []).append(_number(cell[name], line, name))
            elif not dose:
                raise DatasetError(f"line {line}: row has neither an observation nor a dose")
    if not subjects:
        raise DatasetError(f"{path}: no data rows")
    return [b.build() for b in subjects]


def _fmt(value: float) -> str:
    return repr(float(value))


def dataset_rows(subjects: Sequence[Subject]) -> tuple[list[str], list[list[str]]]:
    covs = sorted({k for s in subjects for k in s.covariates})
    auxes = [c for c in AUX_COLUMNS if any(c in s.aux for s in subjects)]
    header = list(BASE_COLUMNS) + covs + auxes
    rows = []
    for s in subjects:
        cov_cells = [_fmt(s.covariates[c]) if c in s.covariates else "" for c in covs]
        # doses sort before observations at equal times
        events = [(d.time, 0, j) for j, d in enumerate(s.dose_events)]
        events += [(t, 1, j) for j, t in enumerate(s.times)]
        for t, kind, j in sorted(events):
            if kind == 0:
                d = s.dose_events[j]
                body = ["", _fmt(d.amount), _fmt(d.duration), d.route]
                aux_cells = [""] * len(auxes)
            else:
                body = [_fmt(s.observations[j]), "", "", ""]
                aux_cells = [_fmt(s.aux[c][j]) if c in s.aux else "" for c in auxes]
            rows.append([str(s.id), _fmt(t)] + body + cov_cells + aux_cells)
    return header, rows


def write_dataset(subjects: Iterable[Subject], path: str | os.PathLike) -> None:
    header, rows = dataset_rows(list(subjects))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
