import csv

import numpy as np
import pytest

from conftest import onecomp_subjects, wang_subjects
from npsa.likelihood import build_matrix
from npsa.models import get_model
from npsa.report import BUNDLE_FILES, fit_statistics, write_report
from npsa.simulate import generate_synthetic, truth_path, write_synthetic
from npsa.solver import NPSAResult
from npsa.types import Candidate, DatasetError, DiscreteDistribution, DoseEvent, Subject
from npsa.io import load_dataset, write_dataset


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_two_subject_example(tmp_path):
    p = write(
        tmp_path,
        "id,time,out,dose,duration,route,wt\n"
        "1,0,,100,1,iv,70\n"
        "1,0.5,2.5,,,,70\n"
        "1,1.0,3.5,,,,70\n"
        "2,0,,200,0,oral,55\n"
        "2,2.0,1.25,,,,55\n",
    )
    a, b = load_dataset(p, get_model("voriconazole"))
    assert a.id == "1" and b.id == "2"
    assert a.times.tolist() == [0.5, 1.0] and a.observations.tolist() == [2.5, 3.5]
    assert a.dose_events == (DoseEvent(0.0, 100.0, 1.0, "iv"),)
    assert b.dose_events[0].duration == 0.0 and b.dose_events[0].route == "oral"
    assert a.covariates == {"wt": 70.0} and b.covariates == {"wt": 55.0}


def test_dose_and_observation_on_one_row(tmp_path):
    p = write(tmp_path, "id,time,out,dose\n1,0,0.0,50\n1,1,4.0,\n")
    (s,) = load_dataset(p)
    assert s.times.tolist() == [0.0, 1.0]
    assert len(s.dose_events) == 1


def test_round_trip(tmp_path):
    subjects = wang_subjects(5, seed=2)
    subjects[0] = Subject(
        subjects[0].id, subjects[0].times, subjects[0].observations,
        (DoseEvent(0.0, 10.0, 2.0, "iv"),), {}, subjects[0].aux,
    )
    p = tmp_path / "w.csv"
    write_dataset(subjects, p)
    back = load_dataset(p)
    for s, r in zip(subjects, back):
        assert s.id == r.id
        np.testing.assert_array_equal(s.times, r.times)
        np.testing.assert_array_equal(s.observations, r.observations)
        assert tuple(s.dose_events) == tuple(r.dose_events)
        for k in s.aux:
            np.testing.assert_array_equal(s.aux[k], r.aux[k])
    p2 = tmp_path / "w2.csv"
    write_dataset(back, p2)
    assert p.read_bytes() == p2.read_bytes()


@pytest.mark.parametrize(
    "text, pattern",
    [
        ("", "empty file"),
        ("id,out\n1,2\n", "missing"),
        ("id,time,out\n1,0,1\n1,1\n", "line 3: expected 3 fields"),
        ("id,time,out\n1,0,abc\n", "line 2: .*not a number"),
        ("id,time,out\n1,0,1\n2,0,1\n1,1,1\n", "line 4: .*not contiguous"),
        ("id,time,out,dose\n1,0,,\n", "line 2: .*neither"),
        ("id,time,out\n1,nan,1\n", "line 2: .*non-finite"),
        ("id,time,out\n", "no data rows"),
    ],
)
def test_malformed(tmp_path, text, pattern):
    with pytest.raises(DatasetError, match=pattern):
        load_dataset(write(tmp_path, text))


def test_unknown_column_for_model(tmp_path):
    p = write(tmp_path, "id,time,out,height\n1,0,1,180\n")
    with pytest.raises(DatasetError, match="height"):
        load_dataset(p, get_model("onecomp"))
    assert load_dataset(p)[0].covariates == {"height": 180.0}


def test_covariate_must_be_constant(tmp_path):
    p = write(tmp_path, "id,time,out,wt\n1,0,1,70\n1,1,1,71\n")
    with pytest.raises(DatasetError, match="line 3: covariate 'wt'"):
        load_dataset(p)


def test_simulated_layout(tmp_path):
    data = generate_synthetic("onecomp", 100, seed=4)
    p = tmp_path / "sim.csv"
    write_synthetic(data, p)
    with open(p) as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 1 + 500
    assert len(load_dataset(p)) == 100
    with open(truth_path(p)) as fh:
        assert len(list(csv.reader(fh))) == 101


def test_simulation_repeatable(tmp_path):
    for example in ("onecomp", "twocomp"):
        a, b = tmp_path / f"a_{example}.csv", tmp_path / f"b_{example}.csv"
        write_synthetic(generate_synthetic(example, 30, 11), a)
        write_synthetic(generate_synthetic(example, 30, 11), b)
        assert a.read_bytes() == b.read_bytes()
        assert generate_synthetic(example, 30, 12).truth.tolist() != generate_synthetic(example, 30, 11).truth.tolist()


def test_simulated_parameter_moments():
    data = generate_synthetic("onecomp", 100_000, seed=0)
    assert abs(data.truth[:, 1].mean() - 1.0) <= 0.01
    low = data.truth[data.component == 0, 0]
    assert abs(low.mean() - 0.5) <= 0.01
    assert (data.truth > 0).all()


def _result(candidate, subjects, model):
    ll = build_matrix(model, subjects, candidate).objective().loglik
    return NPSAResult(candidate, ll, "npsa3", [{"cycle": 0, "best_energy": -ll}], 0, 0, 1, True, {})


def test_report_single_point(tmp_path):
    model = get_model("onecomp")
    subjects = onecomp_subjects([(1.0, 1.0)] * 3)
    cand = Candidate(DiscreteDistribution(np.array([[1.0, 1.0]]), np.array([1.0])))
    summary = write_report(_result(cand, subjects, model), model, subjects, tmp_path / "out")
    for name in BUNDLE_FILES:
        assert (tmp_path / "out" / name).exists()
    with open(tmp_path / "out" / "support_points_merged.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["K", "V", "weight"] and len(rows) == 2
    assert summary["K_merged"] == 1
    # noise-free data predicted exactly
    assert summary["fit_r2"] == pytest.approx(1.0)
    assert summary["fit_rss"] == pytest.approx(0.0, abs=1e-20)


def test_report_bound_holds_for_duplicates(tmp_path):
    model = get_model("onecomp")
    subjects = onecomp_subjects([(0.5, 1.0), (1.5, 1.0)], noise=0.5)
    pts = np.array([[0.5, 1.0], [0.5, 1.0 + 1e-6], [1.5, 1.0], [1.5 + 1e-6, 1.0]])
    cand = Candidate(DiscreteDistribution(pts, np.full(4, 0.25)))
    radius = 1e-3 * model.default_bounds().width()
    summary = write_report(_result(cand, subjects, model), model, subjects, tmp_path / "o", merge_radius=radius)
    assert summary["K_raw"] == 4 and summary["K_merged"] == 2


def test_fit_statistics_line():
    fs = fit_statistics([2.0, 4.0, 6.0], [1.0, 2.0, 3.0])
    assert fs.slope == pytest.approx(2.0) and fs.intercept == pytest.approx(0.0, abs=1e-12)
    assert fs.r2 == pytest.approx(1.0)
    assert fs.rss == pytest.approx(1 + 4 + 9)
