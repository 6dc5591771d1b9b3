import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hetcl.metrics import (MetricReport, aggregate, average_forgetting, average_performance,
                           emit_report, forgetting_aware_gap, forgetting_magnitude,
                           read_matrix, render_heatmap, write_matrix)

WORKED = np.array([[0.9, np.nan], [0.8, 0.7]])


def test_worked_example():
    assert average_performance(WORKED) == pytest.approx(0.75)
    assert average_forgetting(WORKED) == pytest.approx(-0.1)
    assert forgetting_magnitude(WORKED) == pytest.approx(0.1)


def test_single_task_forgetting_absent():
    m = np.array([[0.6]])
    assert average_performance(m) == 0.6
    assert average_forgetting(m) is None and forgetting_magnitude(m) is None


def test_fag():
    assert forgetting_aware_gap(0.9, 0.6) == pytest.approx(0.3)


@settings(max_examples=50, deadline=None)
@given(T=st.integers(2, 6), seed=st.integers(0, 10**6))
def test_two_path_agreement(T, seed):
    # entries on a 1/8 grid, so every sum is exact in binary floating point
    m = np.random.default_rng(seed).integers(0, 9, size=(T, T)) / 8.0
    m[np.triu_indices(T, 1)] = np.nan
    ap = sum(m[T - 1, j] for j in range(T)) / T
    af = sum(m[T - 1, j] - m[j, j] for j in range(T - 1)) / (T - 1)
    assert average_performance(m) == ap
    assert average_forgetting(m) == af


def test_matrix_round_trip_and_heatmap(tmp_path):
    write_matrix(WORKED, tmp_path / "m.csv")
    text = (tmp_path / "m.csv").read_text().splitlines()
    assert text[0] == "after_task,task_0,task_1"
    assert text[1].endswith(",")             # blank above the diagonal
    back = read_matrix(tmp_path / "m.csv")
    np.testing.assert_array_equal(np.isnan(back), np.isnan(WORKED))
    np.testing.assert_allclose(back[~np.isnan(back)], WORKED[~np.isnan(WORKED)])
    assert "0.90" in render_heatmap(WORKED) or "90" in render_heatmap(WORKED)


def test_aggregate():
    assert aggregate([0.5]) == (0.5, 0.0)
    mean, std = aggregate([1.0, 2.0, 3.0])
    assert mean == 2.0 and std == pytest.approx(1.0)      # sample std


@settings(max_examples=30, deadline=None)
@given(vals=st.lists(st.floats(0, 1), min_size=1, max_size=8), seed=st.integers(0, 100))
def test_aggregate_order_invariant(vals, seed):
    perm = list(np.random.default_rng(seed).permutation(vals))
    a, b = aggregate(vals), aggregate(perm)
    assert a[0] == pytest.approx(b[0]) and a[1] == pytest.approx(b[1], abs=1e-12)


def test_emit_report(tmp_path):
    runs = [MetricReport.from_matrix(WORKED, "hero", s, fag=0.1) for s in (0, 1)]
    emit_report(runs, tmp_path)
    lines = (tmp_path / "summary.csv").read_text().splitlines()
    assert lines[0].split(",") == ["strategy", "seed", "AP", "AF", "AF_magnitude", "FaG"]
    assert any(l.startswith("hero,mean") for l in lines)
    assert (tmp_path / "matrix_hero_0.csv").exists()


def test_emit_report_drops_fag_column(tmp_path):
    emit_report([MetricReport.from_matrix(WORKED, "finetune", 0)], tmp_path)
    header = (tmp_path / "summary.csv").read_text().splitlines()[0]
    assert "FaG" not in header


def test_emit_report_empty(tmp_path):
    with pytest.raises(ValueError):
        emit_report([], tmp_path)
