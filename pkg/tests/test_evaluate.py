import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from catnet.evaluate import (
    AccuracyMatrix,
    accuracy,
    compute_bwt,
    compute_bwt_delta,
    compute_mean_accuracy,
    heatmap_pixels,
    initial_accuracy,
    metrics_document,
    metrics_from_matrix,
    read_pgm,
    summarize_means,
    write_matrix_csv,
    write_pgm,
)
from catnet.exemplar import FeatureMeanMatrix


def lower(rows):
    n = len(rows)
    return AccuracyMatrix.from_list([list(r) + [None] * (n - len(r)) for r in rows])


def test_accuracy_cases():
    assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    assert accuracy([1, 2, 3], [0, 0, 0]) == 0.0
    assert accuracy([1, 2, 3, 4], [1, 2, 3, 0]) == 0.75
    with pytest.raises(ValueError):
        accuracy([], [])


def test_bwt_hand_example():
    r = lower([[0.95], [0.8, 0.9], [0.7, 0.9, 0.85]])
    assert compute_bwt(r) == pytest.approx(0.8, abs=1e-15)


def test_bwt_constant():
    r = lower([[1.0], [0.6, 0.2], [0.6, 0.6, 0.3], [0.6, 0.6, 0.6, 0.9]])
    assert compute_bwt(r) == pytest.approx(0.6, abs=1e-15)


def test_bwt_single_task_is_an_error():
    with pytest.raises(ValueError, match="single task"):
        compute_bwt(lower([[0.9]]))


def test_bwt_delta_is_separate():
    r = lower([[0.9], [0.6, 0.8]])
    assert compute_bwt(r) == pytest.approx(0.6)
    assert compute_bwt_delta(r) == pytest.approx(-0.3)


def test_mean_accuracy_cases():
    assert compute_mean_accuracy(lower([[1.0], [0.5, 0.5], [0.9, 0.8, 0.7]])) == pytest.approx(0.8, abs=1e-15)
    assert compute_mean_accuracy(lower([[0.95]])) == 0.95


def test_initial_accuracy():
    r = lower([[0.93], [0.5, 0.6]])
    assert initial_accuracy(r) == 0.93
    one = lower([[0.77]])
    assert initial_accuracy(one) == compute_mean_accuracy(one)


def test_upper_triangle_stays_undefined():
    r = AccuracyMatrix(3)
    r[1, 0] = 0.5
    with pytest.raises(IndexError):
        r[0, 2] = 0.5
    with pytest.raises(ValueError):
        r[1, 1] = 1.5
    assert r.to_list()[0] == [None, None, None]


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 7), st.data())
def test_metrics_bounded_by_defined_entries(n, data):
    vals = data.draw(st.lists(st.floats(0, 1), min_size=n * (n + 1) // 2, max_size=n * (n + 1) // 2))
    it = iter(vals)
    r = lower([[next(it) for _ in range(i + 1)] for i in range(n)])
    lo, hi = min(vals), max(vals)
    for m in (compute_bwt(r), compute_mean_accuracy(r)):
        assert lo - 1e-12 <= m <= hi + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.randoms(use_true_random=False))
def test_bwt_depends_only_on_lower_triangle_values(n, rnd):
    rows = [[rnd.random() for _ in range(i + 1)] for i in range(n)]
    r = lower(rows)
    idx = [(i, j) for i in range(n) for j in range(i)]
    vals = [rows[i][j] for i, j in idx]
    rnd.shuffle(vals)
    for (i, j), v in zip(idx, vals):
        rows[i][j] = v
    assert compute_bwt(lower(rows)) == pytest.approx(compute_bwt(r), abs=1e-12)


def test_summarize_means_cases():
    s = FeatureMeanMatrix([0, 1], np.array([[0.2, 0.4], [0.0, 0.0]]))
    (out,) = summarize_means(s)
    np.testing.assert_allclose(out, [0.3, 0.0])


def test_summarize_means_per_stream(rng):
    m = rng.normal(size=(5, 7))
    s = FeatureMeanMatrix(list(range(5)), m, [3, 4])
    a, b = summarize_means(s)
    for k in range(5):
        assert a[k] == pytest.approx(sum(m[k, :3]) / 3, abs=1e-14)
        assert b[k] == pytest.approx(sum(m[k, 3:]) / 4, abs=1e-14)


def test_metrics_report_fields():
    r = lower([[0.9], [0.8, 1.0]])
    m = metrics_from_matrix(r, micro_accuracy=0.85)
    doc = metrics_document("run", "abc", r, m)
    assert doc["R"] == [[0.9, None], [0.8, 1.0]]
    assert doc["bwt"] == 0.8 and doc["mean_accuracy"] == 0.9 and doc["initial_accuracy"] == 0.9
    assert doc["per_task_final"] == [0.8, 1.0]
    json.dumps(doc)


def test_matrix_csv(tmp_path):
    write_matrix_csv(tmp_path / "R.csv", lower([[0.5], [0.25, 1.0]]))
    assert (tmp_path / "R.csv").read_text() == "model,Te_0,Te_1\nM_0,0.5,\nM_1,0.25,1.0\n"


def test_heatmap_lighter_is_better(tmp_path):
    r = lower([[1.0], [0.2, 0.6]])
    px = heatmap_pixels(r, cell=2)
    assert px.shape == (4, 4)
    assert px[0, 0] == 255 and px[2, 0] < px[2, 2] < px[0, 0]
    assert px[0, 2] == 0
    write_pgm(tmp_path / "h.pgm", px)
    np.testing.assert_array_equal(read_pgm(tmp_path / "h.pgm"), px)
