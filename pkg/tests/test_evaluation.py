import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from astpe.evaluation import (NoPositionTableError, absolute_similarity, accuracy, average_precision,
                              cosine_similarity_matrix, mean_average_precision, pe_similarity,
                              read_matrix_csv, write_matrix_csv)
from astpe.patching import DESK_LAYOUT, PatchLayout

from oracles import average_precision_direct, map_direct


def test_worked_ap_example():
    assert average_precision([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx(5 / 6, abs=1e-15)


def test_perfect_ranking_is_one():
    targets = np.eye(4, dtype=int)
    scores = targets + 0.01 * np.arange(4)[:, None]
    assert mean_average_precision(scores, targets).value == 1.0


def test_classes_without_positives_are_skipped():
    scores = np.array([[0.9, 0.1], [0.2, 0.3]])
    targets = np.array([[1, 0], [0, 0]])
    res = mean_average_precision(scores, targets)
    assert res.skipped == [1] and res.value == 1.0


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        mean_average_precision(np.zeros((0, 3)), np.zeros((0, 3)))


def test_ties_broken_by_index():
    assert average_precision([0.5, 0.5], [0, 1]) == 0.5
    assert average_precision([0.5, 0.5], [1, 0]) == 1.0


@pytest.mark.parametrize("seed", range(20))
def test_random_8x5_matches_direct(seed):
    rng = np.random.default_rng(seed)
    scores = rng.random((8, 5))
    targets = (rng.random((8, 5)) < 0.4).astype(int)
    targets[0] = 1
    assert abs(mean_average_precision(scores, targets).value - map_direct(scores, targets)) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_map_invariant_to_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    scores = rng.normal(size=(12, 3))
    targets = (rng.random((12, 3)) < 0.5).astype(int)
    targets[0] = 1
    a = mean_average_precision(scores, targets).value
    b = mean_average_precision(np.exp(3 * scores) + 7, targets).value
    assert a == pytest.approx(b, abs=1e-12)


def test_single_class_map_equals_ap():
    rng = np.random.default_rng(0)
    s, t = rng.random(10), (rng.random(10) < 0.5).astype(int)
    t[0] = 1
    assert mean_average_precision(s[:, None], t[:, None]).value == average_precision(s, t)
    assert average_precision(s, t) == pytest.approx(average_precision_direct(list(s), list(t)), abs=1e-12)


def test_accuracy_counts():
    probs = np.eye(4)
    assert accuracy(probs, np.arange(4)) == 1.0
    assert accuracy(probs, (np.arange(4) + 1) % 4) == 0.0
    assert accuracy(probs, np.array([0, 1, 2, 0])) == 0.75
    assert accuracy(probs, np.eye(4)) == 1.0


def test_accuracy_tie_goes_to_lowest_class():
    assert accuracy(np.array([[0.5, 0.5]]), np.array([0])) == 1.0


# ---- similarity diagnostics

def test_cosine_diagonal_and_symmetry():
    v = np.random.default_rng(0).normal(size=(6, 9))
    s = cosine_similarity_matrix(v)
    np.testing.assert_array_equal(np.diag(s), 1.0)
    assert np.abs(s - s.T).max() <= 1e-12
    assert (s <= 1).all() and (s >= -1).all()


def test_orthogonal_rows_zero_off_diagonal():
    L = PatchLayout(4, 2, 1, 1)
    table = np.zeros((8, 8))
    table[np.arange(8), np.arange(8)] = 1.0
    for axis, n in (("time", 4), ("freq", 2)):
        s = absolute_similarity(table, L, axis)
        np.testing.assert_array_equal(s, np.eye(n))


def test_duplicated_time_columns():
    L = PatchLayout(4, 2, 1, 1)
    table = np.random.default_rng(0).normal(size=(8, 5)).reshape(4, 2, 5)
    table[3] = table[1]
    s = absolute_similarity(table.reshape(8, 5), L, "time")
    assert s[1, 3] == pytest.approx(1.0, abs=1e-12) and s[3, 1] == pytest.approx(1.0, abs=1e-12)


def test_pe_similarity_sources():
    rng = np.random.default_rng(0)
    L = DESK_LAYOUT
    s = pe_similarity({"pe.absolute": rng.normal(size=(32, 6))}, L, "time")
    assert s.shape == (8, 8)
    s = pe_similarity({"pe.absolute": rng.normal(size=(32, 6))}, L, "freq")
    assert s.shape == (4, 4)
    rel = {"blocks.0.rel.time": rng.normal(size=(15, 4)), "blocks.0.rel.freq": rng.normal(size=(7, 4))}
    assert pe_similarity(rel, L, "time").shape == (15, 15)
    assert pe_similarity(rel, L, "freq").shape == (7, 7)
    with pytest.raises(NoPositionTableError, match="input"):
        pe_similarity({"blocks.0.peg.kernel": np.zeros((4, 3, 3))}, L, "time")
    with pytest.raises(NoPositionTableError):
        pe_similarity({"cls": np.zeros(4)}, L, "time")


def test_matrix_csv_roundtrip(tmp_path):
    m = cosine_similarity_matrix(np.random.default_rng(1).normal(size=(5, 3)))
    write_matrix_csv(tmp_path / "m.csv", m)
    np.testing.assert_array_equal(read_matrix_csv(tmp_path / "m.csv"), m)
