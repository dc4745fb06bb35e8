import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autolabel.evaluation import (
    ConfusionMatrix,
    EmptyConfusionError,
    cluster_purity,
    confusion,
    miou_macc,
    optimal_mapping,
    write_report,
)


def brute_force_best_mass(counts: np.ndarray) -> int:
    """Oracle: exhaustive search over all injective pred->gt assignments."""
    k, g = counts.shape
    best = 0
    if k <= g:
        for perm in itertools.permutations(range(g), k):
            best = max(best, sum(int(counts[p, perm[p]]) for p in range(k)))
    else:
        for perm in itertools.permutations(range(k), g):
            best = max(best, sum(int(counts[perm[t], t]) for t in range(g)))
    return best


def mapping_mass(cm: ConfusionMatrix, mapping) -> int:
    return sum(int(cm.counts[p, t]) for p, t in mapping.items() if t is not None)


def test_confusion_diagonal():
    pred = np.array([[0, 0], [1, 1]], dtype=np.uint8)
    cm = confusion(pred, pred, 2, 2)
    assert cm.counts[0, 0] == 2 and cm.counts[1, 1] == 2
    assert cm.total == 4


def test_confusion_all_ignored():
    pred = np.full((3, 3), 255, dtype=np.uint8)
    gt = np.zeros((3, 3), dtype=np.uint8)
    cm = confusion(pred, gt, 2, 2)
    assert cm.total == 0


def test_confusion_hand_enumeration():
    pred = np.array([[0, 1], [1, 1]], dtype=np.uint8)
    gt = np.array([[0, 0], [1, 1]], dtype=np.uint8)
    cm = confusion(pred, gt, 2, 2)
    assert cm.counts[0, 0] == 1
    assert cm.counts[1, 0] == 1
    assert cm.counts[1, 1] == 2
    assert cm.counts[0, 1] == 0


def test_confusion_shape_mismatch():
    with pytest.raises(ValueError):
        confusion(np.zeros((2, 2), dtype=np.uint8), np.zeros((3, 3), dtype=np.uint8), 1, 1)


def test_confusion_accumulates_and_merges():
    a = ConfusionMatrix.zeros(2, 2)
    a.add(np.array([0], dtype=np.uint8), np.array([0], dtype=np.uint8))
    a.add(np.array([1], dtype=np.uint8), np.array([0], dtype=np.uint8))
    b = confusion(np.array([1], dtype=np.uint8), np.array([1], dtype=np.uint8), 2, 2)
    merged = a.merged(b)
    assert merged.counts[0, 0] == 1 and merged.counts[1, 0] == 1 and merged.counts[1, 1] == 1


def test_mapping_examples():
    cm = ConfusionMatrix(np.array([[5, 1], [0, 4]], dtype=np.uint64))
    m = optimal_mapping(cm)
    assert m == {0: 0, 1: 1}
    assert mapping_mass(cm, m) == 9

    diag = ConfusionMatrix(np.diag([3, 2, 7]).astype(np.uint64))
    assert optimal_mapping(diag) == {0: 0, 1: 1, 2: 2}

    swapped = ConfusionMatrix(np.array([[0, 7], [6, 0]], dtype=np.uint64))
    m = optimal_mapping(swapped)
    assert m == {0: 1, 1: 0}
    assert mapping_mass(swapped, m) == 13


def test_mapping_surplus_pred_maps_to_none():
    cm = ConfusionMatrix(np.array([[5], [4], [1]], dtype=np.uint64))
    m = optimal_mapping(cm)
    assert sum(1 for t in m.values() if t is not None) == 1
    assert m[0] == 0  # highest-mass row wins


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    k=st.integers(1, 6),
    g=st.integers(1, 6),
)
def test_mapping_matches_brute_force(seed, k, g):
    rng = np.random.default_rng(seed)
    cm = ConfusionMatrix(rng.integers(0, 50, size=(k, g)).astype(np.uint64))
    got = mapping_mass(cm, optimal_mapping(cm))
    assert got == brute_force_best_mass(cm.counts)


def test_metrics_perfect_prediction():
    pred = np.array([[0, 1], [2, 1]], dtype=np.uint8)
    report = miou_macc(confusion(pred, pred, 3, 3))
    assert report.miou == 1.0 and report.macc == 1.0


def test_metrics_hand_computed_seven_twelfths():
    pred = np.array([[0, 1], [1, 1]], dtype=np.uint8)
    gt = np.array([[0, 0], [1, 1]], dtype=np.uint8)
    report = miou_macc(confusion(pred, gt, 2, 2))
    assert report.per_class_iou[0] == 0.5
    assert report.per_class_iou[1] == 2 / 3
    assert report.miou == pytest.approx(7 / 12, abs=1e-12)


def test_metrics_constant_prediction():
    pred = np.zeros((2, 2), dtype=np.uint8)
    gt = np.array([[0, 0], [1, 1]], dtype=np.uint8)
    report = miou_macc(confusion(pred, gt, 1, 2))
    assert report.per_class_iou[0] == 0.5
    assert report.per_class_iou[1] == 0.0
    assert report.miou == 0.25


def test_metrics_unmatched_pred_counts_as_error():
    # two pred classes split gt class 0 evenly; only one can match
    cm = ConfusionMatrix(np.array([[2], [2]], dtype=np.uint64))
    report = miou_macc(cm)
    assert report.per_class_iou[0] == 0.5
    assert report.macc == 0.5


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_metrics_invariant_under_pred_relabeling(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 6))
    counts = rng.integers(0, 30, size=(k, k)).astype(np.uint64)
    if counts.sum() == 0:
        counts[0, 0] = 1
    base = miou_macc(ConfusionMatrix(counts))
    perm = rng.permutation(k)
    shuffled = miou_macc(ConfusionMatrix(counts[perm]))
    assert shuffled.miou == pytest.approx(base.miou, rel=1e-12)
    assert shuffled.macc == pytest.approx(base.macc, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_metric_bounds(seed):
    rng = np.random.default_rng(seed)
    counts = rng.integers(0, 20, size=(4, 5)).astype(np.uint64)
    if counts.sum() == 0:
        counts[1, 2] = 3
    report = miou_macc(ConfusionMatrix(counts))
    for t, iou in report.per_class_iou.items():
        acc = report.per_class_acc.get(t, iou)
        assert 0.0 <= iou <= acc <= 1.0


def test_empty_matrix_raises():
    with pytest.raises(EmptyConfusionError):
        miou_macc(ConfusionMatrix.zeros(2, 2))


def test_purity():
    cm = ConfusionMatrix(np.array([[8, 2], [0, 10]], dtype=np.uint64))
    assert cluster_purity(cm) == 18 / 20
    perfect = ConfusionMatrix(np.diag([5, 5]).astype(np.uint64))
    assert cluster_purity(perfect) == 1.0


def test_write_report(tmp_path):
    pred = np.array([[0, 1], [1, 1]], dtype=np.uint8)
    gt = np.array([[0, 0], [1, 1]], dtype=np.uint8)
    report = miou_macc(confusion(pred, gt, 2, 2))
    path = tmp_path / "report.tsv"
    write_report(report, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "class\tmatched_pred\tiou\tacc"
    assert lines[-1].startswith("mean\t-\t0.583333")
