import numpy as np
import pytest

from solarsight.errors import UsageError
from solarsight.metrics import (
    EvalReport, jaccard, jaccard_macro, jaccard_mean, relaxed_accuracy,
    relaxed_curve, top1_and_confusion, write_confusion_csv, write_report_csv,
    write_report_text,
)
from solarsight.panelgen import bin_power_loss
from solarsight.rng import SplitMix64


# ---------------------------------------------------------------------------
# top-1 / confusion

def test_perfect_predictions():
    acc, conf = top1_and_confusion([0, 1, 2], [0, 1, 2], 3)
    assert acc == 1.0
    assert np.array_equal(conf, np.eye(3, dtype=int))


def test_all_wrong_predictions():
    acc, conf = top1_and_confusion([1, 2, 0], [0, 1, 2], 3)
    assert acc == 0.0
    assert np.trace(conf) == 0


def test_counting_oracle_example():
    acc, conf = top1_and_confusion([0, 1, 1], [0, 1, 0], 2)
    assert acc == pytest.approx(2 / 3)
    assert np.array_equal(conf, np.array([[1, 1], [0, 1]]))


def test_confusion_rows_sum_to_class_counts():
    rng = SplitMix64(1)
    targets = (rng.uniform(200) * 4).astype(int)
    preds = (rng.uniform(200) * 4).astype(int)
    acc, conf = top1_and_confusion(preds, targets, 4)
    assert conf.sum() == 200
    assert np.array_equal(conf.sum(axis=1), np.bincount(targets, minlength=4))


def test_empty_predictions_are_usage_error():
    with pytest.raises(UsageError):
        top1_and_confusion([], [], 4)


# ---------------------------------------------------------------------------
# relaxed accuracy

def test_alpha_zero_reduces_to_top1():
    rng = SplitMix64(2)
    losses = rng.uniform(500)  # continuous draws never hit bin edges exactly
    true_bins = np.array([bin_power_loss(l, 8) for l in losses])
    preds = true_bins.copy()
    preds[::5] = (preds[::5] + 1) % 8  # inject errors
    top1, _ = top1_and_confusion(preds, true_bins, 8)
    assert relaxed_accuracy(preds, losses, 8, 0.0) == pytest.approx(top1)


def test_boundary_interval_example():
    # bin 1 of 8 spans [0.125, 0.25); with alpha=0.01 a true loss of 0.251
    # falls inside [0.115, 0.26] and counts as correct
    assert relaxed_accuracy([1], [0.251], 8, 0.01) == 1.0
    assert relaxed_accuracy([1], [0.251], 8, 0.0) == 0.0


def test_alpha_one_covers_everything():
    rng = SplitMix64(3)
    losses = rng.uniform(100)
    preds = (rng.uniform(100) * 8).astype(int)
    assert relaxed_accuracy(preds, losses, 8, 1.0) == 1.0


def test_relaxed_monotone_in_alpha():
    rng = SplitMix64(4)
    for trial in range(10):
        losses = rng.uniform(50)
        preds = (rng.uniform(50) * 8).astype(int)
        grid = np.linspace(0.0, 0.2, 50)
        accs = [relaxed_accuracy(preds, losses, 8, a) for a in grid]
        assert all(b >= a - 1e-12 for a, b in zip(accs, accs[1:]))


def test_relaxed_curve_shape():
    curve = relaxed_curve([0, 1], [0.05, 0.3], 4, [0.0, 0.01, 0.02])
    assert [a for a, _ in curve] == [0.0, 0.01, 0.02]


# ---------------------------------------------------------------------------
# jaccard

def grid(spec: str) -> np.ndarray:
    return np.array([[int(ch) for ch in row] for row in spec.split()])


def test_identical_maps_score_one():
    gt = grid("1122 1133 1133 1122")
    assert jaccard(gt, gt) == 1.0


def test_disjoint_soiling_scores_zero():
    gt = grid("22 23 22")
    pred = grid("32 22 22")
    assert jaccard(pred, gt) == 0.0


def test_superset_with_equal_extra_scores_half():
    gt = np.full((4, 4), 2)
    gt[0, :2] = 3           # two soiling pixels
    pred = gt.copy()
    pred[1, :2] = 3         # equal-sized extra region
    assert jaccard(pred, gt) == 0.5


def test_background_pixels_are_excluded():
    gt = grid("11 23")
    pred_bgsoil = grid("31 23")  # soiling predicted on background only
    assert jaccard(pred_bgsoil, gt) == 1.0  # the extra pixel sits outside gt panel
    assert jaccard(pred_bgsoil, gt, exclude_background=False) == 0.5


def test_empty_union_scores_one():
    gt = np.full((3, 3), 2)
    pred = np.full((3, 3), 2)
    assert jaccard(pred, gt) == 1.0


def test_jaccard_symmetry_and_bounds():
    rng = SplitMix64(5)
    for _ in range(10):
        a = (rng.uniform(36).reshape(6, 6) * 3).astype(int) + 1
        b = (rng.uniform(36).reshape(6, 6) * 3).astype(int) + 1
        merged_region = np.where((a != 1) & (b != 1), 1, 0)
        ji_ab = jaccard(a, b, exclude_background=False)
        ji_ba = jaccard(b, a, exclude_background=False)
        assert ji_ab == pytest.approx(ji_ba)
        assert 0.0 <= ji_ab <= 1.0


def test_jaccard_misaligned_is_usage_error():
    with pytest.raises(UsageError):
        jaccard(np.ones((2, 2)), np.ones((3, 3)))


def test_macro_mode_averages_panel_and_soiling():
    gt = grid("22 33")
    pred = grid("22 22")
    macro = jaccard_macro(pred, gt)
    assert macro == pytest.approx((0.5 + 0.0) / 2)


def test_mean_vs_pooled_averaging():
    gt1 = np.full((2, 2), 2); gt1[0, 0] = 3
    pr1 = gt1.copy()
    gt2 = np.full((2, 2), 2); gt2[:, :] = 3
    pr2 = np.full((2, 2), 2)
    per_image = jaccard_mean([pr1, pr2], [gt1, gt2])
    pooled = jaccard_mean([pr1, pr2], [gt1, gt2], average="pooled")
    assert per_image == pytest.approx((1.0 + 0.0) / 2)
    assert pooled == pytest.approx(1 / 5)


def test_report_writers(tmp_path):
    rep = EvalReport(top1=0.75, confusion=np.array([[2, 1], [0, 3]]),
                     relaxed=[(0.0, 0.75), (0.01, 0.8)], ji_mean=0.5,
                     extras={"ji_pyramid": 0.25})
    write_report_csv(tmp_path / "r.csv", rep)
    write_confusion_csv(tmp_path / "c.csv", rep.confusion)
    write_report_text(tmp_path / "r.txt", rep, "validation")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "metric,value"
    assert "top1,0.750000" in lines
    assert "ji_mean,0.500000" in lines
    assert "ji_pyramid,0.250000" in lines
    assert "validation" in (tmp_path / "r.txt").read_text()
