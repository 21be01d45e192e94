import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtstereo.io import read_keyvalue
from dtstereo.metrics import center_recall, depth_metrics, match_by_distance, mean_abs_error
from dtstereo.nms import RotatedBox


def gt_grid(seed=0, shape=(16, 24)):
    return np.random.default_rng(seed).uniform(1.0, 60.0, shape)


# --- depth metrics -----------------------------------------------------------


def test_perfect_prediction_is_zero():
    gt = gt_grid()
    r = depth_metrics(gt, gt)
    assert (r.silog, r.abs_rel, r.sq_rel, r.log10, r.rmse) == (0.0, 0.0, 0.0, 0.0, 0.0)
    assert r.n_pixels == gt.size


def test_uniform_scaling():
    gt = gt_grid()
    r = depth_metrics(2 * gt, gt)
    assert r.silog == pytest.approx(0.0, abs=1e-9)
    assert r.abs_rel == pytest.approx(1.0)
    assert r.log10 == pytest.approx(np.log10(2.0))


def test_constant_offset():
    gt = np.full((5, 7), 4.0)
    r = depth_metrics(gt + 1, gt)
    assert r.rmse == pytest.approx(1.0)
    assert r.abs_rel == pytest.approx(0.25)
    assert r.sq_rel == pytest.approx(0.25)


def test_against_direct_formulas():
    rng = np.random.default_rng(1)
    gt = gt_grid(1)
    pred = gt * rng.uniform(0.5, 1.5, gt.shape)
    mask = rng.uniform(size=gt.shape) < 0.7
    p, g = pred[mask], gt[mask]
    e = np.log(p / g)
    r = depth_metrics(pred, gt, mask)
    assert r.silog == pytest.approx(100 * np.sqrt(np.var(e)))
    assert r.abs_rel == pytest.approx(np.mean(np.abs(p - g) / g))
    assert r.sq_rel == pytest.approx(np.mean((p - g) ** 2 / g))
    assert r.log10 == pytest.approx(np.mean(np.abs(np.log10(p / g))))
    assert r.rmse == pytest.approx(np.sqrt(np.mean((p - g) ** 2)))
    assert r.n_pixels == mask.sum()
    assert mean_abs_error(pred, gt, mask) == pytest.approx(np.mean(np.abs(p - g)))


def test_masked_pixels_are_ignored():
    gt = gt_grid()
    pred = gt.copy()
    pred[0, 0] = -5.0
    mask = np.ones(gt.shape, bool)
    mask[0, 0] = False
    assert depth_metrics(pred, gt, mask).rmse == 0.0


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 1000))
def test_silog_scale_invariant(c, seed):
    gt = gt_grid(seed)
    pred = gt * np.random.default_rng(seed + 1).uniform(0.5, 2.0, gt.shape)
    assert abs(depth_metrics(c * pred, gt).silog - depth_metrics(pred, gt).silog) < 1e-9


def test_metrics_nonnegative_and_zero_only_at_match():
    gt = gt_grid()
    pred = gt.copy()
    pred[3, 4] *= 1.01
    r = depth_metrics(pred, gt)
    assert min(r.silog, r.abs_rel, r.sq_rel, r.log10, r.rmse) > 0


@pytest.mark.parametrize("pred, gt, mask", [
    (np.ones((2, 2)), np.ones((2, 3)), None),
    (np.ones((2, 2)), np.ones((2, 2)), np.zeros((2, 2), bool)),
    (np.zeros((2, 2)), np.ones((2, 2)), None),
    (np.ones((2, 2)), -np.ones((2, 2)), None),
    (np.full((2, 2), np.nan), np.ones((2, 2)), None),
])
def test_depth_metric_errors(pred, gt, mask):
    with pytest.raises(ValueError):
        depth_metrics(pred, gt, mask)


def test_depth_report_outputs(tmp_path):
    r = depth_metrics(np.full((2, 2), 5.0), np.full((2, 2), 4.0))
    r.to_keyvalue(tmp_path / "r.yaml")
    assert read_keyvalue(tmp_path / "r.yaml") == r.to_dict()
    r.to_csv(tmp_path / "r.csv")
    header, row = (tmp_path / "r.csv").read_text().splitlines()
    assert header.split(",") == list(r.to_dict())
    assert float(row.split(",")[-2]) == pytest.approx(1.0)


# --- recall ------------------------------------------------------------------------


def boxes(xy, speed=0.0):
    return [RotatedBox(float(x), float(y), 1.0, 1.0, vx=speed) for x, y in xy]


def test_identical_predictions():
    gt = boxes(np.random.default_rng(0).uniform(-20, 20, (12, 2)))
    r = center_recall(gt, gt)
    assert r.recall == (1.0, 1.0, 1.0, 1.0) and r.n_gt == 12 and not r.empty_gt


def test_no_predictions():
    assert center_recall([], boxes([(0, 0), (5, 5)])).recall == (0.0, 0.0, 0.0, 0.0)


def test_offset_one_and_a_half_metres():
    r = center_recall(boxes([(1.5, 0.0)]), boxes([(0.0, 0.0)]))
    assert r.thresholds == (0.5, 1.0, 2.0, 4.0)
    assert r.recall == (0.0, 0.0, 1.0, 1.0)


def test_threshold_is_strict():
    assert center_recall(boxes([(1.0, 0.0)]), boxes([(0.0, 0.0)]), (1.0, 2.0)).recall == (0.0, 1.0)


def test_empty_gt_is_flagged():
    r = center_recall(boxes([(0, 0)]), [])
    assert r.recall == (1.0, 1.0, 1.0, 1.0) and r.empty_gt and r.n_gt == 0


def test_unsorted_thresholds_rejected():
    with pytest.raises(ValueError):
        center_recall([], boxes([(0, 0)]), (2.0, 1.0))


def test_one_to_one_matching():
    # one prediction between two GT boxes can recall only one of them
    d = match_by_distance(boxes([(0.5, 0.0)]), boxes([(0.0, 0.0), (1.2, 0.0)]))
    assert d[0] == pytest.approx(0.5) and d[1] == np.inf


def test_greedy_takes_closest_pair_first():
    d = match_by_distance(boxes([(0.0, 0.0), (3.0, 0.0)]), boxes([(1.0, 0.0), (0.1, 0.0)]))
    assert d[1] == pytest.approx(0.1) and d[0] == pytest.approx(2.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_recall_monotone(seed):
    rng = np.random.default_rng(seed)
    gt = boxes(rng.uniform(-10, 10, (rng.integers(1, 15), 2)))
    pred = boxes(rng.uniform(-10, 10, (rng.integers(0, 15), 2)))
    t = np.sort(rng.uniform(0.1, 10.0, 5))
    r = center_recall(pred, gt, t).recall
    assert all(0.0 <= a <= b <= 1.0 for a, b in zip(r, r[1:]))


def test_min_speed_filters_gt_only():
    gt = boxes([(0, 0)], speed=2.0) + boxes([(10, 0)], speed=0.5)
    pred = boxes([(0.2, 0.0), (10.0, 0.0)])
    r = center_recall(pred, gt, min_speed=1.0)
    assert r.n_gt == 1 and r.recall == (1.0, 1.0, 1.0, 1.0)
    assert center_recall(pred, gt, min_speed=5.0).empty_gt


def test_recall_report_outputs(tmp_path):
    r = center_recall(boxes([(1.5, 0.0)]), boxes([(0.0, 0.0)]))
    r.to_keyvalue(tmp_path / "r.yaml")
    doc = read_keyvalue(tmp_path / "r.yaml")
    assert doc["recall@2"] == 1.0 and doc["recall@0.5"] == 0.0 and doc["empty_gt"] is False
