"""Depth error metrics and center-distance recall."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .io import write_csv, write_keyvalue


@dataclass(frozen=True)
class DepthEvalReport:
    """Depth errors over the masked pixels. ``silog`` is scaled by 100."""

    silog: float
    abs_rel: float
    sq_rel: float
    log10: float
    rmse: float
    n_pixels: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_csv(self, path) -> None:
        write_csv(path, [self.to_dict()], list(self.to_dict()))

    def to_keyvalue(self, path) -> None:
        write_keyvalue(path, self.to_dict())


def depth_metrics(pred, gt, mask=None) -> DepthEvalReport:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"pred {pred.shape} and gt {gt.shape} differ in shape")
    mask = np.ones(gt.shape, bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("evaluation mask is empty")
    p, g = pred[mask], gt[mask]
    if np.any(p <= 0) or np.any(g <= 0) or not (np.all(np.isfinite(p)) and np.all(np.isfinite(g))):
        raise ValueError("pred and gt must be finite and positive on the mask")
    e = np.log(p) - np.log(g)
    # clamp tiny negative variance from rounding
    silog = np.sqrt(max(np.mean(e ** 2) - np.mean(e) ** 2, 0.0)) * 100.0
    diff = p - g
    return DepthEvalReport(
        silog=float(silog),
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff ** 2 / g)),
        log10=float(np.mean(np.abs(np.log10(p) - np.log10(g)))),
        rmse=float(np.sqrt(np.mean(diff ** 2))),
        n_pixels=int(mask.sum()),
    )


def mean_abs_error(pred, gt, mask=None) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.ones(gt.shape, bool) if mask is None else np.asarray(mask, bool)
    return float(np.mean(np.abs(pred[mask] - gt[mask])))


DEFAULT_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class RecallReport:
    thresholds: tuple
    recall: tuple
    n_gt: int
    empty_gt: bool = False

    def to_dict(self) -> dict:
        d = {f"recall@{t:g}": r for t, r in zip(self.thresholds, self.recall)}
        d.update(n_gt=self.n_gt, empty_gt=self.empty_gt)
        return d

    def to_csv(self, path) -> None:
        write_csv(path, [self.to_dict()], list(self.to_dict()))

    def to_keyvalue(self, path) -> None:
        write_keyvalue(path, self.to_dict())


def _xy(boxes):
    if len(boxes) == 0:
        return np.zeros((0, 2))
    return np.array([[b.cx, b.cy] for b in boxes], dtype=float)


def match_by_distance(pred_boxes, gt_boxes):
    """Greedy one-to-one matching by ascending center distance.

    Returns the matched distance per GT box (``inf`` when unmatched). Ties are
    resolved by (gt index, pred index).
    """
    g, p = _xy(gt_boxes), _xy(pred_boxes)
    out = np.full(len(g), np.inf)
    if len(g) == 0 or len(p) == 0:
        return out
    d = np.hypot(g[:, None, 0] - p[None, :, 0], g[:, None, 1] - p[None, :, 1])
    gi, pi = np.unravel_index(np.arange(d.size), d.shape)
    order = np.lexsort((pi, gi, d.ravel()))
    used_g = np.zeros(len(g), bool)
    used_p = np.zeros(len(p), bool)
    for k in order:
        a, b = gi[k], pi[k]
        if used_g[a] or used_p[b]:
            continue
        used_g[a] = used_p[b] = True
        out[a] = d[a, b]
    return out


def center_recall(pred_boxes, gt_boxes, thresholds=DEFAULT_THRESHOLDS, min_speed: float | None = None) -> RecallReport:
    """Share of GT boxes whose matched prediction lies closer than each threshold.

    With ``min_speed`` only GT boxes moving faster than it are scored; matching
    still sees every prediction.
    """
    thresholds = tuple(float(t) for t in thresholds)
    if list(thresholds) != sorted(thresholds):
        raise ValueError("thresholds must be sorted ascending")
    if min_speed is not None:
        gt_boxes = [b for b in gt_boxes if b.speed > min_speed]
    if len(gt_boxes) == 0:
        return RecallReport(thresholds, tuple(1.0 for _ in thresholds), 0, empty_gt=True)
    dist = match_by_distance(pred_boxes, gt_boxes)
    recall = tuple(float(np.mean(dist < t)) for t in thresholds)
    return RecallReport(thresholds, recall, len(gt_boxes))
