"""Greedy BEV non-maximum suppression: size-aware circle, plain circle and rotated IoU."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin


@dataclass(frozen=True)
class RotatedBox:
    cx: float
    cy: float
    dx: float
    dy: float
    theta: float = 0.0
    score: float = 1.0
    class_id: int = 0
    vx: float = 0.0
    vy: float = 0.0

    @property
    def speed(self) -> float:
        return float(np.hypot(self.vx, self.vy))

    def __post_init__(self):
        if not (self.dx > 0 and self.dy > 0):
            raise ValueError(f"box sizes must be positive, got dx={self.dx}, dy={self.dy}")
        if not np.isfinite(self.score):
            raise ValueError("box score must be finite")

    def corners(self) -> np.ndarray:
        """Counter-clockwise 4 x 2 corner array."""
        c, s = np.cos(self.theta), np.sin(self.theta)
        hx, hy = self.dx / 2, self.dy / 2
        local = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
        return local @ np.array([[c, s], [-s, c]]) + (self.cx, self.cy)

    def scaled(self, s: float) -> RotatedBox:
        return RotatedBox(self.cx * s, self.cy * s, self.dx * s, self.dy * s, self.theta, self.score, self.class_id,
                          self.vx * s, self.vy * s)


@dataclass(frozen=True)
class NmsConfig:
    w: float = 0.25
    radius: float = 2.0
    class_agnostic: bool = False
    iou_threshold: float = 0.5

    def __post_init__(self):
        if not (self.w > 0 and self.radius > 0):
            raise ValueError("w and radius must be positive")


def boxes_to_array(boxes) -> np.ndarray:
    """``(n, 7)`` array of cx, cy, dx, dy, theta, score, class_id."""
    if len(boxes) == 0:
        return np.zeros((0, 7))
    return np.array([[b.cx, b.cy, b.dx, b.dy, b.theta, b.score, b.class_id] for b in boxes], dtype=float)


def size_aware_thresholds(a: RotatedBox, b: RotatedBox, w: float, signed: bool = False):
    """Per-axis suppression extents ``(x_thre, y_thre)`` from box sizes and yaws.

    ``signed=True`` keeps the raw cos/sin, which can give negative extents for
    yaws in (pi/2, pi); the default uses their magnitudes.
    """
    ax, ay = _extents(a, signed)
    bx, by = _extents(b, signed)
    # one commutative add per axis keeps the result exactly symmetric in (a, b)
    return float(w * (ax + bx)), float(w * (ay + by))


def _extents(box: RotatedBox, signed: bool):
    f = (lambda x: x) if signed else abs
    c, s = f(np.cos(box.theta)), f(np.sin(box.theta))
    return c * box.dx + s * box.dy, c * box.dy + s * box.dx


def _greedy(boxes, suppresses, class_agnostic):
    """Score-descending sweep; ties keep the lower input index first."""
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i].score, i))
    kept = []
    for i in order:
        bi = boxes[i]
        hit = False
        for k in kept:
            bk = boxes[k]
            if not class_agnostic and bk.class_id != bi.class_id:
                continue
            if suppresses(bk, bi):
                hit = True
                break
        if not hit:
            kept.append(i)
    return kept


def size_aware_circle_nms(boxes, cfg: NmsConfig = NmsConfig(), signed: bool = False) -> list[int]:
    def suppresses(k, i):
        xt, yt = size_aware_thresholds(k, i, cfg.w, signed)
        return abs(k.cx - i.cx) < xt and abs(k.cy - i.cy) < yt

    return _greedy(list(boxes), suppresses, cfg.class_agnostic)


def circle_nms(boxes, cfg: NmsConfig = NmsConfig()) -> list[int]:
    r2 = cfg.radius ** 2

    def suppresses(k, i):
        return (k.cx - i.cx) ** 2 + (k.cy - i.cy) ** 2 < r2

    return _greedy(list(boxes), suppresses, cfg.class_agnostic)


def _clip(subject, a, b):
    """Keep the part of polygon ``subject`` left of the directed edge a->b."""
    out = []
    n = len(subject)
    if n == 0:
        return out

    def side(p):
        return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])

    for j in range(n):
        p, q = subject[j], subject[(j + 1) % n]
        sp, sq = side(p), side(q)
        if sp >= 0:
            out.append(p)
        if (sp >= 0) != (sq >= 0):
            t = sp / (sp - sq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def polygon_area(poly) -> float:
    if len(poly) < 3:
        return 0.0
    x = np.array([p[0] for p in poly])
    y = np.array([p[1] for p in poly])
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def rotated_iou(a: RotatedBox, b: RotatedBox) -> float:
    """Exact IoU of two rotated rectangles by Sutherland-Hodgman clipping."""
    ca, cb = a.corners(), b.corners()
    # cheap reject on bounding circles
    ra = 0.5 * np.hypot(a.dx, a.dy)
    rb = 0.5 * np.hypot(b.dx, b.dy)
    if np.hypot(a.cx - b.cx, a.cy - b.cy) >= ra + rb:
        return 0.0
    poly = [tuple(p) for p in ca]
    for j in range(4):
        poly = _clip(poly, cb[j], cb[(j + 1) % 4])
        if not poly:
            return 0.0
    inter = polygon_area(poly)
    union = a.dx * a.dy + b.dx * b.dy - inter
    return float(min(max(inter / union, 0.0), 1.0)) if union > 0 else 0.0


def rotated_iou_nms(boxes, cfg: NmsConfig = NmsConfig()) -> list[int]:
    def suppresses(k, i):
        return rotated_iou(k, i) > cfg.iou_threshold

    return _greedy(list(boxes), suppresses, cfg.class_agnostic)


VARIANTS = {
    "rotated_iou": rotated_iou_nms,
    "circle": circle_nms,
    "size_aware": size_aware_circle_nms,
}


class _NmsBase(BaseEstimator, TransformerMixin):
    """``fit`` records ``keep_``; ``transform`` returns the kept boxes."""

    def _cfg(self):
        raise NotImplementedError

    def _select(self, boxes):
        raise NotImplementedError

    def fit(self, boxes, y=None):
        self.keep_ = self._select(list(boxes))
        return self

    def transform(self, boxes):
        boxes = list(boxes)
        return [boxes[i] for i in self._select(boxes)]

    def fit_predict(self, boxes, y=None):
        return self.fit(boxes).keep_


class SizeAwareCircleNMS(_NmsBase):
    def __init__(self, w=0.25, class_agnostic=False, signed=False):
        self.w = w
        self.class_agnostic = class_agnostic
        self.signed = signed

    def _select(self, boxes):
        return size_aware_circle_nms(boxes, NmsConfig(w=self.w, class_agnostic=self.class_agnostic), self.signed)


class CircleNMS(_NmsBase):
    def __init__(self, radius=2.0, class_agnostic=False):
        self.radius = radius
        self.class_agnostic = class_agnostic

    def _select(self, boxes):
        return circle_nms(boxes, NmsConfig(radius=self.radius, class_agnostic=self.class_agnostic))


class RotatedIoUNMS(_NmsBase):
    def __init__(self, iou_threshold=0.5, class_agnostic=False):
        self.iou_threshold = iou_threshold
        self.class_agnostic = class_agnostic

    def _select(self, boxes):
        return rotated_iou_nms(boxes, NmsConfig(iou_threshold=self.iou_threshold, class_agnostic=self.class_agnostic))


def agreement_rate(estimator, reference, corpora) -> float:
    """Fraction of corpora on which ``estimator`` keeps exactly the ``reference`` set."""
    if not corpora:
        return 1.0
    hits = sum(set(estimator.fit_predict(c)) == set(reference.fit_predict(c)) for c in corpora)
    return hits / len(corpora)


def tune(estimator, param: str, values, reference, corpora):
    """Grid search one parameter for maximum agreement; returns ``(best_value, rate)``.

    Ties go to the first value in ``values``.
    """
    from sklearn.base import clone
    from sklearn.model_selection import ParameterGrid

    ref_keeps = [set(reference.fit_predict(c)) for c in corpora]
    best = (None, -1.0)
    for params in ParameterGrid({param: list(values)}):
        est = clone(estimator).set_params(**params)
        rate = np.mean([set(est.fit_predict(c)) == k for c, k in zip(corpora, ref_keeps)]) if corpora else 1.0
        if rate > best[1]:
            best = (params[param], float(rate))
    return best


def read_boxes_csv(path) -> list[RotatedBox]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        return [
            RotatedBox(float(r["cx"]), float(r["cy"]), float(r["dx"]), float(r["dy"]),
                       float(r["theta"]), float(r["score"]), int(r["class_id"]),
                       float(r.get("vx") or 0.0), float(r.get("vy") or 0.0))
            for r in rows
        ]
    except KeyError as e:
        raise ValueError(f"box CSV missing column {e}") from None


def write_boxes_csv(path, boxes) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cx", "cy", "dx", "dy", "theta", "score", "class_id", "vx", "vy"])
        for b in boxes:
            w.writerow([repr(float(x)) for x in (b.cx, b.cy, b.dx, b.dy, b.theta, b.score)]
                       + [b.class_id, repr(float(b.vx)), repr(float(b.vy))])


BENCH_FIELDS = ["variant", "n_boxes", "median_ns", "kept", "suppressed"]


def bench_nms(corpus, cfgs=None, repeats: int = 30, warmup: int = 2, variants=None):
    """Time each NMS variant on ``corpus``; one dict per variant (see ``BENCH_FIELDS``)."""
    cfg = cfgs or NmsConfig()
    rows = []
    for name in variants or VARIANTS:
        fn = VARIANTS[name]
        for _ in range(warmup):
            keep = fn(corpus, cfg)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter_ns()
            keep = fn(corpus, cfg)
            times.append(time.perf_counter_ns() - t0)
        rows.append({
            "variant": name,
            "n_boxes": len(corpus),
            "median_ns": int(np.median(times)),
            "kept": len(keep),
            "suppressed": len(corpus) - len(keep),
        })
    return rows


def write_rows(path, rows, fieldnames) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
