"""Pinhole cameras, rigid transforms and homography warping.

Conventions: right-handed camera frame, +z along the optical axis, +x right,
+y down, pixel (0, 0) at the top-left. Poses are camera-to-global.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

Z_EPS = 1e-6
_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be >= 1, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )


@dataclass(frozen=True)
class RigidTransform:
    """Rotation matrix plus translation; maps x to ``R @ x + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=_ORTHO_TOL, rtol=0):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation determinant is not +1")
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_matrix(cls, T) -> RigidTransform:
        T = np.asarray(T, dtype=np.float64)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        """Rotation about +z by ``yaw`` radians."""
        c, s = np.cos(yaw), np.sin(yaw)
        return cls(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), translation)

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> RigidTransform:
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        """Transform an ``(..., 3)`` array of points."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return compose(self, other)


def _reorthonormalize(R: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(R)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] *= -1
        out = u @ vt
    return out


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform that applies ``b`` first, then ``a``."""
    R = a.rotation @ b.rotation
    # products of many rotations drift; snap back onto SO(3)
    if not np.allclose(R.T @ R, np.eye(3), atol=1e-12, rtol=0):
        R = _reorthonormalize(R)
    return RigidTransform(R, a.rotation @ b.translation + a.translation)


@dataclass(frozen=True)
class CameraModel:
    intrinsics: CameraIntrinsics
    pose: RigidTransform = field(default_factory=RigidTransform.identity)

    def to_dict(self) -> dict:
        k = self.intrinsics
        return {
            "fx": k.fx,
            "fy": k.fy,
            "cx": k.cx,
            "cy": k.cy,
            "width": k.width,
            "height": k.height,
            "rotation": [float(x) for x in self.pose.rotation.ravel()],
            "translation": [float(x) for x in self.pose.translation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> CameraModel:
        intr = CameraIntrinsics(
            float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
            int(d["width"]), int(d["height"]),
        )
        R = np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3)
        return cls(intr, RigidTransform(R, d["translation"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> CameraModel:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class PixelDepthHypothesis:
    u: float
    v: float
    depth: float

    def __post_init__(self):
        if not self.depth > 0:
            raise ValueError(f"hypothesis depth must be positive, got {self.depth}")


def relative_transform(ref: CameraModel, src: CameraModel) -> RigidTransform:
    """Map points from ``ref`` camera coordinates to ``src`` camera coordinates."""
    return compose(src.pose.inverse(), ref.pose)


def backproject(u, v, depth, K: CameraIntrinsics) -> np.ndarray:
    """Lift pixels at z-depth ``depth`` to camera coordinates, shape ``(..., 3)``."""
    u, v, depth = np.broadcast_arrays(
        np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64),
        np.asarray(depth, dtype=np.float64),
    )
    x = (u - K.cx) / K.fx * depth
    y = (v - K.cy) / K.fy * depth
    return np.stack([x, y, depth], axis=-1)


def project(points, K: CameraIntrinsics, z_eps: float = Z_EPS):
    """Project camera-frame points. Returns ``(u, v, z, valid)``; invalid where z <= z_eps."""
    points = np.asarray(points, dtype=np.float64)
    z = points[..., 2]
    valid = z > z_eps
    safe_z = np.where(valid, z, 1.0)
    u = K.fx * points[..., 0] / safe_z + K.cx
    v = K.fy * points[..., 1] / safe_z + K.cy
    return np.where(valid, u, np.nan), np.where(valid, v, np.nan), z, valid


def warp_points(u, v, depth, K_ref: CameraIntrinsics, K_src: CameraIntrinsics,
                M: RigidTransform, z_eps: float = Z_EPS):
    """Vectorized homography warp of reference pixels at hypothesized depths.

    Returns ``(u_src, v_src, z_src, valid)`` broadcast to the input shape.
    """
    pts = M.apply(backproject(u, v, depth, K_ref))
    return project(pts, K_src, z_eps)


def warp_to_source(hyp: PixelDepthHypothesis, K_ref: CameraIntrinsics, K_src: CameraIntrinsics,
                   M: RigidTransform, z_eps: float = Z_EPS):
    """Warp one hypothesis; ``None`` when the point lands at or behind the source image plane."""
    u, v, z, valid = warp_points(hyp.u, hyp.v, hyp.depth, K_ref, K_src, M, z_eps)
    if not bool(valid):
        return None
    return float(u), float(v), float(z)


def bilinear_sample_many(values: np.ndarray, valid_mask: np.ndarray, u, v):
    """Bilinear lookup of ``values`` (H, W, C) at continuous pixel coordinates.

    Returns ``(samples, ok)`` with samples of shape ``u.shape + (C,)``. A sample is
    invalid when any of its four neighbours is outside the image or masked out;
    invalid samples are zero-filled.
    """
    H, W = values.shape[:2]
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    finite = np.isfinite(u) & np.isfinite(v)
    uu = np.where(finite, u, -1.0)
    vv = np.where(finite, v, -1.0)
    # rounding can push a border-exact warp a hair outside the image
    tol = 1e-9
    inb = finite & (uu >= -tol) & (uu <= W - 1 + tol) & (vv >= -tol) & (vv <= H - 1 + tol)
    uu = np.clip(uu, 0.0, W - 1)
    vv = np.clip(vv, 0.0, H - 1)

    x0 = np.clip(np.floor(uu), 0, W - 1).astype(np.intp)
    y0 = np.clip(np.floor(vv), 0, H - 1).astype(np.intp)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    ax = np.clip(uu - x0, 0.0, 1.0)
    ay = np.clip(vv - y0, 0.0, 1.0)

    w00 = (1 - ax) * (1 - ay)
    w10 = ax * (1 - ay)
    w01 = (1 - ax) * ay
    w11 = ax * ay
    # a neighbour with zero weight (lattice-aligned sample) does not need to be valid
    ok = inb
    for yy, xx, ww in ((y0, x0, w00), (y0, x1, w10), (y1, x0, w01), (y1, x1, w11)):
        ok = ok & (valid_mask[yy, xx] | (ww == 0))

    out = (
        w00[..., None] * values[y0, x0]
        + w10[..., None] * values[y0, x1]
        + w01[..., None] * values[y1, x0]
        + w11[..., None] * values[y1, x1]
    )
    out = np.where(ok[..., None], out, 0.0)
    return out, ok


def bilinear_sample(feat, u: float, v: float):
    """Sample one feature vector from a FeatureMap; ``None`` when invalid."""
    out, ok = bilinear_sample_many(feat.values, feat.valid_mask, np.asarray(u), np.asarray(v))
    if not bool(ok):
        return None
    return out
