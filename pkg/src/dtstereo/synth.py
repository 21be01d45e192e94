"""Deterministic synthetic scenes with exact depth and motion ground truth.

Surfaces are a ground plane (z = 0, world z up) and yawed boxes, some of
which move at constant velocity. A pixel's feature is a sin/cos encoding of
the *material* coordinate of the surface point it sees (the point's position
at t = 0), so the true correspondence between two frames has the largest
feature inner product even when the object has moved.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import FeatureMap, FrameRecord, OffsetField
from .geometry import CameraIntrinsics, CameraModel, RigidTransform, project
from .nms import RotatedBox

# camera x -> ego +x (forward), camera y -> ego -z, camera z -> ego +y (left)
_LEFT_CAMERA = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]])


@dataclass
class SceneBox:
    center: tuple  # metres at t = 0
    size: tuple  # (length along local x, width along local y, height)
    yaw: float = 0.0
    velocity: tuple = (0.0, 0.0, 0.0)

    def center_at(self, t: float) -> np.ndarray:
        return np.asarray(self.center, float) + np.asarray(self.velocity, float) * t

    @property
    def moving(self) -> bool:
        return bool(np.any(np.asarray(self.velocity) != 0))


@dataclass
class Scene:
    boxes: list
    landmarks: np.ndarray
    seed: int
    ground: bool = True

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "ground": self.ground,
            "boxes": [
                {"center": [float(c) for c in b.center], "size": [float(s) for s in b.size],
                 "yaw": float(b.yaw), "velocity": [float(v) for v in b.velocity]}
                for b in self.boxes
            ],
            "landmarks": np.asarray(self.landmarks, float).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Scene:
        boxes = [SceneBox(tuple(b["center"]), tuple(b["size"]), b["yaw"], tuple(b["velocity"])) for b in d["boxes"]]
        return cls(boxes, np.asarray(d["landmarks"], float).reshape(-1, 3), int(d["seed"]), bool(d["ground"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> Scene:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class RenderConfig:
    channels: int = 48
    feature_scale: float = 8.0
    noise: float = 0.0
    mono_noise: float = 0.5
    mono_sigma: float = 1.0
    min_period: float = 1.0

    @property
    def periods(self) -> np.ndarray:
        k = self.channels // 6
        if k < 1 or self.channels % 6:
            raise ValueError("channels must be a positive multiple of 6 (3 axes x sin/cos)")
        return self.min_period * 2.0 ** np.arange(k)


@dataclass(frozen=True)
class TrajectoryConfig:
    n_frames: int = 4
    frame_dt: float = 0.5
    speed: float = 4.0
    camera_height: float = 1.5
    width: int = 176
    height: int = 64
    focal: float = 126.0
    static_ego: bool = False


@dataclass
class RenderedFrame:
    record: FrameRecord
    gt_depth: np.ndarray
    gt_offsets: OffsetField
    valid: np.ndarray
    object_id: np.ndarray  # -1 ground, otherwise index into scene.boxes


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng([abs(int(k)) for k in key])


def default_scene(seed: int = 42, moving: bool = False, facade_range=(12.0, 28.0)) -> Scene:
    """Street-side layout: facades ``facade_range`` metres away, parked cars, optional moving car."""
    rng = _rng(seed, 1)
    boxes = []
    x = -40.0
    while x < 70.0:
        length = float(rng.uniform(8.0, 16.0))
        dist = float(rng.uniform(*facade_range))
        # deep blocks, so no sight line passes between neighbouring facades
        boxes.append(SceneBox((x + length / 2, dist + 30.0, 15.0), (length, 60.0, 30.0)))
        x += length
    for _ in range(6):
        cx = float(rng.uniform(10.0, 30.0))
        cy = float(rng.uniform(4.6, 5.4))
        boxes.append(SceneBox((cx, cy, 0.8), (4.5, 1.9, 1.6), float(rng.uniform(-0.3, 0.3))))
    if moving:
        boxes.append(SceneBox((4.0, 8.0, 1.0), (4.6, 2.0, 2.0), 0.0, (0.8, 0.0, 0.0)))
    landmarks = np.column_stack([rng.uniform(0.0, 20.0, 16), rng.uniform(3.0, 9.0, 16), np.zeros(16)])
    return Scene(boxes, landmarks, seed)


def make_trajectory(cfg: TrajectoryConfig = TrajectoryConfig()):
    """Ego poses and left-looking cameras, oldest frame first."""
    K = CameraIntrinsics(cfg.focal, cfg.focal, cfg.width / 2.0, cfg.height / 2.0, cfg.width, cfg.height)
    out = []
    for i in range(cfg.n_frames):
        t = i * cfg.frame_dt
        x = 0.0 if cfg.static_ego else cfg.speed * t
        ego = RigidTransform(np.eye(3), (x, 0.0, 0.0))
        cam_in_ego = RigidTransform(_LEFT_CAMERA, (0.0, 0.0, cfg.camera_height))
        out.append((t, ego, CameraModel(K, ego @ cam_in_ego)))
    return out


def _pixel_rays(camera: CameraModel):
    K = camera.intrinsics
    v, u = np.meshgrid(np.arange(K.height, dtype=float), np.arange(K.width, dtype=float), indexing="ij")
    d_cam = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], -1)
    # unit camera-z component, so the ray parameter equals z-depth
    d_world = d_cam @ camera.pose.rotation.T
    return camera.pose.translation, d_world


def raycast(scene: Scene, camera: CameraModel, t: float):
    """Nearest-surface depth, world hit point, material point and surface id per pixel."""
    origin, dirs = _pixel_rays(camera)
    H, W = dirs.shape[:2]
    best = np.full((H, W), np.inf)
    obj = np.full((H, W), -2, dtype=int)
    if scene.ground:
        dz = dirs[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            tg = np.where(dz < 0, -origin[2] / dz, np.inf)
        hit = (tg > 0) & (tg < best)
        best = np.where(hit, tg, best)
        obj = np.where(hit, -1, obj)
    for i, box in enumerate(scene.boxes):
        c = box.center_at(t)
        cy, sy = np.cos(-box.yaw), np.sin(-box.yaw)
        Rl = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
        o = Rl @ (origin - c)
        d = dirs @ Rl.T
        half = np.asarray(box.size, float) / 2.0
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (-half - o) * inv
            t2 = (half - o) * inv
        tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
        tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
        hit = (tmax >= tmin) & (tmin > 1e-9) & (tmin < best)
        best = np.where(hit, tmin, best)
        obj = np.where(hit, i, obj)
    valid = np.isfinite(best)
    depth = np.where(valid, best, 0.0)
    world = origin + dirs * depth[..., None]
    material = world.copy()
    for i, box in enumerate(scene.boxes):
        if box.moving:
            sel = obj == i
            material[sel] -= np.asarray(box.velocity, float) * t
    return depth, world, material, obj, valid


def encode(points, cfg: RenderConfig) -> np.ndarray:
    """sin/cos position encoding, ``(..., 3) -> (..., channels)``."""
    w = 2.0 * np.pi / cfg.periods
    ang = np.asarray(points, float)[..., :, None] * w  # (..., 3, K)
    feats = np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)
    return cfg.feature_scale * feats.reshape(*feats.shape[:-2], -1)


def motion_offsets(scene: Scene, ref_camera: CameraModel, t_ref: float, src_camera: CameraModel,
                   t_src: float, world, obj, valid) -> OffsetField:
    """Source-image displacement of dynamic points relative to where a static point would land."""
    H, W = obj.shape
    du = np.zeros((H, W))
    dv = np.zeros((H, W))
    to_src = src_camera.pose.inverse()
    for i, box in enumerate(scene.boxes):
        sel = valid & (obj == i)
        if not box.moving or not sel.any():
            continue
        X = world[sel]
        X_moved = X + np.asarray(box.velocity, float) * (t_src - t_ref)
        u0, v0, _, ok0 = project(to_src.apply(X), src_camera.intrinsics)
        u1, v1, _, ok1 = project(to_src.apply(X_moved), src_camera.intrinsics)
        ok = ok0 & ok1
        du[sel] = np.where(ok, u1 - u0, 0.0)
        dv[sel] = np.where(ok, v1 - v0, 0.0)
    return OffsetField(du, dv)


def render(scene: Scene, camera: CameraModel, t: float, cfg: RenderConfig = RenderConfig(),
           partner=None, ego_pose: RigidTransform | None = None) -> RenderedFrame:
    """Render one frame.

    ``partner=(src_camera, t_src)`` fills ``gt_offsets`` for warping this frame's
    pixels into that source frame; otherwise the offsets are zero.
    """
    depth, world, material, obj, valid = raycast(scene, camera, t)
    feats = encode(material, cfg)
    key = (scene.seed, round(t * 1e6), 7)
    if cfg.noise > 0:
        feats = feats + cfg.noise * _rng(*key).standard_normal(feats.shape)
    feats = np.where(valid[..., None], feats, 0.0)
    gt = np.where(valid, depth, 0.0)
    noise = cfg.mono_noise * _rng(*key[:2], 11).standard_normal(gt.shape)
    mono_mu = np.where(valid, np.maximum(gt + noise, 0.5), 1.0)
    mono_sigma = np.full(gt.shape, cfg.mono_sigma)
    record = FrameRecord(t, camera, FeatureMap(feats.astype(np.float32), valid), mono_mu, mono_sigma,
                         ego_pose=ego_pose)
    if partner is not None:
        offsets = motion_offsets(scene, camera, t, partner[0], partner[1], world, obj, valid)
    else:
        offsets = OffsetField.zeros(*gt.shape)
    return RenderedFrame(record, gt, offsets, valid, obj)


def render_sequence(scene: Scene, traj: TrajectoryConfig = TrajectoryConfig(),
                    cfg: RenderConfig = RenderConfig()) -> list[RenderedFrame]:
    """Render every frame of a trajectory; offsets point from each frame to its predecessor."""
    poses = make_trajectory(traj)
    frames = []
    for i, (t, ego, cam) in enumerate(poses):
        partner = (poses[i - 1][2], poses[i - 1][0]) if i > 0 else None
        frames.append(render(scene, cam, t, cfg, partner=partner, ego_pose=ego))
    return frames


# box corpora for NMS ------------------------------------------------------

_CLASS_SIZES = {0: (4.5, 1.9), 1: (0.7, 0.7), 2: (10.0, 2.5)}
LAYOUTS = ("fig-left-overlap", "fig-left-parallel", "fig-right-adjacent-small", "random", "random-any-heading")


def make_nms_corpus(seed: int, n: int, layout: str) -> list[RotatedBox]:
    """Box corpus for NMS tests.

    The ``fig-*`` layouts are fixed two-box scenarios. ``random`` scatters
    clusters of duplicates and side-by-side neighbours with road-aligned
    headings (multiples of 90 degrees plus noise); ``random-any-heading`` draws
    headings uniformly instead.
    """
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")
    if layout == "fig-left-overlap":
        # two 12 x 2 boxes shifted 4/3 m along their length: IoU 0.8
        return [RotatedBox(0.0, 0.0, 12.0, 2.0, 0.0, 0.9, 0), RotatedBox(4 / 3, 0.0, 12.0, 2.0, 0.0, 0.8, 0)]
    if layout == "fig-left-parallel":
        # same boxes and centre distance, shifted sideways instead: IoU 0.2
        return [RotatedBox(0.0, 0.0, 12.0, 2.0, 0.0, 0.9, 0), RotatedBox(0.0, 4 / 3, 12.0, 2.0, 0.0, 0.8, 0)]
    if layout == "fig-right-adjacent-small":
        # two 0.6 m pedestrians 0.8 m apart: disjoint but well inside a 2 m radius
        return [RotatedBox(0.0, 0.0, 0.6, 0.6, 0.0, 0.9, 1), RotatedBox(0.8, 0.0, 0.6, 0.6, 0.0, 0.8, 1)]

    rng = _rng(seed, 3)
    boxes = []
    while len(boxes) < n:
        cls = int(rng.choice(3, p=[0.5, 0.3, 0.2]))
        L, Wd = _CLASS_SIZES[cls]
        L *= rng.uniform(0.9, 1.1)
        Wd *= rng.uniform(0.9, 1.1)
        cx, cy = rng.uniform(-20.0, 20.0, 2)
        if layout == "random":
            yaw = float(rng.choice([0.0, np.pi / 2, np.pi, -np.pi / 2]) + rng.normal(0.0, 0.1))
        else:
            yaw = float(rng.uniform(-np.pi, np.pi))
        members = [(cx, cy)]
        kind = rng.uniform()
        if kind < 0.45:
            # duplicate detections of one object
            for _ in range(int(rng.integers(1, 3))):
                j = rng.normal(0.0, 1.0, 2) * np.array([0.12 * L, 0.12 * Wd])
                c, s = np.cos(yaw), np.sin(yaw)
                members.append((cx + c * j[0] - s * j[1], cy + s * j[0] + c * j[1]))
        elif kind < 0.75:
            # neighbours side by side: parked cars, groups of pedestrians
            gap = rng.uniform(0.1, 0.6)
            c, s = np.cos(yaw), np.sin(yaw)
            for k in range(1, int(rng.integers(2, 4))):
                off = k * (Wd + gap)
                members.append((cx - s * off, cy + c * off))
        for mx, my in members:
            if len(boxes) >= n:
                break
            boxes.append(RotatedBox(float(mx), float(my), float(L), float(Wd),
                                    float(_wrap(yaw + rng.normal(0.0, 0.05))), float(rng.uniform(0.05, 1.0)), cls))
    return boxes


def _wrap(a: float) -> float:
    return (a + np.pi) % (2 * np.pi) - np.pi
