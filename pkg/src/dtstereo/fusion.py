"""Sliding-window frame fusion.

Frames are split into groups of adjacent frames; stereo runs inside each group
with its newest frame as reference. Each group's pseudo-points are aligned
into the current (newest) ego frame, pooled, and the group grids are stacked
along channels, newest group first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bev_pool import BevGrid, GridSpec, PoolInputs, lift_points, points_to_cells, pool_v2
from .data import FeatureMap, FrameRecord
from .geometry import CameraModel, RigidTransform, compose
from .io import read_grid, write_grid
from .stereo import DynamicTemporalStereo, StereoConfig

ON_MISSING = ("error", "pad", "drop")


@dataclass(frozen=True)
class FusionPlan:
    """``groups[k]`` is ``(reference, sources)`` or ``None`` for a zero-padded group."""

    groups: tuple
    interval: int
    group_size: int

    @property
    def n_groups(self) -> int:
        return len(self.groups)


def make_plan(n_frames: int, group_size: int = 2, interval: int = 0, n_groups: int | None = None,
              on_missing: str = "error") -> FusionPlan:
    """Newest-first groups of ``group_size`` adjacent frames, ``interval`` frames apart.

    Group ``k`` uses reference ``n_frames - 1 - k * (group_size + interval)``.
    ``n_groups`` defaults to ``n_frames // group_size``; groups that run past the
    oldest frame raise, are zero-padded or are dropped per ``on_missing``.
    """
    if group_size < 2:
        raise ValueError("group_size must be >= 2")
    if n_frames < group_size:
        raise ValueError(f"need at least {group_size} frames, got {n_frames}")
    if interval < 0:
        raise ValueError("interval must be >= 0")
    if on_missing not in ON_MISSING:
        raise ValueError(f"on_missing must be one of {ON_MISSING}")
    n_groups = n_frames // group_size if n_groups is None else n_groups
    groups = []
    for k in range(n_groups):
        ref = n_frames - 1 - k * (group_size + interval)
        oldest = ref - group_size + 1
        if oldest < 0:
            if on_missing == "error":
                raise ValueError(
                    f"group {k} needs frames {oldest}..{ref} but only {n_frames} frames exist "
                    f"(group_size={group_size}, interval={interval})"
                )
            if on_missing == "pad":
                groups.append(None)
            continue
        groups.append((ref, tuple(range(ref - 1, oldest - 1, -1))))
    return FusionPlan(tuple(groups), interval, group_size)


@dataclass
class PseudoPoints:
    xyz: np.ndarray  # P x B x 3
    pixel_id: np.ndarray  # P x B
    bin_id: np.ndarray  # P x B

    def __len__(self) -> int:
        return int(self.pixel_id.size)


def make_points(cam: CameraModel, bins, frame_pose: RigidTransform) -> PseudoPoints:
    xyz = lift_points(cam, bins, frame_pose)
    P, B = xyz.shape[:2]
    pid, bid = np.meshgrid(np.arange(P), np.arange(B), indexing="ij")
    return PseudoPoints(xyz, pid, bid)


def align_points(points: PseudoPoints, T_prev2global: RigidTransform, T_global2cur: RigidTransform) -> PseudoPoints:
    T = compose(T_global2cur, T_prev2global)
    return PseudoPoints(T.apply(points.xyz), points.pixel_id.copy(), points.bin_id.copy())


def group_inputs(frames, group, cfg: StereoConfig, grid: GridSpec, current_pose: RigidTransform,
                 offsets=None):
    """Stereo-fused depth and context of one group, as PoolInputs in the current frame."""
    ref_i, src_is = group
    ref = frames[ref_i]
    srcs = [frames[i] for i in src_is]
    est = DynamicTemporalStereo.from_config(cfg).fit(ref, srcs, offsets)
    H, W = ref.mono_mu.shape
    P = H * W
    probs = est.depth_.probs.reshape(P, -1)
    context = np.where(ref.features.valid_mask[..., None], ref.features.values, 0.0).reshape(P, -1)
    pts = make_points(ref.camera, cfg.bins, ref.target_pose)
    pts = align_points(pts, ref.target_pose, current_pose.inverse())
    cells = points_to_cells(pts.xyz, grid)
    cells = np.where(ref.features.valid_mask.reshape(P, 1), cells, -1)
    return PoolInputs(probs, context, cells), est


def fuse_sequence(frames, plan: FusionPlan, cfg: StereoConfig, grid: GridSpec, mode: str = "deterministic",
                  offsets=None) -> BevGrid:
    """Pool each group and concatenate the grids along channels (newest group first)."""
    frames = list(frames)
    times = [f.timestamp for f in frames]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("frame timestamps must be strictly increasing")
    live = [g for g in plan.groups if g is not None]
    if not live:
        raise ValueError("plan has no usable group")
    current_pose = frames[live[0][0]].target_pose
    C = frames[live[0][0]].features.channels
    parts, dropped = [], 0
    for group in plan.groups:
        if group is None:
            parts.append(np.zeros((grid.nx, grid.ny, C)))
            continue
        inputs, _ = group_inputs(frames, group, cfg, grid, current_pose, offsets)
        pooled = pool_v2(inputs, grid, mode)
        dropped += pooled.stats["dropped"]
        parts.append(pooled.values)
    values = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=-1)
    return BevGrid(grid, values, {"dropped": dropped, "groups": plan.n_groups, "mode": mode})


# sequence manifests -----------------------------------------------------------


def save_manifest(directory, frames, extras=None) -> Path:
    """Write every frame's camera/feature/mono files plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, f in enumerate(frames):
        stem = f"frame_{i:03d}"
        f.camera.save(directory / f"{stem}_camera.json")
        write_grid(directory / f"{stem}_features.bin", f.features.values)
        write_grid(directory / f"{stem}_mask.bin", f.features.valid_mask.astype(np.float32))
        write_grid(directory / f"{stem}_mono_mu.bin", f.mono_mu)
        write_grid(directory / f"{stem}_mono_sigma.bin", f.mono_sigma)
        entry = {
            "timestamp": f.timestamp,
            "camera": f"{stem}_camera.json",
            "features": f"{stem}_features.bin",
            "valid_mask": f"{stem}_mask.bin",
            "mono_mu": f"{stem}_mono_mu.bin",
            "mono_sigma": f"{stem}_mono_sigma.bin",
        }
        if f.ego_pose is not None:
            entry["ego_pose"] = {
                "rotation": [float(x) for x in f.ego_pose.rotation.ravel()],
                "translation": [float(x) for x in f.ego_pose.translation],
            }
        for key, arr in f.extras.items():
            write_grid(directory / f"{stem}_{key}.bin", arr)
            entry[key] = f"{stem}_{key}.bin"
        entries.append(entry)
    doc = {"version": 1, "frames": entries}
    doc.update(extras or {})
    path = directory / "manifest.json"
    path.write_text(json.dumps(doc, indent=1) + "\n")
    return path


_FRAME_KEYS = {"timestamp", "camera", "features", "valid_mask", "mono_mu", "mono_sigma", "ego_pose"}


def load_manifest(path):
    """Read a manifest; returns ``(frames, document)``. Extra per-frame grids land in ``extras``."""
    path = Path(path)
    doc = json.loads(path.read_text())
    base = path.parent
    frames = []
    for e in doc["frames"]:
        feats = read_grid(base / e["features"])
        mask = read_grid(base / e["valid_mask"])[..., 0] > 0.5 if "valid_mask" in e else None
        ego = None
        if "ego_pose" in e:
            ego = RigidTransform(np.reshape(e["ego_pose"]["rotation"], (3, 3)), e["ego_pose"]["translation"])
        extras = {k: read_grid(base / v)[..., 0] for k, v in e.items() if k not in _FRAME_KEYS}
        frames.append(FrameRecord(
            float(e["timestamp"]), CameraModel.load(base / e["camera"]), FeatureMap(feats, mask),
            read_grid(base / e["mono_mu"])[..., 0], read_grid(base / e["mono_sigma"])[..., 0],
            ego_pose=ego, extras=extras,
        ))
    return frames, doc
