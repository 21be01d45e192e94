"""Dense containers shared by the stereo engine, fusion and the scene generator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraModel, RigidTransform


@dataclass
class FeatureMap:
    """H x W x C feature grid with a per-pixel validity mask."""

    values: np.ndarray
    valid_mask: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim == 2:
            values = values[..., None]
        if values.ndim != 3 or values.shape[2] < 1:
            raise ValueError(f"feature values must be H x W x C, got shape {values.shape}")
        if self.valid_mask is None:
            mask = np.ones(values.shape[:2], dtype=bool)
        else:
            mask = np.asarray(self.valid_mask, dtype=bool)
            if mask.shape != values.shape[:2]:
                raise ValueError(f"valid_mask shape {mask.shape} != {values.shape[:2]}")
        if not np.all(np.isfinite(values[mask])):
            raise ValueError("feature values must be finite wherever valid_mask is set")
        self.values = values
        self.valid_mask = mask

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass
class OffsetField:
    """Per-pixel sampling offsets (pixels) added to warped source coordinates."""

    du: np.ndarray
    dv: np.ndarray

    def __post_init__(self):
        self.du = np.asarray(self.du, dtype=np.float64)
        self.dv = np.asarray(self.dv, dtype=np.float64)
        if self.du.shape != self.dv.shape or self.du.ndim != 2:
            raise ValueError("du and dv must be H x W grids of equal shape")
        if not (np.all(np.isfinite(self.du)) and np.all(np.isfinite(self.dv))):
            raise ValueError("offsets must be finite")

    @classmethod
    def zeros(cls, height: int, width: int) -> OffsetField:
        return cls(np.zeros((height, width)), np.zeros((height, width)))

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.du, self.dv)

    def check(self, offset_max: float) -> None:
        if np.any(self.magnitude() > offset_max + 1e-12):
            raise ValueError(f"offset magnitude exceeds offset_max={offset_max}")


@dataclass
class FrameRecord:
    """One timestamped camera frame with features and the mono depth prior."""

    timestamp: float
    camera: CameraModel
    features: FeatureMap
    mono_mu: np.ndarray
    mono_sigma: np.ndarray
    ego_pose: RigidTransform | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mono_mu = np.asarray(self.mono_mu, dtype=np.float64)
        self.mono_sigma = np.asarray(self.mono_sigma, dtype=np.float64)
        shape = (self.features.height, self.features.width)
        if self.mono_mu.shape != shape or self.mono_sigma.shape != shape:
            raise ValueError("mono grids must match the feature map size")
        k = self.camera.intrinsics
        if (k.height, k.width) != shape:
            raise ValueError("camera image size must match the feature map size")

    @property
    def target_pose(self) -> RigidTransform:
        """Frame in which BEV cells are laid out: the ego pose when known, else the camera."""
        return self.ego_pose if self.ego_pose is not None else self.camera.pose
