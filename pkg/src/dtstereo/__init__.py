"""Dynamic temporal stereo kernels for multi-view BEV depth: warping, EM-style
candidate refinement, frame fusion, voxel pooling and size-aware circle NMS."""

from .bev_pool import BevGrid, GridSpec, PoolInputs, VoxelPooling, pool_v1, pool_v2
from .data import FeatureMap, FrameRecord, OffsetField
from .fusion import FusionPlan, align_points, fuse_sequence, make_plan
from .geometry import CameraIntrinsics, CameraModel, RigidTransform, compose, relative_transform, warp_to_source
from .metrics import center_recall, depth_metrics
from .nms import CircleNMS, NmsConfig, RotatedBox, RotatedIoUNMS, SizeAwareCircleNMS, rotated_iou
from .stereo import DepthDistribution, DynamicTemporalStereo, StereoConfig

__version__ = "0.1.0"

__all__ = [
    "BevGrid", "CameraIntrinsics", "CameraModel", "CircleNMS", "DepthDistribution", "DynamicTemporalStereo",
    "FeatureMap", "FrameRecord", "FusionPlan", "GridSpec", "NmsConfig", "OffsetField", "PoolInputs",
    "RigidTransform", "RotatedBox", "RotatedIoUNMS", "SizeAwareCircleNMS", "StereoConfig", "VoxelPooling",
    "align_points", "center_recall", "compose", "depth_metrics", "fuse_sequence", "make_plan", "pool_v1",
    "pool_v2", "relative_transform", "rotated_iou", "warp_to_source",
]
