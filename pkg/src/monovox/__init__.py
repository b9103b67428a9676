"""Object-centric monocular 3D detection geometry, rescoring and evaluation."""

from .confidence import RescoreConfig, lifting_confidence, rescore
from .evaluation import EvalConfig, EvalResult, average_precision, evaluate, match_detections
from .geometry import (
    Box2D,
    Box3D,
    CameraCalib,
    alpha_to_ry,
    backproject,
    box3d_corners,
    frustum_rotate,
    iou_2d,
    iou_3d,
    iou_bev,
    project,
    project_box3d,
    ry_to_alpha,
)
from .heatmap import Heatmap3D, decode_center, heatmap_target, smooth_l1
from .kitti_io import (
    DepthMap,
    ObjectRecord,
    SplitSpec,
    generate_depth_split,
    load_depth_map,
    parse_calibration,
    parse_objects,
    write_objects,
)
from .orientation import multibin_decode, multibin_encode, shape_retaining_resize
from .voxelizer import GridSpec, RoiPointCloud, VoxelGrid, object_aware_grid, point_aware_grid, voxelize

__version__ = "0.1.0"
