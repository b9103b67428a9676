"""Decomposed 3D detection confidence.

The 3D score of a detection is its 2D score times a lifting term: the IoU
between the detector's 2D box and the hull of the projected 3D box,
discounted exponentially with the object's distance to the camera.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import List, Sequence, Tuple

from .errors import BehindCameraError, BehindCameraWarning, ValidationError
from .geometry import Box2D, Box3D, CameraCalib, iou_2d, project_box3d
from .kitti_io import ObjectRecord

DEFAULT_LAMBDA = 80.0
KITTI_IMAGE_SIZE = (1242, 375)


@dataclass(frozen=True)
class RescoreConfig:
    lam: float = DEFAULT_LAMBDA
    clip_projection: bool = True
    image_size: Tuple[int, int] = KITTI_IMAGE_SIZE

    def __post_init__(self):
        if not self.lam > 0:
            raise ValidationError(f"lambda must be positive, got {self.lam}")


def distance_discount(dis: float, lam: float) -> float:
    return math.exp(-dis / lam)


def lifting_from_parts(iou: float, dis: float, lam: float = DEFAULT_LAMBDA) -> float:
    return iou / math.exp(dis / lam)


def lifting_confidence(b3: Box3D, b2: Box2D, calib: CameraCalib, cfg: RescoreConfig = RescoreConfig()) -> float:
    """IoU(projected 3D box, 2D box) / exp(dis / lambda).

    ``dis`` is the Euclidean distance of the stored (bottom-face) center to
    the optical center.  A box entirely behind the camera scores 0 and
    raises a :class:`BehindCameraWarning`.
    """
    try:
        proj = project_box3d(b3, calib, cfg.image_size, cfg.clip_projection)
    except BehindCameraError:
        warnings.warn(f"box at {b3.center} is behind the camera; lifting confidence set to 0",
                      BehindCameraWarning, stacklevel=2)
        return 0.0
    dis = math.sqrt(sum(c * c for c in b3.center))
    return lifting_from_parts(iou_2d(proj, b2), dis, cfg.lam)


def rescore(dets: Sequence[ObjectRecord], calib: CameraCalib, cfg: RescoreConfig = RescoreConfig()) -> List[ObjectRecord]:
    """Multiply each detection's score by its lifting confidence; order kept."""
    out = []
    for i, det in enumerate(dets, start=1):
        if det.score is None:
            raise ValidationError(f"detection {i} ({det.class_name}) has no score")
        if det.is_dont_care:
            out.append(det)
            continue
        conf = lifting_confidence(det.box3d(), det.box2d, calib, cfg)
        out.append(det.with_score(det.score * conf))
    return out
