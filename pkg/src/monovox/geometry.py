"""Camera model, KITTI box algebra, projections and overlap measures.

Coordinates follow the rectified KITTI camera frame: x right, y down,
z forward.  A 3D box is stored by its bottom-face center, dimensions
``(h, w, l)`` and yaw ``rotation_y`` about the y axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .errors import BehindCameraError, DomainError, ValidationError

# corners closer to the camera plane than this are clamped before projecting
MIN_PROJECT_DEPTH = 1e-3
# intersection polygons below this area count as empty
AREA_EPS = 1e-12
# overlaps this close to 1 are rounding noise of identical footprints
IOU_SNAP = 1e-12


def wrap_angle(angle):
    """Wrap an angle (scalar or array) to ``(-pi, pi]``."""
    wrapped = math.pi - np.mod(math.pi - np.asarray(angle, dtype=float), 2.0 * math.pi)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class CameraCalib:
    """Rectified 3x4 projection matrix with derived intrinsics."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).reshape(3, 4)
        object.__setattr__(self, "p", p)
        if not np.all(np.isfinite(p)):
            raise ValidationError("projection matrix has non-finite entries")
        if p[0, 0] <= 0 or p[1, 1] <= 0:
            raise ValidationError(f"focal lengths must be positive, got fx={p[0, 0]}, fy={p[1, 1]}")
        if not np.allclose(p[2, :3], (0.0, 0.0, 1.0), atol=1e-6) or abs(p[1, 0]) > 1e-6:
            raise ValidationError("projection matrix is not a rectified camera")

    @classmethod
    def from_intrinsics(cls, fx, fy, cx, cy, tx=0.0, ty=0.0, tz=0.0):
        return cls(np.array([[fx, 0.0, cx, tx], [0.0, fy, cy, ty], [0.0, 0.0, 1.0, tz]]))

    @property
    def fx(self) -> float:
        return float(self.p[0, 0])

    @property
    def fy(self) -> float:
        return float(self.p[1, 1])

    @property
    def cx(self) -> float:
        return float(self.p[0, 2])

    @property
    def cy(self) -> float:
        return float(self.p[1, 2])

    @property
    def tx(self) -> float:
        return float(self.p[0, 3])

    @property
    def ty(self) -> float:
        return float(self.p[1, 3])


@dataclass(frozen=True)
class Box2D:
    left: float
    top: float
    right: float
    bottom: float

    def __post_init__(self):
        if not (self.left <= self.right and self.top <= self.bottom):
            raise ValidationError(f"malformed 2D box {self.as_tuple()}")

    @property
    def width(self) -> float:
        return self.right - self.left

    @property
    def height(self) -> float:
        return self.bottom - self.top

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Tuple[float, float]:
        return (0.5 * (self.left + self.right), 0.5 * (self.top + self.bottom))

    def as_tuple(self):
        return (self.left, self.top, self.right, self.bottom)


@dataclass(frozen=True)
class Box3D:
    """Oriented cuboid; ``center`` is the bottom-face center (KITTI labels)."""

    center: Tuple[float, float, float]
    dims: Tuple[float, float, float]
    rotation_y: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "dims", tuple(float(d) for d in self.dims))
        if min(self.dims) <= 0:
            raise ValidationError(f"box dimensions must be positive, got {self.dims}")

    @property
    def h(self) -> float:
        return self.dims[0]

    @property
    def w(self) -> float:
        return self.dims[1]

    @property
    def l(self) -> float:  # noqa: E743
        return self.dims[2]

    @property
    def volume(self) -> float:
        return self.h * self.w * self.l

    @property
    def geometric_center(self) -> Tuple[float, float, float]:
        x, y, z = self.center
        return (x, y - 0.5 * self.h, z)


# ---------------------------------------------------------------------------
# camera model
# ---------------------------------------------------------------------------

def backproject(u, v, depth, calib: CameraCalib) -> np.ndarray:
    """Lift pixel(s) at metric depth ``z`` into the camera frame.

    Accepts scalars or equal-length arrays.  Solves the projection exactly,
    so the ``p[2, 3]`` residual of real KITTI matrices is honoured and
    ``project(backproject(u, v, d)) == (u, v)``.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    z = np.asarray(depth, dtype=float)
    if np.any(~(z > 0)):
        raise DomainError("back-projection requires depth > 0")
    p = calib.p
    w = z + p[2, 3]
    # rows of P: u*w = p00 x + p01 y + p02 z + p03 ; v*w = p11 y + p12 z + p13
    y = (v * w - p[1, 2] * z - p[1, 3]) / p[1, 1]
    x = (u * w - p[0, 1] * y - p[0, 2] * z - p[0, 3]) / p[0, 0]
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


def project(points, calib: CameraCalib) -> np.ndarray:
    """Project point(s) ``(..., 3)`` to pixels ``(..., 2)``."""
    pts = np.asarray(points, dtype=float)
    if np.any(~(pts[..., 2] > 0)):
        raise BehindCameraError("cannot project a point with z <= 0")
    return _project_unchecked(pts, calib)


def _project_unchecked(pts: np.ndarray, calib: CameraCalib) -> np.ndarray:
    hom = pts @ calib.p[:, :3].T + calib.p[:, 3]
    return hom[..., :2] / hom[..., 2:3]


def alpha_to_ry(alpha: float, location: Sequence[float]) -> float:
    x, _, z = location
    if z <= 0:
        raise DomainError("viewing angle undefined for z <= 0")
    return wrap_angle(alpha + math.atan2(x, z))


def ry_to_alpha(rotation_y: float, location: Sequence[float]) -> float:
    x, _, z = location
    if z <= 0:
        raise DomainError("viewing angle undefined for z <= 0")
    return wrap_angle(rotation_y - math.atan2(x, z))


def rotate_y(points, angle: float) -> np.ndarray:
    """Rotate points about the camera y axis (same sense as ``rotation_y``)."""
    pts = np.asarray(points, dtype=float)
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return pts @ rot.T


def frustum_angle(box2d: Box2D, calib: CameraCalib) -> float:
    u, v = box2d.center
    ray = backproject(u, v, 1.0, calib)
    return math.atan2(ray[0], ray[2])


def frustum_rotate(points, box2d: Box2D, calib: CameraCalib):
    """Rotate a per-object cloud so the 2D-box center ray lies on +z.

    Returns ``(rotated, theta)``; ``rotate_y(rotated, theta)`` undoes it.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise DomainError("frustum rotation needs at least one point")
    theta = frustum_angle(box2d, calib)
    return rotate_y(pts, -theta), theta


# ---------------------------------------------------------------------------
# boxes
# ---------------------------------------------------------------------------

def box3d_corners(box: Box3D) -> np.ndarray:
    """(8, 3) corners; first four on the bottom face, last four on top."""
    h, w, l = box.dims
    x = np.array([l, l, -l, -l, l, l, -l, -l]) * 0.5
    y = np.array([0.0, 0.0, 0.0, 0.0, -h, -h, -h, -h])
    z = np.array([w, -w, -w, w, w, -w, -w, w]) * 0.5
    return rotate_y(np.stack([x, y, z], axis=1), box.rotation_y) + np.asarray(box.center)


def bev_footprint(box: Box3D) -> np.ndarray:
    """(4, 2) counter-clockwise footprint in the (x, z) plane."""
    corners = box3d_corners(box)[:4][:, [0, 2]]
    if _signed_area(corners) < 0:
        corners = corners[::-1]
    return corners


def project_box3d(box: Box3D, calib: CameraCalib, image_size=None, clip: bool = True) -> Box2D:
    """Axis-aligned hull of the projected corners, optionally clipped to the image."""
    corners = box3d_corners(box)
    if not np.any(corners[:, 2] > 0):
        raise BehindCameraError("every corner of the box is behind the camera")
    corners[:, 2] = np.maximum(corners[:, 2], MIN_PROJECT_DEPTH)
    uv = _project_unchecked(corners, calib)
    left, top = uv.min(axis=0)
    right, bottom = uv.max(axis=0)
    if clip:
        if image_size is None:
            raise ValueError("image_size is required when clip is set")
        width, height = image_size
        left, right = np.clip([left, right], 0.0, width)
        top, bottom = np.clip([top, bottom], 0.0, height)
    return Box2D(float(left), float(top), float(right), float(bottom))


# ---------------------------------------------------------------------------
# overlaps
# ---------------------------------------------------------------------------

def iou_2d(a: Box2D, b: Box2D) -> float:
    iw = min(a.right, b.right) - max(a.left, b.left)
    ih = min(a.bottom, b.bottom) - max(a.top, b.top)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return min(1.0, inter / union)


def intersection_over_first(a: Box2D, b: Box2D) -> float:
    """Intersection area divided by the area of ``a``."""
    iw = min(a.right, b.right) - max(a.left, b.left)
    ih = min(a.bottom, b.bottom) - max(a.top, b.top)
    if iw <= 0 or ih <= 0 or a.area <= 0:
        return 0.0
    return iw * ih / a.area


def _signed_area(poly) -> float:
    x = [p[0] for p in poly]
    y = [p[1] for p in poly]
    n = len(poly)
    return 0.5 * sum(x[i] * y[(i + 1) % n] - x[(i + 1) % n] * y[i] for i in range(n))


def clip_convex_polygon(subject, clipper):
    """Sutherland-Hodgman clip of ``subject`` by the CCW convex ``clipper``."""
    output = [tuple(p) for p in subject]
    clip = [tuple(p) for p in clipper]
    for i in range(len(clip)):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % len(clip)]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inputs, output = output, []
        prev = inputs[-1]
        s_prev = side(prev)
        for cur in inputs:
            s_cur = side(cur)
            if s_cur >= 0:
                if s_prev < 0:
                    output.append(_edge_cross(prev, cur, s_prev, s_cur))
                output.append(cur)
            elif s_prev >= 0:
                output.append(_edge_cross(prev, cur, s_prev, s_cur))
            prev, s_prev = cur, s_cur
    return output


def _edge_cross(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    ra = 0.5 * math.hypot(a.l, a.w)
    rb = 0.5 * math.hypot(b.l, b.w)
    if math.hypot(a.center[0] - b.center[0], a.center[2] - b.center[2]) >= ra + rb:
        return 0.0
    poly = clip_convex_polygon(bev_footprint(a), bev_footprint(b))
    if len(poly) < 3:
        return 0.0
    area = abs(_signed_area(poly))
    return area if area > AREA_EPS else 0.0


def iou_bev(a: Box3D, b: Box3D) -> float:
    inter = bev_intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    union = a.l * a.w + b.l * b.w - inter
    return _snap(inter / union)


def vertical_overlap(a: Box3D, b: Box3D) -> float:
    # y points down: a box spans [center_y - h, center_y]
    top = max(a.center[1] - a.h, b.center[1] - b.h)
    bottom = min(a.center[1], b.center[1])
    return max(0.0, bottom - top)


def iou_3d(a: Box3D, b: Box3D) -> float:
    dy = vertical_overlap(a, b)
    if dy <= 0:
        return 0.0
    inter = bev_intersection_area(a, b) * dy
    if inter == 0.0:
        return 0.0
    return _snap(inter / (a.volume + b.volume - inter))


def _snap(ratio: float) -> float:
    return 1.0 if ratio > 1.0 - IOU_SNAP else ratio
