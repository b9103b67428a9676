"""Object-centric adaptive voxel grids built from a per-object point cloud.

Two ways of placing the cell boundaries along each axis:

* ``object_aware``: uniform cells spanning the cloud's extent,
  ``size = (max - min) / n``.
* ``point_aware``: boundaries taken from the sorted coordinates at indices
  ``floor(k * N / n)``, so every slab holds about ``N / n`` points and dense
  regions receive fine cells.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import DegenerateCloudWarning, EmptyRoiError, ValidationError
from .geometry import Box2D, CameraCalib, backproject, frustum_rotate
from .kitti_io import DepthMap

OBJECT_AWARE = "object_aware"
POINT_AWARE = "point_aware"
GRID_MODES = (OBJECT_AWARE, POINT_AWARE)

DEFAULT_SHAPE = (32, 16, 64)
DEFAULT_MARGIN = 3.0


@dataclass
class RoiPointCloud:
    points: np.ndarray  # (N, 3)
    colors: np.ndarray  # (N, 3) in [0, 1]
    source_pixels: np.ndarray  # (N, 2) integer (u, v)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=float).reshape(-1, 3)
        self.source_pixels = np.asarray(self.source_pixels).reshape(-1, 2)
        n = len(self.points)
        if n == 0 or len(self.colors) != n or len(self.source_pixels) != n:
            raise ValidationError("point cloud arrays must be non-empty and of equal length")

    def __len__(self):
        return len(self.points)

    def subset(self, mask) -> "RoiPointCloud":
        return RoiPointCloud(self.points[mask], self.colors[mask], self.source_pixels[mask])


@dataclass
class GridSpec:
    boundaries_x: np.ndarray
    boundaries_y: np.ndarray
    boundaries_z: np.ndarray
    mode: str

    def __post_init__(self):
        if self.mode not in GRID_MODES:
            raise ValidationError(f"unknown grid mode {self.mode!r}")
        for name in ("boundaries_x", "boundaries_y", "boundaries_z"):
            b = np.asarray(getattr(self, name), dtype=float)
            if b.ndim != 1 or len(b) < 2:
                raise ValidationError(f"{name} needs at least two boundaries")
            if np.any(np.diff(b) < 0):
                raise ValidationError(f"{name} must be non-decreasing")
            setattr(self, name, b)

    @property
    def boundaries(self):
        return (self.boundaries_x, self.boundaries_y, self.boundaries_z)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(len(b) - 1 for b in self.boundaries)

    def is_degenerate(self) -> bool:
        return all(b[0] == b[-1] for b in self.boundaries)

    def cell_of(self, point) -> Tuple[int, int, int]:
        idx, _ = assign_cells(np.asarray(point, dtype=float).reshape(1, 3), self)
        return tuple(int(i) for i in idx[0])

    def cell_bounds(self, cell):
        return [(float(b[k]), float(b[k + 1])) for b, k in zip(self.boundaries, cell)]

    def cell_center(self, cell) -> np.ndarray:
        return np.array([0.5 * (lo + hi) for lo, hi in self.cell_bounds(cell)])


@dataclass
class VoxelGrid:
    spec: GridSpec
    features: np.ndarray  # (nx, ny, nz, 3) mean RGB
    counts: np.ndarray  # (nx, ny, nz)
    out_of_range: int = 0

    @property
    def occupancy(self) -> float:
        return float(np.count_nonzero(self.counts)) / self.counts.size


def extract_roi_points(depth: DepthMap, rgb, box2d: Box2D, calib: CameraCalib) -> RoiPointCloud:
    """Back-project every valid-depth pixel inside ``box2d``.

    Pixel ``(u, v)`` is inside when ``left <= u < right`` and
    ``top <= v < bottom``.  ``rgb`` is an ``(h, w, 3)`` array, uint8 or
    float in [0, 1], or ``None`` for zero colours.
    """
    h, w = depth.values.shape
    if rgb is not None:
        rgb = np.asarray(rgb)
        if rgb.shape[:2] != (h, w):
            raise ValidationError(f"rgb shape {rgb.shape[:2]} does not match depth {(h, w)}")
        if rgb.dtype == np.uint8:
            rgb = rgb.astype(float) / 255.0
    u0 = max(0, math.ceil(box2d.left))
    v0 = max(0, math.ceil(box2d.top))
    u1 = min(w, math.ceil(box2d.right))
    v1 = min(h, math.ceil(box2d.bottom))
    if u0 >= u1 or v0 >= v1:
        raise EmptyRoiError(f"box {box2d.as_tuple()} does not cover any pixel of the image")
    vv, uu = np.mgrid[v0:v1, u0:u1]
    mask = depth.valid[v0:v1, u0:u1]
    if not mask.any():
        raise EmptyRoiError(f"box {box2d.as_tuple()} has no valid depth pixels")
    uu, vv = uu[mask], vv[mask]
    points = backproject(uu, vv, depth.values[vv, uu], calib)
    colors = np.zeros((len(uu), 3)) if rgb is None else np.asarray(rgb[vv, uu, :3], dtype=float)
    return RoiPointCloud(points, colors, np.stack([uu, vv], axis=1))


def remove_outliers(cloud: RoiPointCloud, margin: float = DEFAULT_MARGIN) -> RoiPointCloud:
    """Drop points deeper than ``mean(z) + margin``."""
    z = cloud.points[:, 2]
    keep = z <= z.mean() + margin
    if not keep.any():
        warnings.warn("outlier removal emptied the cloud; keeping the nearest point",
                      DegenerateCloudWarning, stacklevel=2)
        keep = np.zeros(len(z), dtype=bool)
        keep[int(np.argmin(z))] = True
    return cloud.subset(keep)


def _points(cloud) -> np.ndarray:
    if isinstance(cloud, RoiPointCloud):
        return cloud.points
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise ValidationError("grid construction needs at least one point")
    return pts


def object_aware_boundaries(coords: np.ndarray, n: int) -> np.ndarray:
    lo = float(coords.min())
    hi = float(coords.max())
    step = (hi - lo) / n
    bounds = lo + np.arange(n + 1) * step
    bounds[-1] = hi
    return bounds


def point_aware_boundaries(coords: np.ndarray, n: int) -> np.ndarray:
    ordered = np.sort(coords, kind="stable")
    count = len(ordered)
    # integer floor(k*N/n); k = n would index one past the end
    idx = np.minimum(np.arange(n + 1) * count // n, count - 1)
    return ordered[idx]


def object_aware_grid(cloud, shape=DEFAULT_SHAPE) -> GridSpec:
    pts = _points(cloud)
    bounds = [object_aware_boundaries(pts[:, i], int(n)) for i, n in enumerate(shape)]
    return GridSpec(*bounds, mode=OBJECT_AWARE)


def point_aware_grid(cloud, shape=DEFAULT_SHAPE) -> GridSpec:
    pts = _points(cloud)
    bounds = [point_aware_boundaries(pts[:, i], int(n)) for i, n in enumerate(shape)]
    return GridSpec(*bounds, mode=POINT_AWARE)


def build_grid(cloud, shape=DEFAULT_SHAPE, mode: str = POINT_AWARE) -> GridSpec:
    if mode == OBJECT_AWARE:
        return object_aware_grid(cloud, shape)
    if mode == POINT_AWARE:
        return point_aware_grid(cloud, shape)
    raise ValidationError(f"unknown grid mode {mode!r}")


def axis_cells(coords: np.ndarray, bounds: np.ndarray):
    """Cell index per coordinate for one axis, plus an out-of-range mask.

    Intervals are ``[b_k, b_k+1)`` with the last one closed.  An axis whose
    boundaries all coincide puts every point in cell 0.
    """
    n = len(bounds) - 1
    outside = (coords < bounds[0]) | (coords > bounds[-1])
    if bounds[0] == bounds[-1]:
        return np.zeros(len(coords), dtype=np.int64), outside
    idx = np.searchsorted(bounds, coords, side="right") - 1
    return np.clip(idx, 0, n - 1), outside


def assign_cells(points: np.ndarray, spec: GridSpec):
    cells = []
    outside = np.zeros(len(points), dtype=bool)
    for axis, bounds in enumerate(spec.boundaries):
        idx, out = axis_cells(points[:, axis], bounds)
        cells.append(idx)
        outside |= out
    return np.stack(cells, axis=1), outside


def voxelize(cloud: RoiPointCloud, spec: GridSpec) -> VoxelGrid:
    """Scatter points into ``spec``; each occupied cell holds the mean colour.

    Points outside the grid are snapped to the nearest border cell and
    reported in ``out_of_range``.
    """
    cells, outside = assign_cells(cloud.points, spec)
    shape = spec.shape
    flat = np.ravel_multi_index(cells.T, shape)
    size = int(np.prod(shape))
    counts = np.bincount(flat, minlength=size)
    sums = np.stack([np.bincount(flat, weights=cloud.colors[:, c], minlength=size) for c in range(3)],
                    axis=1)
    features = np.zeros((size, 3))
    occupied = counts > 0
    features[occupied] = sums[occupied] / counts[occupied, None]
    return VoxelGrid(spec, features.reshape(*shape, 3), counts.reshape(shape), int(outside.sum()))


@dataclass
class ObjectVoxels:
    """Everything produced for one 2D proposal."""

    cloud: RoiPointCloud
    spec: GridSpec
    grid: VoxelGrid
    frustum_angle: float


def prepare_object(depth: DepthMap, rgb, box2d: Box2D, calib: CameraCalib, shape=DEFAULT_SHAPE,
                   mode: str = POINT_AWARE, margin: Optional[float] = DEFAULT_MARGIN,
                   rotate: bool = True) -> ObjectVoxels:
    """Full per-object chain: extract, de-noise, frustum-rotate, grid, voxelize.

    Rotation happens before grid construction since it changes the
    coordinate spread along x and z.  ``margin=None`` skips outlier removal.
    """
    cloud = extract_roi_points(depth, rgb, box2d, calib)
    if margin is not None:
        cloud = remove_outliers(cloud, margin)
    theta = 0.0
    if rotate:
        rotated, theta = frustum_rotate(cloud.points, box2d, calib)
        cloud = RoiPointCloud(rotated, cloud.colors, cloud.source_pixels)
    spec = build_grid(cloud, shape, mode)
    return ObjectVoxels(cloud, spec, voxelize(cloud, spec), theta)
