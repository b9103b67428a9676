"""Little-endian binary containers for voxel grids and heatmaps.

Layout shared by both kinds::

    magic     4 bytes   b"OCMV" (voxel grid) or b"OCMH" (heatmap)
    version   uint8
    mode      uint8     0 = object_aware, 1 = point_aware
    shape     3 x uint32
    extra     uint32    out-of-range tally (voxel grid) / 0 (heatmap)
    bounds    float64 x (nx+1 + ny+1 + nz+1)
    payload   voxel grid: features float64 x nx*ny*nz*3, counts uint32 x nx*ny*nz
              heatmap:    scores float64 x nx*ny*nz
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError
from .heatmap import Heatmap3D
from .voxelizer import GRID_MODES, GridSpec, VoxelGrid

VOXEL_MAGIC = b"OCMV"
HEATMAP_MAGIC = b"OCMH"
VERSION = 1
_HEADER = struct.Struct("<4sBB3II")


def _pack_header(magic, spec: GridSpec, extra: int) -> bytes:
    head = _HEADER.pack(magic, VERSION, GRID_MODES.index(spec.mode), *spec.shape, extra)
    bounds = np.concatenate(spec.boundaries).astype("<f8")
    return head + bounds.tobytes()


def _unpack_header(data: bytes, magic: bytes):
    if len(data) < _HEADER.size:
        raise FormatError("container is truncated")
    got, version, mode, nx, ny, nz, extra = _HEADER.unpack_from(data)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    if mode >= len(GRID_MODES):
        raise FormatError(f"unknown grid mode code {mode}")
    offset = _HEADER.size
    nb = nx + ny + nz + 3
    bounds = _take(data, offset, "<f8", nb)
    offset += 8 * nb
    spec = GridSpec(bounds[: nx + 1], bounds[nx + 1: nx + ny + 2], bounds[nx + ny + 2:], GRID_MODES[mode])
    return spec, extra, offset


def _take(data, offset, dtype, count):
    size = np.dtype(dtype).itemsize * count
    if offset + size > len(data):
        raise FormatError("container is truncated")
    return np.frombuffer(data, dtype=dtype, count=count, offset=offset).astype(np.dtype(dtype).newbyteorder("="))


def dump_voxel_grid(grid: VoxelGrid) -> bytes:
    return (_pack_header(VOXEL_MAGIC, grid.spec, grid.out_of_range)
            + np.ascontiguousarray(grid.features, dtype="<f8").tobytes()
            + np.ascontiguousarray(grid.counts, dtype="<u4").tobytes())


def load_voxel_grid(data: bytes) -> VoxelGrid:
    spec, extra, offset = _unpack_header(data, VOXEL_MAGIC)
    n = int(np.prod(spec.shape))
    features = _take(data, offset, "<f8", n * 3).reshape(*spec.shape, 3)
    counts = _take(data, offset + 24 * n, "<u4", n).reshape(spec.shape).astype(np.int64)
    if offset + 28 * n != len(data):
        raise FormatError("trailing bytes after voxel payload")
    return VoxelGrid(spec, features, counts, extra)


def dump_heatmap(hm: Heatmap3D) -> bytes:
    return _pack_header(HEATMAP_MAGIC, hm.spec, 0) + np.ascontiguousarray(hm.scores, dtype="<f8").tobytes()


def load_heatmap(data: bytes) -> Heatmap3D:
    spec, _, offset = _unpack_header(data, HEATMAP_MAGIC)
    n = int(np.prod(spec.shape))
    scores = _take(data, offset, "<f8", n).reshape(spec.shape)
    if offset + 8 * n != len(data):
        raise FormatError("trailing bytes after heatmap payload")
    return Heatmap3D(spec, scores)


def grid_summary(grid: VoxelGrid) -> str:
    spec = grid.spec
    lines = [
        f"mode: {spec.mode}",
        f"shape: {spec.shape[0]}x{spec.shape[1]}x{spec.shape[2]}",
        f"points: {int(grid.counts.sum())} (out of range: {grid.out_of_range})",
        f"occupancy: {100.0 * grid.occupancy:.2f}%",
    ]
    for axis, bounds in zip("xyz", spec.boundaries):
        lines.append(f"boundaries_{axis}: " + " ".join(f"{b:.4f}" for b in bounds))
    return "\n".join(lines)
