"""Readers and writers for KITTI calibration, label, depth and split files."""

from __future__ import annotations

import io
import logging
import math
import os
import warnings
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from .errors import (
    ConsistencyError,
    EmptySplitWarning,
    FormatError,
    ParseError,
    ValidationError,
)
from .geometry import Box2D, Box3D, CameraCalib

logger = logging.getLogger(__name__)

DONT_CARE = "DontCare"
DEPTH_SCALE = 256.0


@dataclass(frozen=True)
class ObjectRecord:
    """One row of a KITTI label or detection file."""

    class_name: str
    truncation: float
    occlusion: int
    alpha: float
    box2d: Box2D
    dims: Tuple[float, float, float]  # (h, w, l)
    location: Tuple[float, float, float]  # bottom-face center, camera frame
    rotation_y: float
    score: Optional[float] = None

    @property
    def is_dont_care(self) -> bool:
        return self.class_name == DONT_CARE

    def box3d(self) -> Box3D:
        return Box3D(self.location, self.dims, self.rotation_y)

    def with_score(self, score: float) -> "ObjectRecord":
        return replace(self, score=score)


@dataclass
class DepthMap:
    """Dense metric depth; ``valid`` is False wherever no depth was stored."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.valid = np.asarray(self.valid, dtype=bool) & (self.values > 0)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_meters(cls, depth) -> "DepthMap":
        depth = np.asarray(depth, dtype=float)
        valid = np.isfinite(depth) & (depth > 0)
        return cls(np.where(valid, depth, 0.0), valid)


@dataclass
class SplitSpec:
    depth_train_scenes: Set[str] = field(default_factory=set)
    depth_val_scenes: Set[str] = field(default_factory=set)
    detection_val_frames: Set[int] = field(default_factory=set)


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------

def parse_calibration(text: str, key: str = "P2") -> CameraCalib:
    """Read the ``P2:`` (or ``key``) projection matrix from a calib file."""
    prefix = key + ":"
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped.startswith(prefix):
            continue
        offset = line.index(prefix) + len(prefix)
        values = []
        for col, token in _tokens_with_columns(line, offset):
            try:
                values.append(float(token))
            except ValueError:
                raise ParseError(f"non-numeric token {token!r} in {key}", lineno, col) from None
        if len(values) != 12:
            raise ParseError(f"{key} needs 12 values, found {len(values)}", lineno)
        return CameraCalib(np.array(values).reshape(3, 4))
    raise FormatError(f"calibration is missing the {prefix} line")


def read_calibration(path) -> CameraCalib:
    with open(path, "r") as f:
        return parse_calibration(f.read())


def _tokens_with_columns(line: str, start: int = 0):
    col = start
    for token in line[start:].split():
        col = line.index(token, col)
        yield col + 1, token
        col += len(token)


# ---------------------------------------------------------------------------
# labels / detections
# ---------------------------------------------------------------------------

def parse_objects(text: str, expect_score: bool = False) -> List[ObjectRecord]:
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        records.append(_parse_object_line(line, lineno, expect_score))
    return records


def _parse_object_line(line: str, lineno: int, expect_score: bool) -> ObjectRecord:
    fields = line.split()
    if len(fields) not in (15, 16):
        raise ParseError(f"expected 15 or 16 fields, found {len(fields)}", lineno)
    if expect_score and len(fields) != 16:
        raise FormatError(f"detection is missing its score (line {lineno})")
    nums = []
    for col, token in list(_tokens_with_columns(line))[1:]:
        try:
            nums.append(float(token))
        except ValueError:
            raise ParseError(f"non-numeric token {token!r}", lineno, col) from None
    occlusion = nums[1]
    if occlusion != int(occlusion):
        raise ParseError(f"occlusion must be an integer, got {occlusion}", lineno)
    return ObjectRecord(
        class_name=fields[0],
        truncation=nums[0],
        occlusion=int(occlusion),
        alpha=nums[2],
        box2d=Box2D(*nums[3:7]),
        dims=tuple(nums[7:10]),
        location=tuple(nums[10:13]),
        rotation_y=nums[13],
        score=nums[14] if len(nums) == 15 else None,
    )


def read_objects(path, expect_score: bool = False) -> List[ObjectRecord]:
    with open(path, "r") as f:
        text = f.read()
    try:
        return parse_objects(text, expect_score)
    except FormatError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def _format_score(score: float) -> str:
    short = f"{score:.6f}"
    # keep full precision when six decimals would lose information
    return short if float(short) == score else repr(float(score))


def _is_dont_care_sentinel(rec: ObjectRecord) -> bool:
    return (rec.truncation == -1 and rec.occlusion == -1 and rec.alpha == -10 and rec.rotation_y == -10
            and tuple(rec.location) == (-1000, -1000, -1000))


def format_object(rec: ObjectRecord) -> str:
    if rec.is_dont_care:
        dims = (-1.0, -1.0, -1.0)
    else:
        if min(rec.dims) <= 0 or not all(math.isfinite(d) for d in rec.dims):
            raise ValidationError(f"{rec.class_name} record has invalid dimensions {rec.dims}")
        dims = rec.dims
    b = rec.box2d
    if rec.is_dont_care and _is_dont_care_sentinel(rec):
        # canonical KITTI spelling of the unused fields
        box = " ".join(f"{v:.2f}" for v in b.as_tuple())
        line = f"{rec.class_name} -1 -1 -10 {box} -1 -1 -1 -1000 -1000 -1000 -10"
        return line if rec.score is None else f"{line} {_format_score(rec.score)}"
    values = [rec.truncation, rec.occlusion, rec.alpha, b.left, b.top, b.right, b.bottom,
              *dims, *rec.location, rec.rotation_y]
    parts = [rec.class_name, f"{values[0]:.2f}", f"{int(values[1])}"]
    parts += [f"{v:.2f}" for v in values[2:]]
    if rec.score is not None:
        parts.append(_format_score(rec.score))
    return " ".join(parts)


def write_objects(records: Iterable[ObjectRecord]) -> str:
    lines = [format_object(r) for r in records]
    return "".join(line + "\n" for line in lines)


# ---------------------------------------------------------------------------
# depth rasters
# ---------------------------------------------------------------------------

def load_depth_map(raster) -> DepthMap:
    """Decode a 16-bit single-channel raster (bytes, path or file object).

    Depth is ``value / 256`` metres; a stored zero marks a missing pixel.
    """
    from PIL import Image

    if isinstance(raster, (bytes, bytearray)):
        raster = io.BytesIO(raster)
    try:
        img = Image.open(raster)
        img.load()
    except (OSError, SyntaxError) as exc:
        raise FormatError(f"cannot decode depth raster: {exc}") from None
    if img.mode not in ("I;16", "I;16B", "I;16L"):
        raise FormatError(f"depth raster must be 16-bit single channel, got mode {img.mode}")
    stored = np.array(img, dtype=np.uint16)
    valid = stored > 0
    return DepthMap(stored.astype(float) / DEPTH_SCALE, valid)


def encode_depth_png(depth_m) -> bytes:
    """Inverse of :func:`load_depth_map`; non-positive or NaN depth becomes 0."""
    from PIL import Image

    depth = np.asarray(depth_m, dtype=float)
    stored = np.where(np.isfinite(depth) & (depth > 0), np.round(depth * DEPTH_SCALE), 0)
    stored = np.clip(stored, 0, 65535).astype(np.uint16)
    buf = io.BytesIO()
    Image.fromarray(stored).save(buf, format="PNG")
    return buf.getvalue()


def load_rgb(path) -> np.ndarray:
    """RGB image as an ``(h, w, 3)`` float array in [0, 1]."""
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=float) / 255.0


def image_size(path) -> Tuple[int, int]:
    from PIL import Image

    with Image.open(path) as img:
        return img.size


# ---------------------------------------------------------------------------
# depth dataset split
# ---------------------------------------------------------------------------

def parse_frame_scene_mapping(text: str) -> Dict[int, str]:
    mapping = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields or fields[0].startswith("#"):
            continue
        if len(fields) != 2:
            raise ParseError(f"mapping rows need 2 columns, found {len(fields)}", lineno)
        try:
            frame = int(fields[0])
        except ValueError:
            raise ParseError(f"frame index {fields[0]!r} is not an integer", lineno, 1) from None
        mapping[frame] = fields[1]
    return mapping


def parse_frame_list(text: str) -> Set[int]:
    frames = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        token = line.strip()
        if not token:
            continue
        try:
            frames.add(int(token))
        except ValueError:
            raise ParseError(f"frame index {token!r} is not an integer", lineno, 1) from None
    return frames


def parse_scene_list(text: str) -> Set[str]:
    return {line.strip() for line in text.splitlines() if line.strip()}


def generate_depth_split(frame_to_scene: Mapping[int, str], detection_val_frames) -> SplitSpec:
    """Depth-training scenes are every scene not seen by a detection-validation frame."""
    val_frames = set(detection_val_frames)
    missing = sorted(f for f in val_frames if f not in frame_to_scene)
    if missing:
        raise ConsistencyError(f"validation frames without a scene mapping: {missing}")
    all_scenes = set(frame_to_scene.values())
    touched = {frame_to_scene[f] for f in val_frames}
    split = SplitSpec(all_scenes - touched, touched, val_frames)
    if not split.depth_train_scenes:
        warnings.warn("every scene is touched by the validation frames; depth training set is empty",
                      EmptySplitWarning, stacklevel=2)
    return split


def check_split(split: SplitSpec, frame_to_scene: Mapping[int, str]) -> List[str]:
    """List every leakage or consistency problem; empty means clean."""
    problems = []
    both = split.depth_train_scenes & split.depth_val_scenes
    if both:
        problems.append(f"scenes in both depth train and depth val: {sorted(both)}")
    for frame in sorted(split.detection_val_frames):
        scene = frame_to_scene.get(frame)
        if scene is None:
            problems.append(f"validation frame {frame} has no scene mapping")
        elif scene in split.depth_train_scenes:
            problems.append(f"validation frame {frame} belongs to depth training scene {scene}")
    return problems


TRAIN_SPLIT_FILE = "depth_train_scenes.txt"
VAL_SPLIT_FILE = "depth_val_scenes.txt"


def write_split(split: SplitSpec, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for name, scenes in ((TRAIN_SPLIT_FILE, split.depth_train_scenes),
                         (VAL_SPLIT_FILE, split.depth_val_scenes)):
        with open(os.path.join(out_dir, name), "w") as f:
            f.writelines(s + "\n" for s in sorted(scenes))


def read_split(split_dir, detection_val_frames=()) -> SplitSpec:
    scenes = []
    for name in (TRAIN_SPLIT_FILE, VAL_SPLIT_FILE):
        with open(os.path.join(split_dir, name)) as f:
            scenes.append(parse_scene_list(f.read()))
    return SplitSpec(scenes[0], scenes[1], set(detection_val_frames))
