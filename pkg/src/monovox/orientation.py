"""Patch preparation for orientation regression and MultiBin angle coding."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .errors import DomainError
from .geometry import wrap_angle

DEFAULT_BINS = 2
DEFAULT_OVERLAP = 0.1


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def bilinear_resize(img, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resampling with half-pixel centers and edge clamping."""
    img = np.asarray(img, dtype=float)
    h, w = img.shape[:2]
    if out_w < 1 or out_h < 1:
        raise DomainError("output size must be at least 1x1")
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1)
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[None, :]
    fy = (ys - y0)[:, None]
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


@dataclass(frozen=True)
class ResizeTransform:
    """Bookkeeping that maps source patch pixels to the padded output."""

    scale: float
    offset_x: int
    offset_y: int
    content_width: int
    content_height: int
    source_width: int
    source_height: int

    def to_output(self, u, v):
        sx = self.content_width / self.source_width
        sy = self.content_height / self.source_height
        return u * sx + self.offset_x, v * sy + self.offset_y

    def to_source(self, u, v):
        sx = self.content_width / self.source_width
        sy = self.content_height / self.source_height
        return (u - self.offset_x) / sx, (v - self.offset_y) / sy


def shape_retaining_resize(patch, target: Tuple[int, int]):
    """Scale to fit ``target = (W, H)`` keeping aspect ratio, then zero-pad.

    Padding is split evenly; an odd leftover pixel goes right / bottom.
    Returns ``(output, ResizeTransform)``.
    """
    patch = np.asarray(patch, dtype=float)
    out_w, out_h = int(target[0]), int(target[1])
    if out_w < 1 or out_h < 1:
        raise DomainError("target size must be at least 1x1")
    h, w = patch.shape[:2]
    if h < 1 or w < 1:
        raise DomainError("patch must be at least 1x1")
    scale = min(out_w / w, out_h / h)
    cw = min(out_w, max(1, _round_half_up(scale * w)))
    ch = min(out_h, max(1, _round_half_up(scale * h)))
    content = bilinear_resize(patch, cw, ch)
    left = (out_w - cw) // 2
    top = (out_h - ch) // 2
    out = np.zeros((out_h, out_w) + patch.shape[2:], dtype=float)
    out[top:top + ch, left:left + cw] = content
    return out, ResizeTransform(scale, left, top, cw, ch, w, h)


def naive_resize(patch, target: Tuple[int, int]) -> np.ndarray:
    """Stretch to ``(W, H)`` ignoring aspect ratio; kept for comparison."""
    return bilinear_resize(patch, int(target[0]), int(target[1]))


@dataclass(frozen=True)
class BinEncoding:
    n_bins: int
    bin_index: int
    residual: float


def bin_centers(n_bins: int) -> np.ndarray:
    if n_bins < 2:
        raise DomainError("MultiBin needs at least two bins")
    return 2.0 * math.pi * np.arange(n_bins) / n_bins


def multibin_encode(alpha: float, n_bins: int = DEFAULT_BINS) -> BinEncoding:
    """Nearest bin center (ties to the lower index) plus wrapped residual."""
    centers = bin_centers(n_bins)
    offsets = np.array([wrap_angle(alpha - c) for c in centers])
    k = int(np.argmin(np.abs(offsets)))
    return BinEncoding(n_bins, k, float(offsets[k]))


def multibin_decode(enc: BinEncoding) -> float:
    center = 2.0 * math.pi * enc.bin_index / enc.n_bins
    return wrap_angle(center + enc.residual)


def covering_bins(alpha: float, n_bins: int = DEFAULT_BINS, overlap: float = DEFAULT_OVERLAP) -> List[BinEncoding]:
    """Every bin whose widened sector contains ``alpha`` (training targets)."""
    half = math.pi / n_bins + overlap
    out = []
    for k, c in enumerate(bin_centers(n_bins)):
        r = wrap_angle(alpha - c)
        if abs(r) < half:
            out.append(BinEncoding(n_bins, k, r))
    return out
