"""3D center heatmap targets, peak decoding and the smooth-L1 loss."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGridError, DomainError, NoPeakWarning, ValidationError
from .voxelizer import GridSpec

DEFAULT_RADIUS = 2.0


@dataclass
class Heatmap3D:
    spec: GridSpec
    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        if self.scores.shape != self.spec.shape:
            raise ValidationError(f"heatmap shape {self.scores.shape} does not match grid {self.spec.shape}")
        if self.scores.size and (self.scores.min() < 0 or self.scores.max() > 1):
            raise ValidationError("heatmap scores must lie in [0, 1]")


def heatmap_target(spec: GridSpec, gt_center, radius: float = DEFAULT_RADIUS) -> Heatmap3D:
    """Gaussian peak at the cell holding ``gt_center``.

    Distance is measured in cell-index units with sigma = radius / 3, so
    non-uniform (point-aware) grids still get a symmetric peak.
    """
    if radius <= 0:
        raise DomainError("heatmap radius must be positive")
    if spec.is_degenerate():
        raise DegenerateGridError("every axis of the grid has zero extent")
    peak = np.array(spec.cell_of(gt_center), dtype=float)
    sigma = radius / 3.0
    axes = np.meshgrid(*[np.arange(n, dtype=float) for n in spec.shape], indexing="ij")
    d2 = sum((a - c) ** 2 for a, c in zip(axes, peak))
    return Heatmap3D(spec, np.exp(-d2 / (2.0 * sigma * sigma)))


def decode_center(hm: Heatmap3D):
    """Return ``(center, score, cell)`` of the highest-scoring cell.

    Ties go to the lowest flat index (x-major order).
    """
    flat = int(np.argmax(hm.scores))
    cell = tuple(int(i) for i in np.unravel_index(flat, hm.scores.shape))
    score = float(hm.scores.flat[flat])
    if score <= 0:
        warnings.warn("heatmap has no positive peak", NoPeakWarning, stacklevel=2)
        score = 0.0
    return hm.spec.cell_center(cell), score, cell


def smooth_l1(pred, target, beta: float = 1.0) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise DomainError(f"shape mismatch {pred.shape} vs {target.shape}")
    if beta <= 0:
        raise DomainError("beta must be positive")
    d = np.abs(pred - target)
    loss = np.where(d < beta, 0.5 * d * d / beta, d - 0.5 * beta)
    return float(loss.mean()) if loss.size else 0.0
