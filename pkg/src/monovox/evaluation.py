"""KITTI-style detection evaluation: 2D, bird's-eye-view, 3D and AOS.

Matching is greedy by descending detection score: each detection takes the
unmatched ground truth with the largest overlap at or above the threshold.
Ground truths of the evaluated class that miss the difficulty cut, and
objects of a neighbouring class (Van for Car, Person_sitting for
Pedestrian), absorb detections without producing TP or FP.  The same holds
for detections lying mostly inside a DontCare region.

Average precision uses monotone-interpolated precision sampled at 11
recall points (0, 0.1, ..., 1) or 40 (1/40, ..., 1).  Recall levels are
compared with integer arithmetic so no sample point is lost to rounding.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ConsistencyError
from .geometry import intersection_over_first, iou_2d, iou_3d, iou_bev
from .kitti_io import DONT_CARE, ObjectRecord


@dataclass(frozen=True)
class DifficultyRule:
    min_box_height: float
    max_occlusion: int
    max_truncation: float


DIFFICULTIES = ("easy", "moderate", "hard")
DEFAULT_RULES = {
    "easy": DifficultyRule(40, 0, 0.15),
    "moderate": DifficultyRule(25, 1, 0.30),
    "hard": DifficultyRule(25, 2, 0.50),
}
NEIGHBOR_CLASSES = {"Car": ("Van",), "Pedestrian": ("Person_sitting",)}
DEFAULT_THRESHOLDS = {"Car": (0.5, 0.7), "Pedestrian": (0.5,), "Cyclist": (0.5,)}

TASKS = ("2d", "bev", "3d", "aos")
MODES = ("r11", "r40")


def _overlap_2d(a: ObjectRecord, b: ObjectRecord) -> float:
    return iou_2d(a.box2d, b.box2d)


def _overlap_bev(a: ObjectRecord, b: ObjectRecord) -> float:
    return iou_bev(a.box3d(), b.box3d())


def _overlap_3d(a: ObjectRecord, b: ObjectRecord) -> float:
    return iou_3d(a.box3d(), b.box3d())


OVERLAPS: Dict[str, Callable[[ObjectRecord, ObjectRecord], float]] = {
    "2d": _overlap_2d,
    "bev": _overlap_bev,
    "3d": _overlap_3d,
    "aos": _overlap_2d,
}


def assign_difficulty(gt: ObjectRecord, rules: Mapping[str, DifficultyRule] = DEFAULT_RULES) -> Optional[str]:
    """Easiest level whose thresholds the object meets; ``None`` if none."""
    height = gt.box2d.bottom - gt.box2d.top
    for level in DIFFICULTIES:
        rule = rules[level]
        if (height >= rule.min_box_height and gt.occlusion <= rule.max_occlusion
                and gt.truncation <= rule.max_truncation):
            return level
    return None


def counts_at_level(gt: ObjectRecord, level: str, rules: Mapping[str, DifficultyRule] = DEFAULT_RULES) -> bool:
    assigned = assign_difficulty(gt, rules)
    return assigned is not None and DIFFICULTIES.index(assigned) <= DIFFICULTIES.index(level)


TP, FP, IGNORED = "tp", "fp", "ignored"


@dataclass
class Matching:
    """Per-detection outcome, in the order the detections were given."""

    status: List[str]
    matched_gt: List[Optional[int]]
    n_positives: int

    @property
    def tp(self) -> int:
        return self.status.count(TP)

    @property
    def fp(self) -> int:
        return self.status.count(FP)

    @property
    def fn(self) -> int:
        return self.n_positives - self.tp


def match_detections(dets: Sequence[ObjectRecord], gts: Sequence[ObjectRecord], overlap_fn, iou_threshold: float,
                     gt_ignored: Optional[Sequence[bool]] = None, dont_care: Sequence[ObjectRecord] = (),
                     overlaps: Optional[np.ndarray] = None) -> Matching:
    """Greedy one-to-one matching by descending score.

    ``gt_ignored[j]`` marks ground truths that may absorb a detection without
    it counting either way.  ``overlaps`` can supply a precomputed
    ``(len(dets), len(gts))`` matrix.
    """
    if gt_ignored is None:
        gt_ignored = [False] * len(gts)
    if overlaps is None:
        overlaps = np.array([[overlap_fn(d, g) for g in gts] for d in dets]).reshape(len(dets), len(gts))
    order = sorted(range(len(dets)), key=lambda i: -_score(dets[i]))
    taken = [False] * len(gts)
    status: List[str] = [FP] * len(dets)
    matched: List[Optional[int]] = [None] * len(dets)
    for i in order:
        best = _best_gt(overlaps[i], taken, gt_ignored, iou_threshold, want_ignored=False)
        if best is None:
            best = _best_gt(overlaps[i], taken, gt_ignored, iou_threshold, want_ignored=True)
            if best is not None:
                status[i] = IGNORED
        else:
            status[i] = TP
        if best is not None:
            taken[best] = True
            matched[i] = best
            continue
        if any(intersection_over_first(dets[i].box2d, dc.box2d) >= iou_threshold for dc in dont_care):
            status[i] = IGNORED
    n_pos = sum(1 for ign in gt_ignored if not ign)
    return Matching(status, matched, n_pos)


def _score(rec: ObjectRecord) -> float:
    return rec.score if rec.score is not None else 1.0


def _best_gt(row, taken, gt_ignored, threshold, want_ignored):
    best, best_ov = None, -1.0
    for j, ov in enumerate(row):
        if taken[j] or bool(gt_ignored[j]) != want_ignored:
            continue
        if ov >= threshold and ov > best_ov:
            best, best_ov = j, ov
    return best


# ---------------------------------------------------------------------------
# precision / recall
# ---------------------------------------------------------------------------

@dataclass
class PRCurve:
    """Cumulative counts at each distinct score cut-off, highest score first."""

    scores: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    similarity: np.ndarray
    n_positives: int

    @property
    def precision(self) -> np.ndarray:
        denom = np.maximum(self.tp + self.fp, 1)
        return self.tp / denom

    @property
    def recall(self) -> np.ndarray:
        return self.tp / max(self.n_positives, 1)

    @property
    def orientation_similarity(self) -> np.ndarray:
        denom = np.maximum(self.tp + self.fp, 1)
        return self.similarity / denom


def build_curve(entries, n_positives: int) -> PRCurve:
    """``entries`` are ``(score, is_tp, similarity)`` for counted detections.

    Tied scores form a single operating point, so the curve depends only on
    the ranking of the scores.
    """
    entries = sorted(entries, key=lambda e: -e[0])
    scores, tps, fps, sims = [], [], [], []
    tp = fp = 0
    sim = 0.0
    for k, (score, is_tp, s) in enumerate(entries):
        if is_tp:
            tp += 1
            sim += s
        else:
            fp += 1
        if k + 1 == len(entries) or entries[k + 1][0] != score:
            scores.append(score)
            tps.append(tp)
            fps.append(fp)
            sims.append(sim)
    return PRCurve(np.array(scores, dtype=float), np.array(tps, dtype=np.int64), np.array(fps, dtype=np.int64),
                   np.array(sims, dtype=float), int(n_positives))


def recall_levels(mode: str):
    """Sample points as integer fractions ``(k, m)`` meaning recall k/m."""
    if mode == "r11":
        return [(k, 10) for k in range(11)]
    if mode == "r40":
        return [(k, 40) for k in range(1, 41)]
    raise ValueError(f"unknown AP mode {mode!r}")


def _interpolated_mean(curve: PRCurve, values: np.ndarray, mode: str) -> float:
    if curve.n_positives == 0 or len(values) == 0:
        return 0.0
    # running max from the high-recall end gives max precision at recall >= r
    best_from = np.maximum.accumulate(values[::-1])[::-1]
    levels = recall_levels(mode)
    total = 0.0
    for k, m in levels:
        # first operating point with tp / n_pos >= k / m
        idx = np.searchsorted(curve.tp * m, k * curve.n_positives, side="left")
        if idx < len(values):
            total += best_from[idx]
    return total / len(levels)


def average_precision(curve: PRCurve, mode: str = "r40") -> float:
    return _interpolated_mean(curve, curve.precision, mode)


def average_orientation_similarity(curve: PRCurve, mode: str = "r40") -> float:
    return _interpolated_mean(curve, curve.orientation_similarity, mode)


# ---------------------------------------------------------------------------
# full evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalConfig:
    classes: Tuple[str, ...] = ("Car",)
    thresholds: Mapping[str, Tuple[float, ...]] = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))
    rules: Mapping[str, DifficultyRule] = field(default_factory=lambda: dict(DEFAULT_RULES))
    tasks: Tuple[str, ...] = TASKS
    modes: Tuple[str, ...] = MODES
    jobs: int = 1

    def thresholds_for(self, cls: str) -> Tuple[float, ...]:
        return tuple(self.thresholds.get(cls, (0.5,)))


@dataclass
class EvalResult:
    ap: Dict[Tuple[str, str, str, float, str], float]
    curves: Dict[Tuple[str, str, str, float], PRCurve]

    def get(self, cls, level, task, threshold, mode) -> float:
        return self.ap[(cls, level, task, threshold, mode)]


def frame_outcomes(dets: Sequence[ObjectRecord], gts: Sequence[ObjectRecord], cfg: EvalConfig):
    """Per-frame matching for every (class, level, task, threshold).

    Returns ``{key: (entries, n_positives)}`` with entries as consumed by
    :func:`build_curve`.
    """
    out = {}
    dont_care = [g for g in gts if g.class_name == DONT_CARE]
    for cls in cfg.classes:
        cls_dets = [d for d in dets if d.class_name == cls]
        neighbors = NEIGHBOR_CLASSES.get(cls, ())
        cls_gts = [g for g in gts if g.class_name == cls or g.class_name in neighbors]
        overlap_cache = {}
        for task in cfg.tasks:
            ov_key = "2d" if task == "aos" else task
            if ov_key not in overlap_cache:
                fn = OVERLAPS[ov_key]
                overlap_cache[ov_key] = np.array(
                    [[fn(d, g) for g in cls_gts] for d in cls_dets]).reshape(len(cls_dets), len(cls_gts))
        for level in DIFFICULTIES:
            ignored = [g.class_name != cls or not counts_at_level(g, level, cfg.rules) for g in cls_gts]
            for task in cfg.tasks:
                overlaps = overlap_cache["2d" if task == "aos" else task]
                for thr in cfg.thresholds_for(cls):
                    m = match_detections(cls_dets, cls_gts, None, thr, ignored, dont_care, overlaps)
                    entries = []
                    for i, st in enumerate(m.status):
                        if st == IGNORED:
                            continue
                        sim = 0.0
                        if st == TP:
                            delta = cls_dets[i].rotation_y - cls_gts[m.matched_gt[i]].rotation_y
                            sim = (1.0 + math.cos(delta)) / 2.0
                        entries.append((_score(cls_dets[i]), st == TP, sim))
                    out[(cls, level, task, thr)] = (entries, m.n_positives)
    return out


def _frame_job(args):
    return frame_outcomes(*args)


def evaluate(dets_by_frame: Mapping, gts_by_frame: Mapping, cfg: Optional[EvalConfig] = None) -> EvalResult:
    cfg = cfg or EvalConfig()
    extra = sorted(set(dets_by_frame) - set(gts_by_frame))
    if extra:
        raise ConsistencyError(f"detections for frames without ground truth: {extra}")
    frames = sorted(gts_by_frame)
    jobs = [(dets_by_frame.get(f, []), gts_by_frame[f], cfg) for f in frames]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            per_frame = list(pool.map(_frame_job, jobs, chunksize=max(1, len(jobs) // (4 * cfg.jobs))))
    else:
        per_frame = [_frame_job(j) for j in jobs]

    merged: Dict[tuple, Tuple[list, int]] = {}
    for outcome in per_frame:
        for key, (entries, n_pos) in outcome.items():
            acc = merged.setdefault(key, ([], 0))
            acc[0].extend(entries)
            merged[key] = (acc[0], acc[1] + n_pos)
    if not per_frame:
        merged = {(c, lvl, t, thr): ([], 0) for c in cfg.classes for lvl in DIFFICULTIES
                  for t in cfg.tasks for thr in cfg.thresholds_for(c)}

    ap, curves = {}, {}
    for key, (entries, n_pos) in merged.items():
        curve = build_curve(entries, n_pos)
        curves[key] = curve
        task = key[2]
        for mode in cfg.modes:
            if task == "aos":
                ap[key + (mode,)] = average_orientation_similarity(curve, mode)
            else:
                ap[key + (mode,)] = average_precision(curve, mode)
    return EvalResult(ap, curves)


def format_table(result: EvalResult, cls: str, mode: str, thresholds: Sequence[float]) -> str:
    """Text table: AP_BEV / AP_3D per threshold and difficulty, in percent."""
    header = f"{cls} AP|{mode.upper()}"
    lines = [header, "-" * len(header)]
    levels = "  ".join(f"{lvl.capitalize():>15}" for lvl in DIFFICULTIES)
    for thr in thresholds:
        lines.append(f"AP_BEV/AP_3D (IoU={thr}):")
        lines.append(f"  {levels}")
        cells = []
        for lvl in DIFFICULTIES:
            bev = result.ap.get((cls, lvl, "bev", thr, mode))
            d3 = result.ap.get((cls, lvl, "3d", thr, mode))
            cells.append(f"{_pct(bev)}/{_pct(d3)}")
        lines.append("  " + "  ".join(f"{c:>15}" for c in cells))
    for task, label in (("2d", "AP_2D"), ("aos", "AOS")):
        for thr in thresholds:
            vals = [result.ap.get((cls, lvl, task, thr, mode)) for lvl in DIFFICULTIES]
            if all(v is None for v in vals):
                continue
            lines.append(f"{label} (IoU={thr}): " + "  ".join(_pct(v) for v in vals))
    return "\n".join(lines)


def _pct(v) -> str:
    return "-" if v is None else f"{100.0 * v:.2f}"


def curves_to_csv(result: EvalResult) -> str:
    rows = ["class,difficulty,task,threshold,score,recall,precision,orientation_similarity"]
    for (cls, lvl, task, thr), curve in sorted(result.curves.items()):
        for s, r, p, o in zip(curve.scores, curve.recall, curve.precision, curve.orientation_similarity):
            rows.append(f"{cls},{lvl},{task},{thr},{s:.6f},{r:.6f},{p:.6f},{o:.6f}")
    return "\n".join(rows) + "\n"
