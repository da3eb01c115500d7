"""
Scoring metrics for benchmark answers: mean relative accuracy for distances,
rotational accuracy for angles, video-level J/F for segmentation tracks, and
the evaluation frame-sampling policy.
"""
import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from egoqa.config import Config
from egoqa.errors import NoForegroundFrames, NonPositiveGroundTruth, SizeMismatch
from egoqa.tools.rle import Rle, decode, intersection_area

logger = logging.getLogger(__name__)

MRA_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))

FramePair = Tuple[Optional[Rle], Optional[Rle]]   # (prediction, ground truth)


# ============================================================================
# Numeric answers
# ============================================================================

def mra(pred: float, gt: float) -> float:
    """
    Mean relative accuracy: fraction of thresholds θ in {0.50, ..., 0.95}
    with |pred - gt| / gt < 1 - θ (equality fails).

    Raises:
        NonPositiveGroundTruth: gt <= 0
    """
    if not gt > 0:
        raise NonPositiveGroundTruth(f"Ground truth must be positive, got {gt}")
    if not math.isfinite(pred):
        return 0.0
    rel = abs(pred - gt) / gt
    hits = sum(1 for theta in MRA_THRESHOLDS if rel < 1.0 - theta)
    return hits / len(MRA_THRESHOLDS)


def angular_difference(a_deg: float, b_deg: float) -> float:
    delta = abs((a_deg % 360.0) - (b_deg % 360.0))
    return min(delta, 360.0 - delta)


def roa(pred_deg: float, gt_deg: float) -> float:
    """Rotational accuracy: 1 - min(wrapped error / 90°, 1)"""
    if not math.isfinite(pred_deg):
        return 0.0
    d = angular_difference(pred_deg, gt_deg)
    return 1.0 - min(d / 90.0, 1.0)


# ============================================================================
# Segmentation tracks
# ============================================================================

def _check_sizes(frames: Sequence[FramePair]) -> Optional[Tuple[int, int]]:
    size = None
    for pair in frames:
        for mask in pair:
            if mask is None:
                continue
            if size is None:
                size = tuple(mask.size)
            elif tuple(mask.size) != size:
                raise SizeMismatch(f"Mask size {mask.size} differs from {size}")
    return size


def global_j(frames: Sequence[FramePair]) -> float:
    """
    Sum of per-frame intersections over sum of per-frame unions. Spurious masks
    on empty ground-truth frames enlarge the denominator. An all-empty video
    scores 1.
    """
    if not frames:
        raise ValueError("global_j needs at least one frame")
    _check_sizes(frames)
    inter_total = 0
    union_total = 0
    for pred, gt in frames:
        pred_area = pred.area if pred is not None else 0
        gt_area = gt.area if gt is not None else 0
        inter = intersection_area(pred, gt) if pred is not None and gt is not None else 0
        inter_total += inter
        union_total += pred_area + gt_area - inter
    if union_total == 0:
        return 1.0
    return inter_total / union_total


def boundary_tolerance(size: Tuple[int, int], fraction: float = Config.BOUNDARY_TOLERANCE_FRACTION) -> int:
    h, w = size
    return max(1, int(math.ceil(fraction * math.hypot(h, w))))


def _disk(radius: int) -> np.ndarray:
    y, x = np.ogrid[-radius:radius + 1, -radius:radius + 1]
    return (x * x + y * y) <= radius * radius


def mask_boundary(mask: np.ndarray) -> np.ndarray:
    """One-pixel inner contour of a binary mask"""
    mask = mask.astype(bool)
    if not mask.any():
        return mask
    return mask ^ ndimage.binary_erosion(mask)


def frame_boundary_f(pred: np.ndarray, gt: np.ndarray, tolerance: int) -> float:
    """Contour F-measure with boundary pixels matched within `tolerance` pixels"""
    pred_b = mask_boundary(pred)
    gt_b = mask_boundary(gt)
    n_pred = int(pred_b.sum())
    n_gt = int(gt_b.sum())
    if n_pred == 0 and n_gt == 0:
        return 1.0
    if n_pred == 0 or n_gt == 0:
        return 0.0

    disk = _disk(tolerance)
    gt_zone = ndimage.binary_dilation(gt_b, structure=disk)
    pred_zone = ndimage.binary_dilation(pred_b, structure=disk)
    precision = float((pred_b & gt_zone).sum()) / n_pred
    recall = float((gt_b & pred_zone).sum()) / n_gt
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def boundary_f(frames: Sequence[FramePair], tolerance_fraction: float = Config.BOUNDARY_TOLERANCE_FRACTION) -> float:
    """
    Mean contour F-measure over frames whose ground truth is non-empty.

    Raises:
        NoForegroundFrames: ground truth is empty in every frame
        SizeMismatch: masks disagree on frame size
    """
    _check_sizes(frames)
    scores = []
    for pred, gt in frames:
        if gt is None or gt.is_empty:
            continue
        gt_arr = decode(gt)
        pred_arr = decode(pred) if pred is not None else np.zeros_like(gt_arr)
        scores.append(frame_boundary_f(pred_arr, gt_arr, boundary_tolerance(gt.size, tolerance_fraction)))
    if not scores:
        raise NoForegroundFrames("Ground truth is empty in every frame")
    return float(np.mean(scores))


def jf_mean(frames: Sequence[FramePair], tolerance_fraction: float = Config.BOUNDARY_TOLERANCE_FRACTION) -> float:
    return (global_j(frames) + boundary_f(frames, tolerance_fraction)) / 2.0


# ============================================================================
# Evaluation frame sampling
# ============================================================================

@dataclass(frozen=True)
class FrameSelection:
    frames: Tuple[int, ...]
    targets_truncated: bool = False


def _uniform_pick(values: Sequence[int], count: int) -> List[int]:
    if count <= 0:
        return []
    if count >= len(values):
        return list(values)
    idx = np.round(np.linspace(0, len(values) - 1, num=count)).astype(int)
    return [values[i] for i in idx]


def candidate_grid(video_frames: int, fps_source: float, fps: float = Config.EVAL_SAMPLE_FPS) -> List[int]:
    """Frame indices on a `fps` grid over a video sampled at `fps_source`"""
    if video_frames <= 0:
        return []
    step = fps_source / fps
    count = int(math.floor((video_frames - 1) / step)) + 1
    return sorted({min(int(round(k * step)), video_frames - 1) for k in range(count)})


def sample_frames(
    video_frames: int,
    fps_source: float,
    target_frames: Iterable[int],
    fps: float = Config.EVAL_SAMPLE_FPS,
    max_frames: int = Config.EVAL_MAX_FRAMES,
) -> FrameSelection:
    """
    Frames fed to a model under evaluation: the 1 fps grid when it fits, else
    every target frame plus uniformly spaced non-target grid frames up to
    `max_frames`. More targets than `max_frames` are thinned uniformly and
    flagged.
    """
    targets = sorted(set(int(t) for t in target_frames))
    bad = [t for t in targets if not 0 <= t < video_frames]
    if bad:
        raise ValueError(f"Target frames outside [0, {video_frames}): {bad[:5]}")

    grid = candidate_grid(video_frames, fps_source, fps)
    union = sorted(set(grid) | set(targets))
    if len(union) <= max_frames:
        return FrameSelection(tuple(union))

    if len(targets) > max_frames:
        logger.warning(f"{len(targets)} target frames exceed the {max_frames}-frame cap; thinning uniformly")
        return FrameSelection(tuple(_uniform_pick(targets, max_frames)), targets_truncated=True)

    target_set = set(targets)
    others = [f for f in grid if f not in target_set]
    fill = _uniform_pick(others, max_frames - len(targets))
    return FrameSelection(tuple(sorted(target_set | set(fill))))
