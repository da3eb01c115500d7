"""
Run-length codec for binary instance masks, plus the IoU arithmetic used by
fusion, cue-frame selection and segmentation scoring.

Runs are column-major (Fortran order) and start with background, so a mask whose
first pixel is foreground begins with a zero-length run.
"""
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Tuple

import numpy as np

from egoqa.errors import DataError, SizeMismatch


@dataclass(frozen=True)
class Rle:
    """Run-length encoded binary mask of shape (height, width)"""

    size: Tuple[int, int]
    counts: Tuple[int, ...]

    def __post_init__(self):
        h, w = self.size
        if sum(self.counts) != h * w:
            raise DataError(f"RLE counts sum to {sum(self.counts)}, expected {h}x{w}={h * w}")

    @property
    def area(self) -> int:
        return int(sum(self.counts[1::2]))

    @property
    def is_empty(self) -> bool:
        return self.area == 0

    def to_string(self) -> str:
        return " ".join(str(c) for c in self.counts)

    @classmethod
    def from_string(cls, size: Iterable[int], counts: str) -> "Rle":
        h, w = size
        return cls((int(h), int(w)), tuple(int(c) for c in counts.split()))

    @classmethod
    def empty(cls, size: Tuple[int, int]) -> "Rle":
        h, w = size
        return cls((h, w), (h * w,) if h * w else ())


def encode(mask: np.ndarray) -> Rle:
    """Encode a 2D binary mask"""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise DataError(f"Expected a 2D mask, got shape {mask.shape}")
    h, w = mask.shape
    flat = mask.ravel(order="F")
    if flat.size == 0:
        return Rle((h, w), ())

    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds)
    if flat[0]:
        runs = np.concatenate(([0], runs))
    return Rle((h, w), tuple(int(r) for r in runs))


def decode(rle: Rle) -> np.ndarray:
    """Decode to a (height, width) bool array"""
    h, w = rle.size
    values = np.arange(len(rle.counts)) % 2 == 1
    flat = np.repeat(values, rle.counts)
    return flat.reshape((h, w), order="F")


def _foreground_intervals(rle: Rle) -> Tuple[np.ndarray, np.ndarray]:
    counts = np.asarray(rle.counts, dtype=np.int64)
    ends = np.cumsum(counts)
    starts = ends - counts
    fg = np.arange(len(counts)) % 2 == 1
    keep = fg & (counts > 0)
    return starts[keep], ends[keep]


def intersection_area(a: Rle, b: Rle) -> int:
    """Foreground overlap computed directly on the runs (no decode)"""
    if a.size != b.size:
        raise SizeMismatch(f"Mask sizes differ: {a.size} vs {b.size}")
    a_start, a_end = _foreground_intervals(a)
    b_start, b_end = _foreground_intervals(b)
    if len(a_start) == 0 or len(b_start) == 0:
        return 0

    pos = np.concatenate((a_start, a_end, b_start, b_end))
    delta = np.concatenate((
        np.ones_like(a_start), -np.ones_like(a_end),
        np.ones_like(b_start), -np.ones_like(b_end),
    ))
    # Half-open intervals: closings sort before openings at the same position
    order = np.lexsort((delta, pos))
    pos = pos[order]
    coverage = np.cumsum(delta[order])
    return int(np.sum(np.diff(pos)[coverage[:-1] == 2]))


def mask_iou(a: Rle, b: Rle) -> float:
    """
    |a ∩ b| / |a ∪ b|. Two empty masks score 0 so an empty detection never merges.

    Raises:
        SizeMismatch: masks have different sizes
    """
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union == 0:
        return 0.0
    return inter / union


def union_area(a: Rle, b: Rle) -> int:
    return a.area + b.area - intersection_area(a, b)


def bbox(rle: Rle) -> Optional[Tuple[int, int, int, int]]:
    """(x0, y0, x1, y1) inclusive pixel bounds, or None for an empty mask"""
    mask = decode(rle)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if len(rows) == 0:
        return None
    return int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1])


def centroid(rle: Rle) -> Optional[Tuple[float, float]]:
    """(x, y) mean pixel position of the foreground"""
    ys, xs = np.nonzero(decode(rle))
    if len(xs) == 0:
        return None
    return float(xs.mean()), float(ys.mean())


# ============================================================================
# Mask JSONL records
# ============================================================================

@dataclass(frozen=True)
class MaskRecord:
    """One (frame, instance) mask line"""

    video_id: str
    frame_index: int
    instance_id: int
    category: str
    rle: Rle

    def to_json(self) -> dict:
        return {
            "video_id": self.video_id,
            "frame_index": self.frame_index,
            "instance_id": self.instance_id,
            "category": self.category,
            "size": list(self.rle.size),
            "counts": self.rle.to_string(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "MaskRecord":
        try:
            return cls(
                video_id=str(data["video_id"]),
                frame_index=int(data["frame_index"]),
                instance_id=int(data["instance_id"]),
                category=str(data["category"]),
                rle=Rle.from_string(data["size"], data["counts"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"Malformed mask record: {e}") from e


def iter_mask_jsonl(path: Path) -> Iterator[MaskRecord]:
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{line_no}: invalid JSON: {e}") from e
            yield MaskRecord.from_json(data)


def read_mask_jsonl(path: Path) -> List[MaskRecord]:
    return list(iter_mask_jsonl(path))


def write_mask_jsonl(path: Path, records: Iterable[MaskRecord]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record.to_json(), sort_keys=True) + "\n")
            count += 1
    return count
