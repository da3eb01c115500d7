"""
Tracker providers for instance fusion.

A tracker propagates one instance mask from a start frame across an ordered run
of frames, yielding (frame_index, mask) pairs; a None mask means the target was
lost and propagation stops. Neural trackers run out of process; their recorded
per-frame output is replayed through ReplayTracker.
"""
from collections import defaultdict
from typing import Dict, Iterable, Iterator, List, Optional, Protocol, Tuple

from egoqa.errors import TrackerFailure
from egoqa.tools.rle import MaskRecord, Rle, mask_iou


class Tracker(Protocol):
    def propagate(
        self, mask: Rle, start_frame: int, frame_indices: Iterable[int]
    ) -> Iterator[Tuple[int, Optional[Rle]]]:
        ...


class ReplayTracker:
    """
    Replays recorded tracker output: frame_index -> list of candidate masks.

    The instance followed is the recorded object that overlaps the seed mask best
    at the start frame; its masks are then yielded frame by frame.
    """

    def __init__(self, frames: Dict[int, Dict[int, Rle]]):
        self._frames = frames

    @classmethod
    def from_records(cls, records: Iterable[MaskRecord]) -> "ReplayTracker":
        frames: Dict[int, Dict[int, Rle]] = defaultdict(dict)
        for record in records:
            frames[record.frame_index][record.instance_id] = record.rle
        return cls(dict(frames))

    def _match(self, mask: Rle, start_frame: int) -> Optional[int]:
        candidates = self._frames.get(start_frame, {})
        best_id, best_iou = None, 0.0
        for object_id in sorted(candidates):
            iou = mask_iou(mask, candidates[object_id])
            if iou > best_iou:
                best_id, best_iou = object_id, iou
        return best_id

    def propagate(self, mask, start_frame, frame_indices):
        object_id = self._match(mask, start_frame)
        for frame in frame_indices:
            recorded = self._frames.get(frame, {}).get(object_id) if object_id is not None else None
            if recorded is None or recorded.is_empty:
                yield frame, None
                return
            yield frame, recorded


class ScriptedTracker:
    """
    In-memory tracker driven by a per-frame script of physical objects.

    script[frame] maps object key -> mask. The object followed is the one whose
    mask at the start frame overlaps the seed best. `fail_at` raises
    TrackerFailure when that frame is requested.
    """

    def __init__(self, script: Dict[int, Dict[str, Rle]], fail_at: Optional[int] = None):
        self.script = script
        self.fail_at = fail_at
        self.calls: List[Tuple[int, List[int]]] = []

    def propagate(self, mask, start_frame, frame_indices):
        frame_indices = list(frame_indices)
        self.calls.append((start_frame, frame_indices))
        at_start = self.script.get(start_frame, {})
        key = None
        best = 0.0
        for name in sorted(at_start):
            iou = mask_iou(mask, at_start[name])
            if iou > best:
                key, best = name, iou
        for frame in frame_indices:
            if self.fail_at is not None and frame == self.fail_at:
                raise TrackerFailure(f"scripted failure at frame {frame}")
            current = self.script.get(frame, {}).get(key) if key is not None else None
            if current is None:
                yield frame, None
                return
            yield frame, current
