"""
Instance fusion: keep instance identities consistent across key-frame detections
and the tracked frames in between.

Procedure per video:
  - at each key frame, proposals are matched to tracks alive at that frame
    (same category, IoU strictly above the threshold, greedy one-to-one)
  - matched tracks keep their id; unmatched proposals open new tracks
  - every track alive at a key frame is tracked forward to the next key frame
  - each newly opened track is tracked backward over a short window
"""
import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Tuple

from egoqa.config import Config
from egoqa.errors import DataError, TrackerFailure
from egoqa.tools.rle import MaskRecord, Rle, mask_iou
from egoqa.tools.trackers import Tracker

logger = logging.getLogger(__name__)

ORIGIN_DETECTED = "detected"
ORIGIN_REVERSE_EXTENDED = "reverse_extended"


@dataclass(frozen=True)
class MaskFrame:
    frame_index: int
    masks: Dict[int, Rle]

    def __post_init__(self):
        if self.frame_index < 0:
            raise DataError(f"Negative frame index {self.frame_index}")
        sizes = {tuple(m.size) for m in self.masks.values()}
        if len(sizes) > 1:
            raise DataError(f"Frame {self.frame_index} mixes mask sizes {sorted(sizes)}")


@dataclass
class Track:
    instance_id: int
    category: str
    frames: Dict[int, Rle] = field(default_factory=dict)
    origin: str = ORIGIN_DETECTED
    extended_frames: Tuple[int, ...] = ()

    @property
    def first_frame(self) -> int:
        return min(self.frames)

    @property
    def last_frame(self) -> int:
        return max(self.frames)

    @property
    def frame_indices(self) -> List[int]:
        return sorted(self.frames)

    @property
    def total_area(self) -> int:
        return sum(m.area for m in self.frames.values())

    def mask_at(self, frame_index: int) -> Optional[Rle]:
        return self.frames.get(frame_index)

    def sorted_copy(self) -> "Track":
        return replace(self, frames={k: self.frames[k] for k in sorted(self.frames)})


@dataclass(frozen=True)
class Proposal:
    category: str
    mask: Rle


@dataclass(frozen=True)
class DetectionBatch:
    key_frame_index: int
    proposals: Tuple[Proposal, ...] = ()


@dataclass
class KeyframeAssignment:
    """proposal index -> instance id; `fresh` lists proposals that opened new ids"""

    ids: Dict[int, int]
    fresh: List[int]
    next_id: int


def merge_at_keyframe(
    active_tracks: List[Track],
    batch: DetectionBatch,
    threshold: float = Config.MERGE_IOU_THRESHOLD,
    next_id: int = 0,
) -> KeyframeAssignment:
    """
    Greedy one-to-one matching of proposals to tracks by descending IoU within a
    category. IoU must be strictly greater than threshold to keep the old id.
    """
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    key = batch.key_frame_index

    pairs = []
    for p_idx, proposal in enumerate(batch.proposals):
        for track in active_tracks:
            track_mask = track.mask_at(key)
            if track_mask is None or track.category != proposal.category:
                continue
            iou = mask_iou(proposal.mask, track_mask)
            if iou > threshold:
                pairs.append((-iou, p_idx, track.instance_id))
    pairs.sort()

    ids: Dict[int, int] = {}
    taken = set()
    for _, p_idx, track_id in pairs:
        if p_idx in ids or track_id in taken:
            continue
        ids[p_idx] = track_id
        taken.add(track_id)

    fresh = []
    for p_idx in range(len(batch.proposals)):
        if p_idx not in ids:
            ids[p_idx] = next_id
            fresh.append(p_idx)
            next_id += 1
    return KeyframeAssignment(ids=ids, fresh=fresh, next_id=next_id)


def reverse_extend(track: Track, tracker: Tracker, window_seconds: float, fps: float) -> Track:
    """
    Track a newly detected instance backward over min(window·fps, first frame)
    frames. Stops on loss; a TrackerFailure discards everything gathered.
    """
    if track.origin != ORIGIN_DETECTED:
        raise DataError(f"Track {track.instance_id} was already extended")
    if window_seconds <= 0:
        raise ValueError("window_seconds must be > 0")

    first = track.first_frame
    span = min(int(round(window_seconds * fps)), first)
    if span <= 0:
        return track

    frames = range(first - 1, first - span - 1, -1)
    gathered: Dict[int, Rle] = {}
    for frame, mask in tracker.propagate(track.frames[first], first, frames):
        if mask is None or frame in track.frames or frame < 0:
            break
        gathered[frame] = mask

    if not gathered:
        return track
    merged = dict(track.frames)
    merged.update(gathered)
    return replace(
        track,
        frames={k: merged[k] for k in sorted(merged)},
        origin=ORIGIN_REVERSE_EXTENDED,
        extended_frames=tuple(sorted(gathered)),
    )


def _track_forward(track: Track, tracker: Tracker, start: int, stop: int) -> None:
    """Fill track.frames over (start, stop] from the mask at start"""
    frames = [f for f in range(start + 1, stop + 1)]
    if not frames:
        return
    for frame, mask in tracker.propagate(track.frames[start], start, frames):
        if mask is None:
            break
        track.frames[frame] = mask


def assemble_lifecycles(
    key_frame_batches: List[DetectionBatch],
    tracker: Tracker,
    fps: float,
    threshold: float = Config.MERGE_IOU_THRESHOLD,
    window_seconds: float = Config.REVERSE_WINDOW_S,
    total_frames: Optional[int] = None,
) -> List[Track]:
    """
    Alternate forward tracking and key-frame merging, then reverse-extend every
    newly introduced instance.

    Args:
        key_frame_batches: Detections sorted by key frame
        tracker: Tracker provider
        fps: Source frame rate
        threshold: Merge IoU threshold (strict)
        window_seconds: Reverse tracking window
        total_frames: Video length; after the last key frame tracks are followed to
            its end (default: one key-frame interval)

    Returns:
        Tracks ordered by instance id
    """
    keys = [b.key_frame_index for b in key_frame_batches]
    if any(b <= a for a, b in zip(keys, keys[1:])):
        raise DataError("Detection batches must be sorted by strictly increasing key frame")

    tracks: Dict[int, Track] = {}
    opened: List[int] = []
    next_id = 0

    for i, batch in enumerate(key_frame_batches):
        key = batch.key_frame_index
        active = [t for t in tracks.values() if key in t.frames]
        assignment = merge_at_keyframe(active, batch, threshold, next_id)
        next_id = assignment.next_id

        for p_idx, instance_id in sorted(assignment.ids.items()):
            proposal = batch.proposals[p_idx]
            if p_idx in assignment.fresh:
                tracks[instance_id] = Track(instance_id, proposal.category, {key: proposal.mask})
                opened.append(instance_id)
            else:
                tracks[instance_id].frames[key] = proposal.mask

        if i + 1 < len(key_frame_batches):
            stop = key_frame_batches[i + 1].key_frame_index
        elif total_frames is not None:
            stop = total_frames - 1
        else:
            stop = key + int(round(fps))
        if total_frames is not None:
            stop = min(stop, total_frames - 1)

        for instance_id in sorted(tracks):
            track = tracks[instance_id]
            if key in track.frames:
                _track_forward(track, tracker, key, stop)

    for instance_id in opened:
        try:
            tracks[instance_id] = reverse_extend(tracks[instance_id], tracker, window_seconds, fps)
        except TrackerFailure as e:
            raise TrackerFailure(
                f"Reverse tracking failed for instance {instance_id}: {e}", stage="fuse"
            ) from e

    result = [tracks[k].sorted_copy() for k in sorted(tracks)]
    logger.info(f"Assembled {len(result)} tracks from {len(key_frame_batches)} key frames")
    return result


def segment_video(total_frames: int, fps: float, chunk_seconds: float = Config.CHUNK_SECONDS) -> List[Tuple[int, int]]:
    """Half-open [start, end) chunks of chunk_seconds·fps frames"""
    if total_frames < 0 or fps <= 0:
        raise ValueError("total_frames must be >= 0 and fps > 0")
    size = max(1, int(round(chunk_seconds * fps)))
    return [(start, min(start + size, total_frames)) for start in range(0, total_frames, size)]


def cap_per_category(tracks: List[Track], cap: int = Config.MAX_INSTANCES_PER_CATEGORY) -> List[Track]:
    """Keep the `cap` largest cumulative-area tracks per category (ties: lower id)"""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    by_category: Dict[str, List[Track]] = defaultdict(list)
    for track in tracks:
        by_category[track.category].append(track)

    kept = set()
    for category, members in by_category.items():
        ranked = sorted(members, key=lambda t: (-t.total_area, t.instance_id))
        kept.update(t.instance_id for t in ranked[:cap])
        dropped = len(members) - min(cap, len(members))
        if dropped:
            logger.info(f"cap_per_category: dropped {dropped} '{category}' tracks")
    return sorted((t for t in tracks if t.instance_id in kept), key=lambda t: t.instance_id)


# ============================================================================
# Record conversion
# ============================================================================

def batches_from_records(records: Iterable[MaskRecord]) -> List[DetectionBatch]:
    """Group detection records (instance_id ignored) into key-frame batches"""
    grouped: Dict[int, List[Proposal]] = defaultdict(list)
    for record in records:
        grouped[record.frame_index].append(Proposal(record.category, record.rle))
    return [DetectionBatch(k, tuple(grouped[k])) for k in sorted(grouped)]


def tracks_from_records(records: Iterable[MaskRecord]) -> List[Track]:
    tracks: Dict[int, Track] = {}
    for record in records:
        track = tracks.setdefault(record.instance_id, Track(record.instance_id, record.category))
        if record.category != track.category:
            raise DataError(
                f"Instance {record.instance_id} has categories {track.category!r} and {record.category!r}"
            )
        if record.frame_index in track.frames:
            raise DataError(f"Instance {record.instance_id} has two masks at frame {record.frame_index}")
        track.frames[record.frame_index] = record.rle
    return [tracks[k].sorted_copy() for k in sorted(tracks)]


def tracks_to_records(video_id: str, tracks: Iterable[Track]) -> List[MaskRecord]:
    records = [
        MaskRecord(video_id, frame, track.instance_id, track.category, mask)
        for track in tracks
        for frame, mask in track.frames.items()
    ]
    return sorted(records, key=lambda r: (r.frame_index, r.instance_id))
