"""
Unit tests for instance fusion and tracker providers
"""
import numpy as np
import pytest

from egoqa.errors import DataError, TrackerFailure
from egoqa.tools.fusion import (
    ORIGIN_DETECTED,
    ORIGIN_REVERSE_EXTENDED,
    DetectionBatch,
    Proposal,
    Track,
    assemble_lifecycles,
    cap_per_category,
    merge_at_keyframe,
    reverse_extend,
    segment_video,
    tracks_from_records,
    tracks_to_records,
)
from egoqa.tools.rle import MaskRecord, Rle, encode
from egoqa.tools.trackers import ReplayTracker, ScriptedTracker
from tests.conftest import square_mask


def strip(width: int, start: int, stop: int) -> Rle:
    """1-row mask with columns [start, stop) set"""
    mask = np.zeros((1, width), dtype=bool)
    mask[0, start:stop] = True
    return encode(mask)


def visible(frames, mask: Rle, key: str = "a"):
    return {f: {key: mask} for f in frames}


BLOCK = encode(square_mask(16, 16, 4, 4, 6))


class TestMergeAtKeyframe:
    """Tests for key-frame id assignment"""

    def test_overlap_above_threshold_keeps_id(self):
        """IoU 0.6 keeps the old track id"""
        track = Track(7, "chair", {30: strip(10, 0, 8)})
        batch = DetectionBatch(30, (Proposal("chair", strip(10, 2, 10)),))

        result = merge_at_keyframe([track], batch, threshold=0.5, next_id=8)

        assert result.ids == {0: 7}
        assert result.fresh == []
        assert result.next_id == 8

    def test_exact_threshold_opens_new_id(self):
        """IoU exactly 0.5 does not merge"""
        track = Track(7, "chair", {30: strip(10, 0, 6)})
        batch = DetectionBatch(30, (Proposal("chair", strip(10, 2, 8)),))

        result = merge_at_keyframe([track], batch, threshold=0.5, next_id=8)

        assert result.ids == {0: 8}
        assert result.fresh == [0]
        assert result.next_id == 9

    def test_greedy_by_descending_iou(self):
        """The best-overlapping proposal wins the track regardless of order"""
        track = Track(0, "cup", {10: strip(20, 0, 10)})
        batch = DetectionBatch(10, (
            Proposal("cup", strip(20, 0, 7)),    # IoU 0.7
            Proposal("cup", strip(20, 0, 9)),    # IoU 0.9
        ))

        result = merge_at_keyframe([track], batch, threshold=0.5, next_id=1)

        assert result.ids == {0: 1, 1: 0}
        assert result.fresh == [0]

    def test_never_merges_across_categories(self):
        """Identical masks of different categories stay separate"""
        track = Track(0, "cup", {10: BLOCK})
        batch = DetectionBatch(10, (Proposal("bowl", BLOCK),))

        result = merge_at_keyframe([track], batch, next_id=1)

        assert result.ids == {0: 1}

    def test_threshold_range(self):
        """Threshold must lie in (0, 1]"""
        with pytest.raises(ValueError):
            merge_at_keyframe([], DetectionBatch(0), threshold=0.0)


class TestReverseExtend:
    """Tests for backward tracking of new instances"""

    def test_window_in_frames(self):
        """4 s at 30 fps extends 120 frames back"""
        tracker = ScriptedTracker(visible(range(0, 301), BLOCK))
        track = Track(0, "cup", {200: BLOCK})

        extended = reverse_extend(track, tracker, window_seconds=4.0, fps=30.0)

        assert extended.origin == ORIGIN_REVERSE_EXTENDED
        assert extended.extended_frames == tuple(range(80, 200))
        assert extended.first_frame == 80
        assert tracker.calls[0][1][0] == 199

    def test_clamped_at_first_frame(self):
        """Extension never goes below frame 0"""
        tracker = ScriptedTracker(visible(range(0, 100), BLOCK))
        track = Track(0, "cup", {50: BLOCK})

        extended = reverse_extend(track, tracker, 4.0, 30.0)

        assert extended.extended_frames == tuple(range(0, 50))

    def test_stops_on_loss(self):
        """Backward tracking stops at the first lost frame"""
        tracker = ScriptedTracker(visible(range(170, 260), BLOCK))
        track = Track(0, "cup", {200: BLOCK})

        extended = reverse_extend(track, tracker, 4.0, 30.0)

        assert extended.extended_frames == tuple(range(170, 200))

    def test_nothing_gathered_keeps_track(self):
        """An immediate loss leaves the track as detected"""
        tracker = ScriptedTracker(visible([200], BLOCK))
        track = Track(0, "cup", {200: BLOCK})

        extended = reverse_extend(track, tracker, 4.0, 30.0)

        assert extended.origin == ORIGIN_DETECTED
        assert extended.frames == track.frames

    def test_first_frame_zero(self):
        """A track born at frame 0 has nothing to extend"""
        track = Track(0, "cup", {0: BLOCK})
        assert reverse_extend(track, ScriptedTracker({}), 4.0, 30.0) is track

    def test_tracker_failure_propagates(self):
        """Tracker failures are not swallowed"""
        tracker = ScriptedTracker(visible(range(0, 201), BLOCK), fail_at=150)
        with pytest.raises(TrackerFailure):
            reverse_extend(Track(0, "cup", {200: BLOCK}), tracker, 4.0, 30.0)

    def test_only_detected_tracks(self):
        """A track is extended at most once"""
        track = Track(0, "cup", {200: BLOCK}, origin=ORIGIN_REVERSE_EXTENDED)
        with pytest.raises(DataError):
            reverse_extend(track, ScriptedTracker({}), 4.0, 30.0)


class TestAssembleLifecycles:
    """Scenario tests for the full fusion loop"""

    def test_continuously_visible_object_keeps_one_id(self):
        """Repeated detections of a visible object never open new ids"""
        tracker = ScriptedTracker(visible(range(0, 90), BLOCK))
        batches = [DetectionBatch(k, (Proposal("cup", BLOCK),)) for k in (0, 30, 60)]

        tracks = assemble_lifecycles(batches, tracker, fps=30.0, total_frames=90)

        assert len(tracks) == 1
        assert tracks[0].instance_id == 0
        assert tracks[0].frame_indices == list(range(0, 90))
        assert tracks[0].origin == ORIGIN_DETECTED

    def test_reappearing_object_gets_new_id_and_backfill(self):
        """After a gap the object gets a new id, reverse-extended into the frames before detection"""
        script = visible(list(range(0, 41)) + list(range(70, 100)), BLOCK)
        tracker = ScriptedTracker(script)
        batches = [
            DetectionBatch(0, (Proposal("cup", BLOCK),)),
            DetectionBatch(30, (Proposal("cup", BLOCK),)),
            DetectionBatch(60, ()),
            DetectionBatch(90, (Proposal("cup", BLOCK),)),
        ]

        tracks = assemble_lifecycles(batches, tracker, fps=30.0, total_frames=100)

        assert [t.instance_id for t in tracks] == [0, 1]
        assert tracks[0].frame_indices == list(range(0, 41))
        assert tracks[1].frame_indices == list(range(70, 100))
        assert tracks[1].origin == ORIGIN_REVERSE_EXTENDED
        assert tracks[1].extended_frames == tuple(range(70, 90))

    def test_two_objects(self):
        """Two categories are tracked independently"""
        other = encode(square_mask(16, 16, 0, 10, 4))
        script = {f: {"a": BLOCK, "b": other} for f in range(0, 60)}
        batches = [
            DetectionBatch(0, (Proposal("cup", BLOCK),)),
            DetectionBatch(30, (Proposal("cup", BLOCK), Proposal("book", other))),
        ]

        tracks = assemble_lifecycles(batches, ScriptedTracker(script), fps=30.0, total_frames=60)

        assert [(t.instance_id, t.category) for t in tracks] == [(0, "cup"), (1, "book")]
        assert tracks[1].first_frame == 0
        assert tracks[1].last_frame == 59

    def test_unsorted_batches(self):
        """Key frames must increase"""
        batches = [DetectionBatch(30), DetectionBatch(0)]
        with pytest.raises(DataError):
            assemble_lifecycles(batches, ScriptedTracker({}), fps=30.0)


class TestSegmentVideo:
    """Tests for chunking"""

    def test_forty_second_chunks(self):
        """100 s at 30 fps splits into 1200-frame chunks"""
        assert segment_video(3000, 30.0, 40.0) == [(0, 1200), (1200, 2400), (2400, 3000)]

    def test_short_video(self):
        """A video shorter than a chunk is one chunk"""
        assert segment_video(500, 30.0) == [(0, 500)]

    def test_empty_video(self):
        """No frames, no chunks"""
        assert segment_video(0, 30.0) == []


class TestCapPerCategory:
    """Tests for the per-category instance cap"""

    @staticmethod
    def track(instance_id, category, area):
        return Track(instance_id, category, {0: strip(100, 0, area)})

    def test_keeps_largest(self):
        """The two largest chairs survive"""
        tracks = [
            self.track(0, "chair", 10),
            self.track(1, "chair", 30),
            self.track(2, "chair", 20),
            self.track(3, "table", 5),
        ]
        kept = cap_per_category(tracks, cap=2)
        assert [t.instance_id for t in kept] == [1, 2, 3]

    def test_ties_prefer_lower_id(self):
        """Equal areas keep the lower ids"""
        tracks = [self.track(i, "chair", 30) for i in (4, 2, 9)]
        kept = cap_per_category(tracks, cap=2)
        assert [t.instance_id for t in kept] == [2, 4]


class TestRecords:
    """Tests for mask record conversion and replay"""

    def test_tracks_records_round_trip(self):
        """Tracks survive conversion to records and back"""
        tracks = [Track(0, "cup", {0: BLOCK, 5: BLOCK}), Track(3, "book", {5: BLOCK})]
        records = tracks_to_records("vid", tracks)

        assert [(r.frame_index, r.instance_id) for r in records] == [(0, 0), (5, 0), (5, 3)]
        assert tracks_from_records(records) == tracks

    def test_conflicting_categories(self):
        """One instance id cannot carry two categories"""
        records = [MaskRecord("v", 0, 1, "cup", BLOCK), MaskRecord("v", 1, 1, "mug", BLOCK)]
        with pytest.raises(DataError):
            tracks_from_records(records)

    def test_replay_tracker_follows_best_overlap(self):
        """Replay follows the recorded object overlapping the seed"""
        other = encode(square_mask(16, 16, 0, 10, 4))
        records = [MaskRecord("v", f, 1, "x", BLOCK) for f in range(3)]
        records += [MaskRecord("v", f, 2, "x", other) for f in range(5)]
        tracker = ReplayTracker.from_records(records)

        out = list(tracker.propagate(BLOCK, 0, [1, 2, 3, 4]))

        assert [f for f, m in out if m is not None] == [1, 2]
        assert out[-1] == (3, None)
