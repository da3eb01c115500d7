"""
Subcommand implementations. Each cmd_* takes a PipelineConfig, writes its
outputs under config.output_dir and returns a small summary dict.

Scene-level work runs on a thread pool sized by config.jobs; outputs are
always assembled in scene-id order.
"""
import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from egoqa.config import Config, PipelineConfig, SceneConfig
from egoqa.errors import DataError, MalformedResponse, TooShortTrack, TransportError, UsageError
from egoqa.graph import run_scene_pipeline
from egoqa.nodes.alignment import align_report
from egoqa.nodes.facts import qualitative_policy
from egoqa.tools.abilities import property_ability
from egoqa.tools.balance import (
    FrequencyTable,
    estimate_targets,
    load_taxonomy,
    realized_distribution,
    stratified_sample,
    total_deficit,
)
from egoqa.tools.cue_frames import frame_dims_of, frame_path, render_cue_images, select_cue_frames
from egoqa.tools.fusion import (
    Track,
    assemble_lifecycles,
    batches_from_records,
    cap_per_category,
    segment_video,
    tracks_from_records,
    tracks_to_records,
)
from egoqa.tools.llm_gateway import (
    PromptKind,
    Transport,
    build_prompt,
    chat_many,
    make_transport,
    merge_group_lists,
    parse_comprehension_qa,
    parse_object_list,
    parse_referring_expressions,
    split_frame_groups,
)
from egoqa.tools.metrics import sample_frames
from egoqa.tools.qa_forge import QaItem, ability_counts, counting_downsample
from egoqa.tools.rle import read_mask_jsonl, write_mask_jsonl
from egoqa.tools.scene_io import read_jsonl, write_json, write_jsonl, write_ply, write_trajectory
from egoqa.tools.scoring import (
    LLMJudge,
    aggregate,
    ground_truth_tracks,
    load_predictions,
    score_items,
)
from egoqa.tools.trackers import ReplayTracker

logger = logging.getLogger(__name__)

# Seed-sequence stream reserved for the counting downsample
DOWNSAMPLE_STREAM = 1_000_003


# ============================================================================
# Shared plumbing
# ============================================================================

def scene_dir(config: PipelineConfig, scene_id: str) -> Path:
    path = Path(config.output_dir) / scene_id
    path.mkdir(parents=True, exist_ok=True)
    return path


def require_scene_inputs(scene: SceneConfig, *fields: str) -> None:
    missing = [f for f in fields if getattr(scene, f) is None]
    if missing:
        raise UsageError(f"Scene {scene.scene_id} needs {', '.join(missing)} for this command")


def run_scenes(config: PipelineConfig, work: Callable[[SceneConfig], Any]) -> List[Tuple[str, Any]]:
    """
    Run `work` for every scene on the worker pool.

    Returns:
        (scene_id, result) pairs sorted by scene id

    Raises:
        The first failure in scene-id order, after every scene has finished
    """
    if not config.scenes:
        raise UsageError("Config lists no scenes")
    scenes = sorted(config.scenes, key=lambda s: s.scene_id)
    with ThreadPoolExecutor(max_workers=max(1, config.jobs)) as executor:
        futures = [(scene.scene_id, executor.submit(work, scene)) for scene in scenes]
        outcomes = []
        for scene_id, future in futures:
            try:
                outcomes.append((scene_id, future.result(), None))
            except Exception as e:
                logger.error(f"Scene {scene_id} failed: {e}", exc_info=True)
                outcomes.append((scene_id, None, e))
    for _, _, error in outcomes:
        if error is not None:
            raise error
    return [(scene_id, result) for scene_id, result, _ in outcomes]


def write_manifest(config: PipelineConfig, command: str, payload: Dict[str, Any]) -> Path:
    path = Path(config.output_dir) / f"manifest_{command}.json"
    write_json(path, {"command": command, "seed": config.seed, **payload})
    return path


def pipeline_transport(config: PipelineConfig) -> Transport:
    return make_transport(config.live_llm, config.llm.fixtures, config.llm.record_fixtures)


# ============================================================================
# align
# ============================================================================

def _align_scene(config: PipelineConfig, scene: SceneConfig) -> Dict[str, Any]:
    require_scene_inputs(scene, "cloud", "trajectory")
    state = run_scene_pipeline(scene, config, stop_after="align")
    out = scene_dir(config, scene.scene_id)
    write_ply(out / "aligned.ply", state["cloud"])
    write_trajectory(out / "trajectory.csv", state["trajectory"])
    report = align_report(scene.scene_id, state.get("alignment"), config.seed)
    write_json(out / "align_report.json", report)
    return report


def cmd_align(config: PipelineConfig) -> Dict[str, Any]:
    """Gravity-align every scene: aligned PLY, transformed trajectory CSV, JSON report"""
    results = run_scenes(config, lambda scene: _align_scene(config, scene))
    summary = {scene_id: {"angle_deg": r["angle_deg"], "already_aligned": r["already_aligned"]}
               for scene_id, r in results}
    write_manifest(config, "align", {"scenes": summary})
    return summary


# ============================================================================
# fuse
# ============================================================================

def fuse_tracks(
    scene: SceneConfig,
    detections: Sequence,
    tracker: ReplayTracker,
    config: PipelineConfig,
) -> List[Track]:
    """
    Assemble lifecycles chunk by chunk; chunk-local ids are offset so every
    instance id is unique within the video.
    """
    total = scene.total_frames
    if total is None:
        total = max((r.frame_index for r in detections), default=-1) + 1
    batches = batches_from_records(detections)

    tracks: List[Track] = []
    offset = 0
    for start, end in segment_video(total, scene.fps, config.fusion.chunk_seconds):
        chunk_batches = [b for b in batches if start <= b.key_frame_index < end]
        if not chunk_batches:
            continue
        chunk_tracks = assemble_lifecycles(
            chunk_batches,
            tracker,
            fps=scene.fps,
            threshold=config.fusion.iou_threshold,
            window_seconds=config.fusion.reverse_window_s,
            total_frames=end,
        )
        for track in chunk_tracks:
            tracks.append(dataclasses.replace(track, instance_id=track.instance_id + offset))
        offset += len(chunk_tracks)
    return tracks


def _fuse_scene(config: PipelineConfig, scene: SceneConfig) -> Dict[str, Any]:
    require_scene_inputs(scene, "detections", "tracker_frames")
    print(f"\n🔗 Fusing instances for {scene.scene_id}")
    detections = read_mask_jsonl(scene.detections)
    tracker = ReplayTracker.from_records(read_mask_jsonl(scene.tracker_frames))
    tracks = fuse_tracks(scene, detections, tracker, config)

    out = scene_dir(config, scene.scene_id)
    written = write_mask_jsonl(out / "tracks.jsonl", tracks_to_records(scene.scene_id, tracks))
    print(f"   ✓ {len(tracks)} tracks, {written} mask records")
    return {"tracks": len(tracks), "records": written}


def cmd_fuse(config: PipelineConfig) -> Dict[str, Any]:
    """Detections + recorded tracker output -> fused track JSONL per scene"""
    results = dict(run_scenes(config, lambda scene: _fuse_scene(config, scene)))
    write_manifest(config, "fuse", {"scenes": results})
    return results


# ============================================================================
# facts
# ============================================================================

def _facts_scene(config: PipelineConfig, scene: SceneConfig) -> int:
    state = run_scene_pipeline(scene, config, stop_after="facts")
    policy = qualitative_policy(config)
    records = [f.to_json(scene.scene_id, policy, config.seed) for f in state["facts"]]
    return write_jsonl(scene_dir(config, scene.scene_id) / "facts.jsonl", records)


def cmd_facts(config: PipelineConfig) -> Dict[str, Any]:
    """Every spatial fact per scene, as facts.jsonl"""
    results = dict(run_scenes(config, lambda scene: _facts_scene(config, scene)))
    write_manifest(config, "facts", {"facts": results})
    return results


# ============================================================================
# forge
# ============================================================================

def attach_eval_frames(items: List[QaItem], tracks: Sequence[Track], scene: SceneConfig) -> None:
    """Record the evaluation frame selection on segmentation items"""
    if scene.total_frames is None:
        return
    by_id = {t.instance_id: t for t in tracks}
    for item in items:
        if item.answer_kind != "segmentation" or not item.operands:
            continue
        track = by_id.get(item.operands[0])
        if track is None:
            continue
        targets = [f for f, m in track.frames.items() if not m.is_empty and f < scene.total_frames]
        selection = sample_frames(
            scene.total_frames, scene.fps, targets,
            fps=Config.EVAL_SAMPLE_FPS, max_frames=Config.EVAL_MAX_FRAMES,
        )
        item.provenance["eval_frames"] = list(selection.frames)
        if selection.targets_truncated:
            item.provenance["eval_frames_truncated"] = True


def _forge_scene(config: PipelineConfig, scene: SceneConfig, transport: Optional[Transport]) -> List[QaItem]:
    require_scene_inputs(scene, "cloud", "trajectory")
    state = run_scene_pipeline(scene, config, stop_after="refine", transport=transport)
    items = state.get("items", [])
    attach_eval_frames(items, state.get("tracks", []), scene)
    return items


def print_ability_table(items: Sequence[QaItem]) -> None:
    counts = ability_counts(items)
    width = max([len(a) for a in counts] + [len("ability")])
    print("\n" + "="*80)
    print("QA ITEMS PER ABILITY")
    print("="*80)
    print(f"{'ability':<{width}}  count")
    for ability, count in counts.items():
        print(f"{ability:<{width}}  {count:>5}")
    print(f"{'total':<{width}}  {len(items):>5}")


def cmd_forge(config: PipelineConfig) -> Dict[str, Any]:
    """
    facts -> QA (-> refine) for every scene, then one counting downsample over
    the whole dataset; written to qa.jsonl in scene-id order

    Raises:
        DataError: no QA item survived
    """
    transport = pipeline_transport(config) if config.forge.refine_questions else None
    results = run_scenes(config, lambda scene: _forge_scene(config, scene, transport))
    forged = [item for _, scene_items in results for item in scene_items]
    rng = np.random.default_rng([config.seed, DOWNSAMPLE_STREAM])
    items = counting_downsample(forged, rng)
    print(f"\n✓ Counting downsample: {len(forged)} -> {len(items)} items")
    if not items:
        raise DataError("No QA items produced; every candidate was filtered", stage="forge")

    path = Path(config.output_dir) / "qa.jsonl"
    write_jsonl(path, [item.to_json() for item in items])
    print_ability_table(items)
    counts = ability_counts(items)
    write_manifest(config, "forge", {"items": len(items), "forged": len(forged), "per_ability": counts,
                                     "scenes": {sid: sum(1 for i in items if i.video_id == sid) for sid, _ in results}})
    return {"items": len(items), "per_ability": counts, "path": str(path)}


# ============================================================================
# balance
# ============================================================================

def cmd_balance(config: PipelineConfig) -> Dict[str, Any]:
    """Frequency-proportional downsampling of a QA pool to the target size"""
    cfg = config.balance
    if cfg.pool is None or cfg.frequency_table is None:
        raise UsageError("[balance] needs pool and frequency_table", stage="balance")

    pool = [QaItem.from_json(row) for row in read_jsonl(cfg.pool)]
    taxonomy = load_taxonomy(cfg.taxonomy)
    freq = FrequencyTable.from_csv(cfg.frequency_table, normalize=cfg.normalize_frequencies)
    targets = estimate_targets(freq, cfg.target_size)

    rng = np.random.default_rng([config.seed])
    sampled, report = stratified_sample(pool, targets, rng, taxonomy)

    out = Path(config.output_dir)
    write_jsonl(out / "balanced.jsonl", [item.to_json() for item in sampled])
    deficit = total_deficit(report)
    write_json(out / "deficit_report.json", {
        "seed": config.seed,
        "target_size": cfg.target_size,
        "sampled": len(sampled),
        "total_deficit": deficit,
        "classes": report,
        "realized": realized_distribution(sampled, taxonomy),
    })

    print(f"\n⚖️  Balanced {len(pool)} -> {len(sampled)} items (deficit {deficit})")
    summary = {"pool": len(pool), "sampled": len(sampled), "deficit": deficit}
    write_manifest(config, "balance", summary)
    return summary


# ============================================================================
# score
# ============================================================================

def cmd_score(config: PipelineConfig) -> Dict[str, Any]:
    """
    Score predictions against QA items and write report.json

    Raises:
        TransportError: one or more items could not be scored
    """
    cfg = config.score
    if cfg.items is None or cfg.predictions is None:
        raise UsageError("[score] needs items and predictions", stage="score")

    items = [QaItem.from_json(row) for row in read_jsonl(cfg.items)]
    predictions = load_predictions(cfg.predictions)
    mask_files = [s.masks for s in sorted(config.scenes, key=lambda s: s.scene_id) if s.masks]
    gt_tracks = ground_truth_tracks(mask_files)

    needs_judge = any(i.answer_kind in ("closed-text", "open-text") for i in items)
    judge = LLMJudge(pipeline_transport(config)) if needs_judge else None

    scores = score_items(
        items, predictions, judge, gt_tracks,
        max_in_flight=cfg.max_in_flight, tolerance_fraction=cfg.boundary_tolerance,
    )
    report = aggregate(scores)
    out = Path(config.output_dir)
    write_json(out / "report.json", {"seed": config.seed, **report.to_json()})

    print("\n" + "="*80)
    print("SCORE REPORT")
    print("="*80)
    for category, mean in report.per_category.items():
        print(f"  {category}: {mean:.4f}")
    if report.overall is not None:
        print(f"  overall: {report.overall:.4f}")

    summary = {"overall": report.overall, "items": len(scores), "unscored": report.unscored}
    write_manifest(config, "score", summary)
    if report.unscored:
        raise TransportError(f"{report.unscored} item(s) could not be scored", stage="score")
    return summary


# ============================================================================
# describe (object QA branch)
# ============================================================================

def scene_object_list(scene: SceneConfig, transport: Transport, max_in_flight: int) -> List[str]:
    """Two object_list requests over the odd and even frame groups, merged"""
    if scene.frames_dir is None or not scene.total_frames:
        return []
    odd, even = split_frame_groups(scene.total_frames)
    requests = [
        build_prompt(PromptKind.OBJECT_LIST,
                     frames=[frame_path(scene.frames_dir, scene.frame_pattern, f) for f in group])
        for group in (odd, even)
    ]
    responses = chat_many(requests, transport, max_in_flight)
    lists = []
    for response in responses:
        if isinstance(response, TransportError):
            raise response.with_stage("describe")
        lists.append(parse_object_list(response))
    return merge_group_lists(lists[0], lists[1])


def _object_items(scene_id: str, track: Track, pairs: List[Tuple[str, str]], seed: int) -> List[QaItem]:
    return [
        QaItem(
            id=f"{scene_id}:object_qa:{track.instance_id:04d}:{n:02d}",
            video_id=scene_id,
            question=question,
            answer=answer,
            answer_kind="open-text",
            ability=property_ability(question),
            variant="qualitative",
            operands=[track.instance_id],
            masks_ref=[f"{scene_id}/{track.instance_id}"],
            category=track.category,
            provenance={"source": "object_comprehension", "seed": seed},
        )
        for n, (question, answer) in enumerate(pairs, 1)
    ]


def _describe_scene(config: PipelineConfig, scene: SceneConfig, transport: Transport) -> Dict[str, Any]:
    require_scene_inputs(scene, "masks", "frames_dir")
    print("\n" + "="*80)
    print(f"DESCRIBE OBJECTS: {scene.scene_id}")
    print("="*80)

    max_in_flight = config.score.max_in_flight
    out = scene_dir(config, scene.scene_id)
    objects = scene_object_list(scene, transport, max_in_flight)
    if objects:
        write_json(out / "objects.json", {"scene_id": scene.scene_id, "objects": objects})
        print(f"✓ Object list: {len(objects)} names")

    tracks = cap_per_category(tracks_from_records(read_mask_jsonl(scene.masks)),
                              config.forge.max_per_category)
    cued: List[Tuple[Track, List[Path]]] = []
    for track in tracks:
        try:
            cues = select_cue_frames(track, frame_dims_of(track))
        except TooShortTrack as e:
            logger.warning(f"{scene.scene_id}: {e}")
            continue
        images = render_cue_images(cues, track, scene.frames_dir, out / "cues", scene.frame_pattern)
        cued.append((track, images))
    print(f"✓ Cue images for {len(cued)} of {len(tracks)} instances")

    image_requests = []
    for _, images in cued:
        image_requests.append(build_prompt(PromptKind.CAPTION, images=images))
        image_requests.append(build_prompt(PromptKind.COMPREHENSION_QA, images=images))
    image_responses = chat_many(image_requests, transport, max_in_flight)

    described: List[Tuple[Track, str, List[Tuple[str, str]]]] = []
    for n, (track, _) in enumerate(cued):
        caption, qa_raw = image_responses[2 * n], image_responses[2 * n + 1]
        failed = [r for r in (caption, qa_raw) if isinstance(r, TransportError)]
        if failed:
            raise failed[0].with_stage("describe")
        described.append((track, caption.strip(), parse_comprehension_qa(qa_raw)))

    ref_requests = [
        build_prompt(PromptKind.REFERRING_EXPR,
                     qa_pairs=[("Describe the <object>.", caption)] + pairs)
        for _, caption, pairs in described
    ]
    ref_responses = chat_many(ref_requests, transport, max_in_flight)

    refs: Dict[str, Dict[str, str]] = {}
    items: List[QaItem] = []
    for (track, caption, pairs), response in zip(described, ref_responses):
        if isinstance(response, TransportError):
            raise response.with_stage("describe")
        try:
            simple, situational = parse_referring_expressions(response)
        except MalformedResponse as e:
            logger.warning(f"{scene.scene_id}: instance {track.instance_id}: {e}")
        else:
            refs[str(track.instance_id)] = {"simple": simple, "situational": situational, "caption": caption}
        items.extend(_object_items(scene.scene_id, track, pairs, config.seed))

    write_json(out / "refs.json", refs)
    write_jsonl(out / "object_qa.jsonl", [item.to_json() for item in items])
    print(f"✓ Referring expressions: {len(refs)}, object QA items: {len(items)}")
    return {"objects": len(objects), "refs": len(refs), "object_qa": len(items)}


def cmd_describe(config: PipelineConfig) -> Dict[str, Any]:
    """Object QA branch: cue frames -> captions, comprehension QA, referring expressions"""
    transport = pipeline_transport(config)
    results = dict(run_scenes(config, lambda scene: _describe_scene(config, scene, transport)))
    write_manifest(config, "describe", {"scenes": results})
    return results


COMMANDS: Dict[str, Callable[[PipelineConfig], Dict[str, Any]]] = {
    "align": cmd_align,
    "fuse": cmd_fuse,
    "facts": cmd_facts,
    "forge": cmd_forge,
    "balance": cmd_balance,
    "score": cmd_score,
    "describe": cmd_describe,
}
