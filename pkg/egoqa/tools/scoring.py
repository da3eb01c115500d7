"""
Benchmark scoring: dispatch each QA item to the metric for its answer kind,
grade text answers with an LLM judge, and reduce item scores to the
per-ability / per-column / per-category report.
"""
import logging
import math
import re
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from egoqa.config import Config
from egoqa.errors import DataError, JudgeUnavailable, KindMismatch, NoForegroundFrames, TransportError
from egoqa.tools.abilities import ABILITIES, CATEGORIES, COLUMNS
from egoqa.tools.llm_gateway import PromptKind, Transport, build_prompt, chat
from egoqa.tools.metrics import boundary_f, global_j, mra, roa
from egoqa.tools.qa_forge import QaItem
from egoqa.tools.rle import Rle, read_mask_jsonl
from egoqa.tools.scene_io import read_jsonl

logger = logging.getLogger(__name__)

BINARY_GRID = (0.0, 1.0)
OPEN_GRID = tuple(round(0.2 * i, 1) for i in range(6))

MaskTrack = Dict[int, Rle]

_NUMBER_RE = re.compile(r"[-+]?(?:\d+\.\d*|\.\d+|\d+)")


def first_number(text: Optional[str]) -> Optional[float]:
    if not text:
        return None
    m = _NUMBER_RE.search(text)
    return float(m.group(0)) if m else None


def ground_truth_number(item: QaItem) -> float:
    """
    Numeric ground truth of a scale or angle item: answer_value when present,
    else the first number in the answer text

    Raises:
        DataError: neither carries a number
    """
    if item.answer_value is not None:
        try:
            return float(item.answer_value)
        except (TypeError, ValueError):
            pass
    value = first_number(item.answer)
    if value is None:
        raise DataError(f"{item.id}: no numeric ground truth in answer {item.answer!r}")
    return value


# ============================================================================
# Predictions
# ============================================================================

@dataclass
class Prediction:
    qa_id: str
    kind: str
    value: Optional[float] = None
    text: Optional[str] = None
    masks: Optional[MaskTrack] = None

    def numeric(self) -> Optional[float]:
        if self.value is not None:
            return float(self.value)
        return first_number(self.text)


def load_mask_ref(ref: str, base_dir: Path) -> MaskTrack:
    """'masks.jsonl' or 'masks.jsonl#<instance_id>' relative to base_dir"""
    path_part, _, instance = ref.partition("#")
    path = Path(path_part)
    if not path.is_absolute():
        path = base_dir / path
    if not path.exists():
        raise DataError(f"Prediction mask file not found: {path}")
    track: MaskTrack = {}
    for record in read_mask_jsonl(path):
        if instance and record.instance_id != int(instance):
            continue
        track[record.frame_index] = record.rle
    return track


def load_predictions(path: Path) -> Dict[str, Prediction]:
    """Predictions JSONL: qa_id, kind, value | text | masks_ref"""
    path = Path(path)
    preds: Dict[str, Prediction] = {}
    for row in read_jsonl(path):
        try:
            qa_id, kind = row["qa_id"], row["kind"]
        except KeyError as e:
            raise DataError(f"{path}: prediction missing field {e}") from e
        masks = load_mask_ref(row["masks_ref"], path.parent) if row.get("masks_ref") else None
        preds[qa_id] = Prediction(qa_id, kind, value=row.get("value"), text=row.get("text"), masks=masks)
    return preds


def ground_truth_tracks(mask_files: Iterable[Path]) -> Dict[str, MaskTrack]:
    """'<video_id>/<instance_id>' -> frame -> Rle, from mask JSONL files"""
    store: Dict[str, MaskTrack] = defaultdict(dict)
    for path in mask_files:
        for record in read_mask_jsonl(path):
            store[f"{record.video_id}/{record.instance_id}"][record.frame_index] = record.rle
    return dict(store)


# ============================================================================
# Judge
# ============================================================================

def snap_to_grid(value: float, grid: Sequence[float]) -> float:
    return min(grid, key=lambda g: (abs(g - value), g))


class LLMJudge:
    """Grades text answers through the judge prompts; off-grid replies get one re-ask"""

    def __init__(self, transport: Transport, sleep: Callable[[float], None] = time.sleep):
        self.transport = transport
        self.sleep = sleep

    def binary(self, question: str, ground_truth: str, prediction: str) -> float:
        return self._grade(PromptKind.JUDGE_BINARY, BINARY_GRID, question, ground_truth, prediction)

    def open(self, question: str, ground_truth: str, prediction: str) -> float:
        return self._grade(PromptKind.JUDGE_OPEN, OPEN_GRID, question, ground_truth, prediction)

    def _grade(self, kind: PromptKind, grid: Sequence[float], question: str, ground_truth: str, prediction: str) -> float:
        previous = None
        last_value = None
        for _ in range(2):
            request = build_prompt(
                kind, question=question, ground_truth=ground_truth, prediction=prediction, previous=previous,
            )
            try:
                text = chat(request, self.transport, sleep=self.sleep)
            except TransportError as e:
                raise JudgeUnavailable(f"Judge call failed: {e}") from e

            value = first_number(text)
            if value is not None:
                last_value = value
                if any(abs(value - g) < 1e-9 for g in grid):
                    return snap_to_grid(value, grid)
            previous = text.strip()[:200]
            logger.warning(f"Judge reply off-grid for {kind.value}: {previous!r}")

        if last_value is None:
            raise JudgeUnavailable(f"Judge reply unparseable for {kind.value}")
        return snap_to_grid(min(max(last_value, 0.0), 1.0), grid)


# ============================================================================
# Per-item scoring
# ============================================================================

def segmentation_frames(
    gt: MaskTrack,
    pred: Optional[MaskTrack],
    frames: Optional[Sequence[int]] = None,
) -> List[Tuple[Optional[Rle], Optional[Rle]]]:
    pred = pred or {}
    indices = sorted(frames) if frames is not None else sorted(set(gt) | set(pred))
    return [(pred.get(f), gt.get(f)) for f in indices]


def score_item(
    item: QaItem,
    pred: Optional[Prediction],
    judge: Optional[LLMJudge] = None,
    gt_masks: Optional[MaskTrack] = None,
    tolerance_fraction: float = Config.BOUNDARY_TOLERANCE_FRACTION,
) -> float:
    """
    numeric-scale -> mra, numeric-angle -> roa, segmentation -> (J + F) / 2,
    closed-text -> judge 0/1, open-text -> judge on the 0.2 grid. A missing
    prediction scores 0.

    Raises:
        KindMismatch: prediction kind differs from the item's answer kind
        JudgeUnavailable: text item without a working judge
    """
    if pred is None:
        return 0.0
    if pred.kind != item.answer_kind:
        raise KindMismatch(f"{item.id}: prediction kind {pred.kind} != {item.answer_kind}")

    kind = item.answer_kind
    if kind == "numeric-scale":
        value = pred.numeric()
        return mra(value, ground_truth_number(item)) if value is not None else 0.0

    if kind == "numeric-angle":
        value = pred.numeric()
        return roa(value, ground_truth_number(item)) if value is not None else 0.0

    if kind == "segmentation":
        gt = gt_masks or {}
        frames = segmentation_frames(gt, pred.masks, item.provenance.get("eval_frames"))
        if not frames:
            return 1.0
        j = global_j(frames)
        try:
            return (j + boundary_f(frames, tolerance_fraction)) / 2.0
        except NoForegroundFrames:
            return j

    if judge is None:
        raise JudgeUnavailable(f"{item.id}: no judge configured for {kind} items")
    text = pred.text if pred.text is not None else ("" if pred.value is None else str(pred.value))
    if kind == "closed-text":
        return judge.binary(item.question, item.answer, text)
    return judge.open(item.question, item.answer, text)


@dataclass
class ItemScore:
    qa_id: str
    ability: str
    answer_kind: str
    score: Optional[float]
    flags: List[str] = field(default_factory=list)
    error: Optional[str] = None

    @property
    def scored(self) -> bool:
        return self.score is not None

    def to_json(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "ability": self.ability,
            "answer_kind": self.answer_kind,
            "score": self.score,
            "flags": list(self.flags),
            "error": self.error,
        }


def _score_one(
    item: QaItem,
    predictions: Mapping[str, Prediction],
    judge: Optional[LLMJudge],
    gt_tracks: Mapping[str, MaskTrack],
    tolerance_fraction: float,
) -> ItemScore:
    pred = predictions.get(item.id)
    flags = []
    if pred is None:
        flags.append("missing_prediction")

    gt = None
    if item.answer_kind == "segmentation":
        gt = gt_tracks.get(item.masks_ref[0]) if item.masks_ref else None
        if gt is None:
            raise DataError(f"{item.id}: ground-truth masks {item.masks_ref} not found")
        if all(m.is_empty for m in gt.values()):
            flags.append("empty_ground_truth")

    try:
        score = score_item(item, pred, judge, gt, tolerance_fraction)
    except JudgeUnavailable as e:
        logger.error(f"Item {item.id} unscored: {e}")
        return ItemScore(item.id, item.ability, item.answer_kind, None, flags, str(e))
    return ItemScore(item.id, item.ability, item.answer_kind, float(score), flags)


def score_items(
    items: Sequence[QaItem],
    predictions: Mapping[str, Prediction],
    judge: Optional[LLMJudge] = None,
    gt_tracks: Optional[Mapping[str, MaskTrack]] = None,
    max_in_flight: int = Config.LLM_MAX_IN_FLIGHT,
    tolerance_fraction: float = Config.BOUNDARY_TOLERANCE_FRACTION,
) -> List[ItemScore]:
    """Score items concurrently (judge calls bounded by max_in_flight); results in item order"""
    gt_tracks = gt_tracks or {}
    results: List[Optional[ItemScore]] = [None] * len(items)
    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as executor:
        futures = {
            executor.submit(_score_one, item, predictions, judge, gt_tracks, tolerance_fraction): idx
            for idx, item in enumerate(items)
        }
        for future in as_completed(futures):
            results[futures[future]] = future.result()
    return results


# ============================================================================
# Aggregation
# ============================================================================

@dataclass
class ScoreReport:
    items: List[ItemScore]
    per_ability: Dict[str, Dict[str, float]]
    per_column: Dict[str, float]
    per_category: Dict[str, float]
    overall: Optional[float]
    overall_item_weighted: Optional[float]
    empty_abilities: List[str]
    unscored: int

    def to_json(self) -> dict:
        return {
            "overall": self.overall,
            "overall_item_weighted": self.overall_item_weighted,
            "per_category": self.per_category,
            "per_column": self.per_column,
            "per_ability": self.per_ability,
            "empty_abilities": self.empty_abilities,
            "unscored": self.unscored,
            "items": [s.to_json() for s in self.items],
        }


def _mean(values: Sequence[float]) -> Optional[float]:
    return math.fsum(values) / len(values) if values else None


def aggregate(scores: Sequence[ItemScore]) -> ScoreReport:
    """
    Ability means over scored items; column and category means over their
    non-empty abilities; overall = mean of category means. Unscored items are
    excluded and counted.
    """
    by_ability: Dict[str, List[float]] = defaultdict(list)
    for s in scores:
        if s.scored:
            by_ability[s.ability].append(s.score)

    per_ability = {
        name: {"mean": _mean(values), "count": len(values)}
        for name, values in sorted(by_ability.items())
    }
    empty = [name for name in ABILITIES if name not in by_ability]

    per_column: Dict[str, float] = {}
    for column in COLUMNS:
        means = [per_ability[a]["mean"] for a in per_ability if a in ABILITIES and ABILITIES[a].column == column]
        if means:
            per_column[column] = _mean(means)

    per_category: Dict[str, float] = {}
    for category in CATEGORIES:
        means = [per_ability[a]["mean"] for a in per_ability if a in ABILITIES and ABILITIES[a].category == category]
        if means:
            per_category[category] = _mean(means)

    unknown = sorted(a for a in by_ability if a not in ABILITIES)
    if unknown:
        logger.warning(f"Scores for unregistered abilities left out of category means: {unknown}")

    scored = [s.score for s in scores if s.scored]
    return ScoreReport(
        items=list(scores),
        per_ability=per_ability,
        per_column=per_column,
        per_category=per_category,
        overall=_mean(list(per_category.values())),
        overall_item_weighted=_mean(scored),
        empty_abilities=empty,
        unscored=sum(1 for s in scores if not s.scored),
    )
