"""
QA forge: turn spatial facts, tracks and referring expressions into QA items.

Per (ability, variant) group the forge walks the group's templates round-robin,
each template drawing candidates from its own seeded shuffle, and emits up to the
group quota. Candidates whose facts are undefined (ties, vertical bearings, sparse
instances) or whose comparative margin is too small are dropped.
"""
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from itertools import combinations, permutations
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from egoqa.config import Config
from egoqa.errors import (
    Ambiguous,
    DataError,
    DegenerateBearing,
    MissingReferringExpression,
    MissingSlot,
    NotAligned,
    TooFewPoints,
)
from egoqa.tools.fusion import Track
from egoqa.tools.scene_io import read_json
from egoqa.tools.spatial_facts import (
    FactBook,
    QualitativePolicy,
    SceneGeometry,
    SpatialFact,
    rank_key_value,
)
from egoqa.tools.templates import Template, TemplateRegistry, load_templates

logger = logging.getLogger(__name__)

PLACEHOLDERS = ("[A]", "[B]", "[C]", "<Object X>", "<object>")

RANK_GENERATORS = {
    "ego_rank_min": ("ego_distance", "min"),
    "height_rank_max": ("height_extent", "max"),
    "volume_rank_max": ("volume", "max"),
    "center_rank_min": ("center_distance", "min"),
}
SCALE_GENERATORS = {
    "trajectory_length", "ego_distance", "center_distance", "height_extent",
    "elevation_diff_abs", "longest_dimension",
}
LABEL_GENERATORS = {"ego_relative_position", "post_turn_relation", "vertical_relation"}

_SKIPPABLE = (Ambiguous, DegenerateBearing, TooFewPoints, NotAligned)


class _Filtered(Exception):
    """Candidate rejected by a forge policy"""


@dataclass(frozen=True)
class RefEntry:
    simple: str
    situational: Optional[str] = None


def load_refs(path: Path) -> Dict[int, RefEntry]:
    """
    Referring-expression map: {"<instance_id>": "text"} or
    {"<instance_id>": {"simple": "...", "situational": "..."}}
    """
    raw = read_json(path)
    refs = {}
    for key, value in raw.items():
        if isinstance(value, str):
            refs[int(key)] = RefEntry(value)
        elif isinstance(value, dict) and "simple" in value:
            refs[int(key)] = RefEntry(value["simple"], value.get("situational"))
        else:
            raise DataError(f"{path}: bad referring expression entry for {key}")
    return refs


@dataclass
class QaItem:
    id: str
    video_id: str
    question: str
    answer: str
    answer_kind: str
    ability: str
    variant: str
    operands: List[int]
    answer_value: Any = None
    unit: Optional[str] = None
    masks_ref: List[str] = field(default_factory=list)
    category: Optional[str] = None
    provenance: Dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "video_id": self.video_id,
            "question": self.question,
            "answer": self.answer,
            "answer_value": self.answer_value,
            "unit": self.unit,
            "answer_kind": self.answer_kind,
            "ability": self.ability,
            "variant": self.variant,
            "operands": list(self.operands),
            "masks_ref": list(self.masks_ref),
            "category": self.category,
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_json(cls, data: dict) -> "QaItem":
        try:
            return cls(
                id=data["id"],
                video_id=data["video_id"],
                question=data["question"],
                answer=data["answer"],
                answer_kind=data["answer_kind"],
                ability=data["ability"],
                variant=data.get("variant", "quantitative"),
                operands=list(data.get("operands", [])),
                answer_value=data.get("answer_value"),
                unit=data.get("unit"),
                masks_ref=list(data.get("masks_ref") or []),
                category=data.get("category"),
                provenance=dict(data.get("provenance", {})),
            )
        except KeyError as e:
            raise DataError(f"QA record missing field {e}") from e


@dataclass(frozen=True)
class ForgePolicy:
    quota_per_ability: int = Config.QUOTA_PER_ABILITY
    comparative_margin: float = Config.COMPARATIVE_MARGIN
    qualitative: QualitativePolicy = field(default_factory=QualitativePolicy)


# ============================================================================
# Answer canonicalization
# ============================================================================

def canonical_meters(value: float) -> str:
    return f"{value:.2f} m"


def canonical_degrees(value: float) -> str:
    return f"{int(math.floor(value + 0.5)) % 360} degrees"


def answer_from_facts(template: Template, facts: Sequence[SpatialFact], refs: Dict[int, RefEntry]) -> Tuple[Any, Optional[str], str]:
    """(answer_value, unit, canonical answer) for a spatial template"""
    if not facts:
        raise MissingSlot(f"Template {template.id}: no fact supplied")
    fact = facts[0]
    gen = template.fact

    if gen in RANK_GENERATORS:
        winner = int(fact.value)
        if winner not in refs:
            raise MissingReferringExpression(f"No referring expression for instance {winner}")
        return winner, None, refs[winner].simple
    if gen in SCALE_GENERATORS:
        if gen == "elevation_diff_abs":
            value = abs(float(fact.value))
        elif gen == "longest_dimension":
            value = max(fact.value)
        else:
            value = float(fact.value)
        return value, "m", canonical_meters(value)
    if gen == "ego_direction_cw":
        value = float(fact.value)
        return value, "deg", canonical_degrees(value)
    if gen == "post_turn_angle":
        value = (float(fact.value) - template.turn) % 360.0
        return value, "deg", canonical_degrees(value)
    if gen == "vertical_relation":
        label = "yes" if fact.value == "above" else "no"
        return label, None, label
    if gen in LABEL_GENERATORS:
        return str(fact.value), None, str(fact.value)
    raise MissingSlot(f"Template {template.id}: generator {gen} has no fact-based answer")


def instantiate(
    template: Template,
    phrasing_index: int,
    facts: Sequence[SpatialFact],
    refs: Dict[int, RefEntry],
    seed: int = 0,
    operands: Optional[Sequence[int]] = None,
    video_id: str = "",
    item_id: Optional[str] = None,
    category: Optional[str] = None,
) -> QaItem:
    """
    Fill a template's slots with referring expressions and canonicalize the answer.

    Raises:
        MissingSlot: facts do not supply every slot
        MissingReferringExpression: an operand has no referring expression
    """
    if operands is None:
        fact = facts[0] if facts else None
        reference = fact.detail.get("reference") if fact is not None else None
        operands = (() if fact is None else
                    ((int(reference),) if reference is not None else ()) + tuple(fact.operands))
    operands = [int(o) for o in operands]
    if len(operands) != template.slots:
        raise MissingSlot(f"Template {template.id} needs {template.slots} operands, got {len(operands)}")

    fills = []
    for op in operands:
        if op not in refs:
            raise MissingReferringExpression(f"No referring expression for instance {op}")
        fills.append(refs[op].simple)

    value, unit, answer = answer_from_facts(template, facts, refs)
    question = template.render(phrasing_index, fills)
    return QaItem(
        id=item_id or f"{video_id}:{template.id}",
        video_id=video_id,
        question=question,
        answer=answer,
        answer_kind=template.answer_kind,
        ability=template.ability,
        variant=template.variant,
        operands=operands,
        answer_value=value,
        unit=unit,
        masks_ref=[f"{video_id}/{op}" for op in operands],
        category=category,
        provenance={
            "template_id": template.id,
            "phrasing_index": phrasing_index,
            "fact_ids": [f.fact_id for f in facts],
            "seed": seed,
            "slot_fills": fills,
            "template_question": question,
        },
    )


# ============================================================================
# Candidate generation
# ============================================================================

def resolve_refs(scene: SceneGeometry, refs: Dict[int, RefEntry]) -> Dict[int, RefEntry]:
    """Given refs, plus 'the <category>' for instances whose category is unique"""
    counts = Counter(inst.category for inst in scene.instances.values() if inst.category)
    resolved = {}
    for inst_id in sorted(scene.instances):
        if inst_id in refs:
            resolved[inst_id] = refs[inst_id]
            continue
        category = scene.instances[inst_id].category
        if category and counts[category] == 1:
            resolved[inst_id] = RefEntry(f"the {category}")
        else:
            logger.warning(f"Instance {inst_id} has no unambiguous referring expression; skipped")
    return resolved


def _candidates(template: Template, ids: List[int], scene: SceneGeometry) -> List[Tuple[int, ...]]:
    if template.fact == "trajectory_length":
        return [()] if len(scene.trajectory) >= 2 else []
    if template.slots == 1:
        return [(i,) for i in ids]
    if template.slots == 2:
        if template.fact == "vertical_relation":
            return list(permutations(ids, 2))
        return list(combinations(ids, 2))
    if template.slots == 3:
        if template.fact == "center_rank_min":
            return [(a, b, c) for a in ids for b, c in combinations([i for i in ids if i != a], 2)]
        return list(combinations(ids, 3))
    return []


def _relative_margin(values: Sequence[float], mode: str) -> float:
    ordered = sorted(values, reverse=(mode == "max"))
    winner, runner_up = ordered[0], ordered[1]
    scale = max(abs(winner), abs(runner_up))
    return abs(winner - runner_up) / scale if scale > 0 else 0.0


def _facts_for(book: FactBook, template: Template, operands: Tuple[int, ...], policy: ForgePolicy) -> List[SpatialFact]:
    gen = template.fact
    if gen == "trajectory_length":
        return [book.trajectory_length()]
    if gen == "ego_distance":
        return [book.ego_distance(operands[0])]
    if gen in ("ego_direction_cw", "post_turn_angle"):
        return [book.ego_direction_cw(operands[0])]
    if gen == "ego_relative_position":
        return [book.ego_relative_position(operands[0])]
    if gen == "post_turn_relation":
        return [book.post_turn_relation(operands[0], template.turn)]
    if gen == "center_distance":
        return [book.center_distance(*operands)]
    if gen == "elevation_diff_abs":
        return [book.elevation_diff(*operands)]
    if gen == "height_extent":
        return [book.height_extent(operands[0])]
    if gen == "longest_dimension":
        return [book.size_dims(operands[0])]
    if gen == "vertical_relation":
        return [book.vertical_relation(*operands)]
    if gen in RANK_GENERATORS:
        key, mode = RANK_GENERATORS[gen]
        if key == "center_distance":
            reference, ranked = operands[0], operands[1:]
        else:
            reference, ranked = None, operands
        ref_inst = book.inst(reference) if reference is not None else None
        values = [rank_key_value(book.inst(i), key, book.scene.anchor, ref_inst) for i in ranked]
        margin = _relative_margin(values, mode)
        if margin < policy.comparative_margin:
            raise _Filtered(f"margin {margin:.3f} < {policy.comparative_margin}")
        return [book.rank_extreme(list(ranked), key, mode, reference)]
    raise DataError(f"Template {template.id}: unknown generator {gen}")


def _spatial_items(
    book: FactBook,
    registry: TemplateRegistry,
    refs: Dict[int, RefEntry],
    policy: ForgePolicy,
    seed: int,
) -> List[QaItem]:
    scene = book.scene
    ids = sorted(refs)
    template_index = {t.id: i for i, t in enumerate(registry)}
    serial: Dict[str, int] = defaultdict(int)
    items: List[QaItem] = []
    filtered: Counter = Counter()

    for (ability, variant), group in registry.groups().items():
        group = [t for t in group if t.slot_source == "ref" and t.fact not in ("instance_count", "segmentation")]
        if not group:
            continue
        queues = []
        for template in group:
            rng = np.random.default_rng([seed, template_index[template.id]])
            cands = _candidates(template, ids, scene)
            order = rng.permutation(len(cands)) if cands else []
            queues.append([template, [cands[i] for i in order], rng])

        emitted = 0
        while emitted < policy.quota_per_ability and any(q[1] for q in queues):
            for queue in queues:
                if emitted >= policy.quota_per_ability:
                    break
                template, pending, rng = queue
                while pending:
                    operands = pending.pop(0)
                    try:
                        facts = _facts_for(book, template, operands, policy)
                        value, _, _ = answer_from_facts(template, facts, refs)
                        if template.answer_kind == "numeric-scale" and not value > 0:
                            raise _Filtered("non-positive scale answer")
                    except _SKIPPABLE + (_Filtered,) as e:
                        filtered[template.id] += 1
                        logger.debug(f"{template.id}{operands}: dropped ({e})")
                        continue
                    phrasing = int(rng.integers(len(template.phrasings)))
                    serial[template.id] += 1
                    category = scene.instances[operands[0]].category if operands else None
                    items.append(instantiate(
                        template, phrasing, facts, refs, seed,
                        operands=operands,
                        video_id=scene.scene_id,
                        item_id=f"{scene.scene_id}:{template.id}:{serial[template.id]:04d}",
                        category=category,
                    ))
                    emitted += 1
                    break

    for template_id, count in sorted(filtered.items()):
        logger.info(f"{scene.scene_id}: {template_id} dropped {count} ambiguous or undefined candidates")
    return items


def _track_items(
    scene_id: str,
    registry: TemplateRegistry,
    tracks: List[Track],
    refs: Dict[int, RefEntry],
    policy: ForgePolicy,
    seed: int,
) -> List[QaItem]:
    """Counting and referring-segmentation items, built from fused tracks"""
    template_index = {t.id: i for i, t in enumerate(registry)}
    by_category: Dict[str, List[int]] = defaultdict(list)
    for track in tracks:
        by_category[track.category].append(track.instance_id)
    track_ids = {t.instance_id: t for t in tracks}
    items: List[QaItem] = []

    for (ability, variant), group in registry.groups().items():
        for template in group:
            if template.fact not in ("instance_count", "segmentation"):
                continue
            rng = np.random.default_rng([seed, template_index[template.id]])
            if template.fact == "instance_count":
                cands = sorted(by_category)
            else:
                attr = "situational" if template.slot_source == "situational_ref" else "simple"
                cands = [i for i in sorted(refs) if i in track_ids and getattr(refs[i], attr)]
            order = rng.permutation(len(cands)) if cands else []
            for n, idx in enumerate(order[:policy.quota_per_ability], 1):
                cand = cands[idx]
                phrasing = int(rng.integers(len(template.phrasings)))
                if template.fact == "instance_count":
                    operands = sorted(by_category[cand])
                    count = len(operands)
                    fills = [cand]
                    question = template.render(phrasing, fills)
                    answer, value, unit, category = str(count), count, "count", cand
                    masks = [f"{scene_id}/{op}" for op in operands]
                else:
                    entry = refs[cand]
                    text = entry.situational if template.slot_source == "situational_ref" else entry.simple
                    operands = [cand]
                    fills = [text]
                    question = template.render(phrasing, fills)
                    masks = [f"{scene_id}/{cand}"]
                    answer, value, unit, category = masks[0], None, None, track_ids[cand].category
                items.append(QaItem(
                    id=f"{scene_id}:{template.id}:{n:04d}",
                    video_id=scene_id,
                    question=question,
                    answer=answer,
                    answer_kind=template.answer_kind,
                    ability=template.ability,
                    variant=template.variant,
                    operands=operands,
                    answer_value=value,
                    unit=unit,
                    masks_ref=masks,
                    category=category,
                    provenance={
                        "template_id": template.id,
                        "phrasing_index": phrasing,
                        "fact_ids": [],
                        "seed": seed,
                        "slot_fills": fills,
                        "template_question": question,
                    },
                ))
    return items


def forge_scene(
    scene: SceneGeometry,
    tracks: List[Track],
    refs: Dict[int, RefEntry],
    policy: Optional[ForgePolicy] = None,
    seed: int = 0,
    registry: Optional[TemplateRegistry] = None,
) -> Tuple[List[QaItem], FactBook]:
    """
    All QA items for one gravity-aligned scene.

    Args:
        scene: Scene geometry (instances already capped per category)
        tracks: Fused tracks before the category cap (counting + segmentation)
        refs: Referring expressions by instance id
        policy: Quotas and filters
        seed: Run seed
        registry: Template registry (default: packaged templates)

    Returns:
        (items in template order, the fact book the items cite)
    """
    policy = policy or ForgePolicy()
    registry = registry or load_templates()
    book = FactBook(scene, policy.qualitative)
    resolved = resolve_refs(scene, refs)

    items = _spatial_items(book, registry, resolved, policy, seed)
    items += _track_items(scene.scene_id, registry, tracks, refs, policy, seed)

    for item in items:
        if any(p in item.question for p in PLACEHOLDERS):
            raise DataError(f"Unresolved placeholder in {item.id}: {item.question}")
    logger.info(f"{scene.scene_id}: forged {len(items)} QA items")
    return items, book


def counting_downsample(items: List[QaItem], rng: np.random.Generator) -> List[QaItem]:
    """
    Halve counting items whose answer is 1 or 2: seeded shuffle, keep the
    even-indexed half. Everything else passes through; input order is kept.
    """
    small = [i for i, item in enumerate(items)
             if item.ability == "counting" and item.answer_value in (1, 2)]
    if not small:
        return list(items)
    shuffled = [small[i] for i in rng.permutation(len(small))]
    dropped = set(shuffled[1::2])
    logger.info(f"counting_downsample: dropped {len(dropped)} of {len(small)} small-count items")
    return [item for i, item in enumerate(items) if i not in dropped]


def ability_counts(items: Iterable[QaItem]) -> Dict[str, int]:
    return dict(sorted(Counter(item.ability for item in items).items()))
