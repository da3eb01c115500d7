"""
Spatial facts over a gravity-aligned scene (ground at z = 0, +Z up).

Egocentric facts are measured from a camera pose; world-centric facts from the
instance geometry alone. Angles are clockwise degrees in [0, 360) seen from above.
"""
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from egoqa.config import Config
from egoqa.errors import (
    Ambiguous,
    DataError,
    DegenerateBearing,
    EmptyTrajectory,
    NotAligned,
    TooFewPoints,
)
from egoqa.tools.geometry import CameraTrajectory, PointCloud, Pose

logger = logging.getLogger(__name__)

FACT_KINDS = (
    "trajectory_length",
    "ego_distance",
    "ego_direction_cw",
    "post_turn_relation",
    "center_distance",
    "elevation_diff",
    "height_extent",
    "size_dims",
    "rank_extreme",
    "vertical_relation",
    "ego_relative_position",
)

TIE_TOLERANCE = 1e-6
BEARING_TOLERANCE = 1e-6


@dataclass(frozen=True)
class QualitativePolicy:
    sectors: Tuple[Tuple[str, float, float], ...] = (
        ("front", 315.0, 45.0),
        ("right", 45.0, 135.0),
        ("back", 135.0, 225.0),
        ("left", 225.0, 315.0),
    )
    vertical_margin: float = Config.VERTICAL_MARGIN_M
    footprint_expansion: float = Config.FOOTPRINT_EXPANSION_M

    def __post_init__(self):
        # Each sector is [start, end) going clockwise; together they must tile the circle
        covered = 0.0
        for _, start, end in self.sectors:
            covered += (end - start) % 360.0
        if abs(covered - 360.0) > 1e-9:
            raise ValueError(f"Sectors cover {covered} degrees, expected 360")

    def label(self, bearing_cw: float) -> str:
        bearing = bearing_cw % 360.0
        for name, start, end in self.sectors:
            if (bearing - start) % 360.0 < (end - start) % 360.0:
                return name
        raise ValueError(f"No sector covers bearing {bearing}")

    @property
    def labels(self) -> List[str]:
        return [name for name, _, _ in self.sectors]

    def digest(self) -> str:
        payload = json.dumps({
            "sectors": [list(s) for s in self.sectors],
            "vertical_margin": self.vertical_margin,
            "footprint_expansion": self.footprint_expansion,
        }, sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass
class InstanceGeometry:
    instance_id: int
    points: PointCloud
    centroid: np.ndarray
    aabb_min: np.ndarray
    aabb_max: np.ndarray
    category: Optional[str] = None

    @classmethod
    def from_points(
        cls,
        instance_id: int,
        points: PointCloud,
        category: Optional[str] = None,
        trim: Tuple[float, float] = Config.AABB_TRIM_PERCENTILES,
    ) -> "InstanceGeometry":
        """Trimmed AABB (per-axis percentiles); centroid = mean of points inside it"""
        pts = points.points
        if len(pts) == 0:
            raise TooFewPoints(f"Instance {instance_id} has no points")
        lo = np.percentile(pts, trim[0], axis=0)
        hi = np.percentile(pts, trim[1], axis=0)
        inside = np.all((pts >= lo) & (pts <= hi), axis=1)
        center = pts[inside].mean(axis=0) if inside.any() else pts.mean(axis=0)
        return cls(instance_id, points, np.clip(center, lo, hi), lo, hi, category)

    @property
    def extents(self) -> np.ndarray:
        return self.aabb_max - self.aabb_min

    @property
    def n_points(self) -> int:
        return len(self.points)

    def label(self) -> str:
        return self.category or f"object {self.instance_id}"


FactValue = Union[float, str, Tuple[float, ...], int]


@dataclass
class SpatialFact:
    kind: str
    operands: Tuple[int, ...]
    value: FactValue
    unit: str
    anchor_frame: Optional[int] = None
    detail: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FACT_KINDS:
            raise ValueError(f"Unknown fact kind {self.kind}")

    @property
    def fact_id(self) -> str:
        ops = "-".join(str(o) for o in self.operands) or "scene"
        suffix = "".join(f":{k}={self.detail[k]}" for k in sorted(self.detail))
        return f"{self.kind}:{ops}{suffix}"

    def to_json(self, scene_id: str, policy: QualitativePolicy, seed: Optional[int] = None) -> dict:
        value = list(self.value) if isinstance(self.value, tuple) else self.value
        record = {
            "scene_id": scene_id,
            "fact_id": self.fact_id,
            "kind": self.kind,
            "operands": list(self.operands),
            "anchor_frame": self.anchor_frame,
            "value": value,
            "unit": self.unit,
            "policy_digest": policy.digest(),
        }
        if self.detail:
            record["detail"] = dict(self.detail)
        if seed is not None:
            record["seed"] = seed
        return record


# ============================================================================
# Egocentric facts
# ============================================================================

def trajectory_length(traj: CameraTrajectory) -> float:
    if len(traj) == 0:
        raise EmptyTrajectory("Trajectory has no poses")
    steps = np.diff(traj.positions, axis=0)
    return float(np.linalg.norm(steps, axis=1).sum())


def ego_distance(pose: Pose, inst: InstanceGeometry) -> float:
    return float(np.linalg.norm(inst.centroid - pose.translation))


def heading_cw(pose: Pose) -> np.ndarray:
    """Camera forward projected onto the ground plane (unit, xy)"""
    forward = pose.forward[:2]
    norm = np.linalg.norm(forward)
    if norm <= BEARING_TOLERANCE:
        raise DegenerateBearing("Camera looks straight up or down; heading undefined")
    return forward / norm


def ego_direction_cw(pose: Pose, inst: InstanceGeometry) -> float:
    """
    Clockwise angle (seen from above) from the camera heading to the instance.

    Raises:
        DegenerateBearing: instance directly above/below the camera
    """
    heading = heading_cw(pose)
    offset = inst.centroid[:2] - pose.translation[:2]
    if np.linalg.norm(offset) <= BEARING_TOLERANCE:
        raise DegenerateBearing(f"Instance {inst.instance_id} is vertically aligned with the camera")
    cross = heading[0] * offset[1] - heading[1] * offset[0]
    dot = heading[0] * offset[0] + heading[1] * offset[1]
    angle = (-math.degrees(math.atan2(cross, dot))) % 360.0
    return 0.0 if angle >= 360.0 else angle


def ego_relative_position(pose: Pose, inst: InstanceGeometry, policy: QualitativePolicy) -> str:
    return policy.label(ego_direction_cw(pose, inst))


def post_turn_relation(
    pose: Pose,
    inst: InstanceGeometry,
    turn: float,
    policy: QualitativePolicy,
    left_negative: bool = True,
) -> str:
    """Sector of the instance after turning in place by `turn` degrees"""
    turn_cw = turn if left_negative else -turn
    return policy.label((ego_direction_cw(pose, inst) - turn_cw) % 360.0)


# ============================================================================
# World-centric facts
# ============================================================================

def center_distance(a: InstanceGeometry, b: InstanceGeometry) -> float:
    return float(np.linalg.norm(a.centroid - b.centroid))


def _check_aligned(*insts: InstanceGeometry) -> None:
    for inst in insts:
        if inst.aabb_min[2] < Config.NOT_ALIGNED_GUARD_M:
            raise NotAligned(
                f"Instance {inst.instance_id} bottom at z={inst.aabb_min[2]:.3f}; scene looks unaligned"
            )


def elevation_diff(a: InstanceGeometry, b: InstanceGeometry) -> float:
    """Signed difference of the instance bottoms above ground (a - b)"""
    _check_aligned(a, b)
    return float(a.aabb_min[2] - b.aabb_min[2])


def height_extent(inst: InstanceGeometry) -> float:
    return float(inst.extents[2])


def size_dims(inst: InstanceGeometry) -> Tuple[float, float, float]:
    """(width, depth, height): width/depth are the larger/smaller horizontal extent"""
    if inst.n_points < Config.MIN_POINTS_FOR_SIZE:
        raise TooFewPoints(
            f"Instance {inst.instance_id} has {inst.n_points} points, need {Config.MIN_POINTS_FOR_SIZE}"
        )
    ex, ey, ez = (float(v) for v in inst.extents)
    return max(ex, ey), min(ex, ey), ez


def volume(inst: InstanceGeometry) -> float:
    w, d, h = size_dims(inst)
    return w * d * h


def longest_dimension(inst: InstanceGeometry) -> float:
    return max(size_dims(inst))


RANK_KEYS = ("ego_distance", "height_extent", "volume", "center_distance")


def rank_key_value(inst: InstanceGeometry, key: str, pose: Optional[Pose] = None,
                   reference: Optional[InstanceGeometry] = None) -> float:
    if key == "ego_distance":
        if pose is None:
            raise ValueError("ego_distance ranking needs a pose")
        return ego_distance(pose, inst)
    if key == "height_extent":
        return height_extent(inst)
    if key == "volume":
        return volume(inst)
    if key == "center_distance":
        if reference is None:
            raise ValueError("center_distance ranking needs a reference instance")
        return center_distance(inst, reference)
    raise ValueError(f"Unknown rank key {key}")


def rank_extreme(
    insts: Sequence[InstanceGeometry],
    key: str,
    mode: str,
    pose: Optional[Pose] = None,
    reference: Optional[InstanceGeometry] = None,
) -> int:
    """
    Instance id with the smallest (mode="min") or largest (mode="max") key value.

    Raises:
        Ambiguous: two key values within 1e-6 of each other
    """
    if len(insts) < 2:
        raise ValueError("rank_extreme needs at least two instances")
    if mode not in ("min", "max"):
        raise ValueError(f"mode must be 'min' or 'max', got {mode}")

    values = np.array([rank_key_value(i, key, pose, reference) for i in insts])
    ordered = np.sort(values)
    if np.any(np.diff(ordered) <= TIE_TOLERANCE):
        raise Ambiguous(f"Tied {key} values among instances {[i.instance_id for i in insts]}")
    idx = int(np.argmin(values) if mode == "min" else np.argmax(values))
    return insts[idx].instance_id


def _inside_footprint(point_xy: np.ndarray, inst: InstanceGeometry, expansion: float) -> bool:
    lo = inst.aabb_min[:2] - expansion
    hi = inst.aabb_max[:2] + expansion
    return bool(np.all(point_xy >= lo) and np.all(point_xy <= hi))


def _is_above(a: InstanceGeometry, b: InstanceGeometry, policy: QualitativePolicy) -> bool:
    return (
        a.aabb_min[2] >= b.aabb_max[2] - policy.vertical_margin
        and _inside_footprint(a.centroid[:2], b, policy.footprint_expansion)
    )


def vertical_relation(a: InstanceGeometry, b: InstanceGeometry, policy: QualitativePolicy) -> str:
    """'above', 'below' or 'neither' for the ordered pair (a, b)"""
    if _is_above(a, b, policy):
        return "above"
    if _is_above(b, a, policy):
        return "below"
    return "neither"


# ============================================================================
# Scene assembly
# ============================================================================

@dataclass
class SceneGeometry:
    scene_id: str
    trajectory: CameraTrajectory
    instances: Dict[int, InstanceGeometry]

    @property
    def anchor(self) -> Pose:
        return self.trajectory.anchor

    def by_category(self) -> Dict[str, List[InstanceGeometry]]:
        groups: Dict[str, List[InstanceGeometry]] = {}
        for inst_id in sorted(self.instances):
            inst = self.instances[inst_id]
            groups.setdefault(inst.label(), []).append(inst)
        return groups


def build_instances(
    cloud: PointCloud,
    categories: Dict[int, str],
    include: Optional[Sequence[int]] = None,
) -> Dict[int, InstanceGeometry]:
    """Per-instance geometry from an instance-labelled, gravity-aligned cloud"""
    if cloud.labels is None:
        raise DataError("Aligned cloud has no instance_id property")
    wanted = set(include) if include is not None else None
    instances = {}
    for inst_id in cloud.instance_ids():
        if wanted is not None and inst_id not in wanted:
            continue
        instances[inst_id] = InstanceGeometry.from_points(
            inst_id, cloud.instance(inst_id), categories.get(inst_id)
        )
    return instances


class FactBook:
    """
    Computes facts for one scene and keeps every computed fact by id, so QA items
    can cite exactly the facts they were built from.
    """

    def __init__(self, scene: SceneGeometry, policy: QualitativePolicy):
        self.scene = scene
        self.policy = policy
        self.facts: Dict[str, SpatialFact] = {}

    def _keep(self, fact: SpatialFact) -> SpatialFact:
        self.facts.setdefault(fact.fact_id, fact)
        return fact

    @property
    def anchor_frame(self) -> int:
        return self.scene.anchor.frame_index

    def inst(self, inst_id: int) -> InstanceGeometry:
        return self.scene.instances[inst_id]

    def trajectory_length(self) -> SpatialFact:
        return self._keep(SpatialFact("trajectory_length", (), trajectory_length(self.scene.trajectory), "m"))

    def ego_distance(self, a: int) -> SpatialFact:
        value = ego_distance(self.scene.anchor, self.inst(a))
        return self._keep(SpatialFact("ego_distance", (a,), value, "m", self.anchor_frame))

    def ego_direction_cw(self, a: int) -> SpatialFact:
        value = ego_direction_cw(self.scene.anchor, self.inst(a))
        return self._keep(SpatialFact("ego_direction_cw", (a,), value, "deg", self.anchor_frame))

    def ego_relative_position(self, a: int) -> SpatialFact:
        value = ego_relative_position(self.scene.anchor, self.inst(a), self.policy)
        return self._keep(SpatialFact("ego_relative_position", (a,), value, "label", self.anchor_frame))

    def post_turn_relation(self, a: int, turn: float) -> SpatialFact:
        value = post_turn_relation(self.scene.anchor, self.inst(a), turn, self.policy)
        return self._keep(SpatialFact(
            "post_turn_relation", (a,), value, "label", self.anchor_frame, {"turn": int(turn)}
        ))

    def center_distance(self, a: int, b: int) -> SpatialFact:
        value = center_distance(self.inst(a), self.inst(b))
        return self._keep(SpatialFact("center_distance", (a, b), value, "m"))

    def elevation_diff(self, a: int, b: int) -> SpatialFact:
        value = elevation_diff(self.inst(a), self.inst(b))
        return self._keep(SpatialFact("elevation_diff", (a, b), value, "m"))

    def height_extent(self, a: int) -> SpatialFact:
        return self._keep(SpatialFact("height_extent", (a,), height_extent(self.inst(a)), "m"))

    def size_dims(self, a: int) -> SpatialFact:
        return self._keep(SpatialFact("size_dims", (a,), size_dims(self.inst(a)), "m"))

    def vertical_relation(self, a: int, b: int) -> SpatialFact:
        value = vertical_relation(self.inst(a), self.inst(b), self.policy)
        return self._keep(SpatialFact("vertical_relation", (a, b), value, "label"))

    def rank_extreme(self, ids: Sequence[int], key: str, mode: str,
                     reference: Optional[int] = None) -> SpatialFact:
        ref = self.inst(reference) if reference is not None else None
        winner = rank_extreme([self.inst(i) for i in ids], key, mode, self.scene.anchor, ref)
        detail = {"key": key, "mode": mode}
        if reference is not None:
            detail["reference"] = reference
        anchor = self.anchor_frame if key == "ego_distance" else None
        return self._keep(SpatialFact("rank_extreme", tuple(ids), winner, "id", anchor, detail))

    def enumerate_all(self) -> List[SpatialFact]:
        """Every per-instance and per-pair fact computable for the scene"""
        ids = sorted(self.scene.instances)
        if len(self.scene.trajectory):
            self.trajectory_length()
        for a in ids:
            self.ego_distance(a)
            self.height_extent(a)
            self._try(self.ego_direction_cw, a)
            self._try(self.ego_relative_position, a)
            for turn in (-90.0, 90.0, 180.0):
                self._try(self.post_turn_relation, a, turn)
            self._try(self.size_dims, a)
        for a, b in combinations(ids, 2):
            self.center_distance(a, b)
            self._try(self.elevation_diff, a, b)
            self.vertical_relation(a, b)
        if len(ids) >= 2:
            for key, mode in (("ego_distance", "min"), ("height_extent", "max")):
                self._try(self.rank_extreme, ids, key, mode)
        return [self.facts[k] for k in sorted(self.facts)]

    def _try(self, fn, *args) -> Optional[SpatialFact]:
        try:
            return fn(*args)
        except (DegenerateBearing, TooFewPoints, Ambiguous, NotAligned) as e:
            logger.debug(f"{fn.__name__}{args}: skipped ({type(e).__name__}: {e})")
            return None
