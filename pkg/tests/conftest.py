"""
Shared fixtures: synthetic rooms and a gravity-aligned furnished scene with
analytically known geometry.
"""
import math
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
import pytest

from egoqa.tools.fusion import Track
from egoqa.tools.geometry import CameraTrajectory, PointCloud, Pose
from egoqa.tools.qa_forge import RefEntry
from egoqa.tools.rle import encode
from egoqa.tools.spatial_facts import SceneGeometry, build_instances

# Camera looking along world +X with the image down direction along world -Z
FORWARD_X = np.array([
    [0.0, 0.0, 1.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
])


def level_pose(position, yaw_deg: float = 0.0, timestamp: float = 0.0, frame_index: int = 0) -> Pose:
    """Horizontal camera at `position`, heading rotated counter-clockwise by yaw_deg from +X"""
    yaw = math.radians(yaw_deg)
    rz = np.array([
        [math.cos(yaw), -math.sin(yaw), 0.0],
        [math.sin(yaw), math.cos(yaw), 0.0],
        [0.0, 0.0, 1.0],
    ])
    return Pose.from_matrix(rz @ FORWARD_X, position, timestamp, frame_index)


def lattice_box(center, size, n: int = 5) -> np.ndarray:
    """n^3 grid points filling an axis-aligned box; trimmed AABB equals the box exactly"""
    axes = [np.linspace(c - s / 2.0, c + s / 2.0, n) for c, s in zip(center, size)]
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=1)


def square_mask(h: int, w: int, top: int, left: int, side: int) -> np.ndarray:
    mask = np.zeros((h, w), dtype=bool)
    mask[top:top + side, left:left + side] = True
    return mask


def synthetic_room(rng: np.random.Generator, n_walls: int = 4, tilt_deg: float = 0.0,
                   noise: float = 0.005, outlier_fraction: float = 0.3) -> PointCloud:
    """
    5 m x 4 m room, floor at z = 0, walls 2.5 m high, then rotated about the
    x axis by tilt_deg
    """
    parts = []
    floor = np.column_stack([rng.uniform(0, 5, 2000), rng.uniform(0, 4, 2000), np.zeros(2000)])
    parts.append(floor)
    walls = [
        lambda m: np.column_stack([np.zeros(m), rng.uniform(0, 4, m), rng.uniform(0, 2.5, m)]),
        lambda m: np.column_stack([np.full(m, 5.0), rng.uniform(0, 4, m), rng.uniform(0, 2.5, m)]),
        lambda m: np.column_stack([rng.uniform(0, 5, m), np.zeros(m), rng.uniform(0, 2.5, m)]),
        lambda m: np.column_stack([rng.uniform(0, 5, m), np.full(m, 4.0), rng.uniform(0, 2.5, m)]),
    ]
    for make in walls[:n_walls]:
        parts.append(make(800))
    inliers = np.vstack(parts)
    inliers = inliers + rng.normal(0.0, noise, inliers.shape)
    n_out = int(round(outlier_fraction * len(inliers) / (1.0 - outlier_fraction)))
    outliers = rng.uniform([0, 0, 0], [5, 4, 2.5], size=(n_out, 3))
    points = np.vstack([inliers, outliers])

    t = math.radians(tilt_deg)
    rx = np.array([[1, 0, 0], [0, math.cos(t), -math.sin(t)], [0, math.sin(t), math.cos(t)]])
    return PointCloud(points @ rx.T)


def tilt_matrix(tilt_deg: float) -> np.ndarray:
    t = math.radians(tilt_deg)
    return np.array([[1, 0, 0], [0, math.cos(t), -math.sin(t)], [0, math.sin(t), math.cos(t)]])


@dataclass(frozen=True)
class BoxSpec:
    instance_id: int
    category: str
    center: Tuple[float, float, float]
    size: Tuple[float, float, float]       # (x, y, z) extents

    @property
    def bottom(self) -> float:
        return self.center[2] - self.size[2] / 2.0


# Ego distances grow by well over 10% from one object to the next, as do
# heights and volumes, so comparative questions clear the margin filter.
FURNISHED_BOXES: List[BoxSpec] = [
    BoxSpec(0, "mug", (1.2, 0.3, 0.90), (0.10, 0.10, 0.20)),
    BoxSpec(1, "lamp", (1.6, -1.2, 0.55), (0.25, 0.25, 0.30)),
    BoxSpec(2, "chair", (2.6, 1.4, 0.275), (0.45, 0.45, 0.45)),
    BoxSpec(3, "table", (3.4, -2.2, 0.45), (0.80, 0.60, 0.70)),
    BoxSpec(4, "cabinet", (-4.2, 2.4, 0.70), (1.00, 0.50, 1.00)),
    BoxSpec(5, "sofa", (-2.0, -5.6, 0.95), (1.80, 0.90, 1.40)),
    BoxSpec(6, "bookshelf", (6.8, 3.0, 1.30), (1.20, 0.40, 1.90)),
    BoxSpec(7, "refrigerator", (-7.5, -4.5, 1.55), (0.90, 0.80, 2.50)),
]

FURNISHED_REFS: Dict[int, RefEntry] = {
    b.instance_id: RefEntry(f"the {b.category}", f"the {b.category} you would use last") for b in FURNISHED_BOXES
}


def furnished_trajectory() -> CameraTrajectory:
    """Walk 3 m along -X then 2 m along +Y, ending at (0, 0, 1.5) facing +X"""
    waypoints = [(3.0, -2.0, 1.5), (0.0, -2.0, 1.5), (0.0, 0.0, 1.5)]
    poses = [level_pose(p, 0.0, timestamp=float(i), frame_index=i * 30) for i, p in enumerate(waypoints)]
    return CameraTrajectory(poses)


def furnished_cloud() -> PointCloud:
    points, labels = [], []
    for box in FURNISHED_BOXES:
        pts = lattice_box(box.center, box.size)
        points.append(pts)
        labels.append(np.full(len(pts), box.instance_id))
    return PointCloud(np.vstack(points), np.concatenate(labels))


def furnished_tracks(extra_mugs: int = 1) -> List[Track]:
    """One track per box plus `extra_mugs` additional mug tracks (no geometry)"""
    h, w = 32, 32
    tracks = []
    for box in FURNISHED_BOXES:
        mask = encode(square_mask(h, w, 2 + box.instance_id, 2 + box.instance_id, 6 + box.instance_id))
        tracks.append(Track(box.instance_id, box.category, {f: mask for f in range(0, 60, 10)}))
    for k in range(extra_mugs):
        mask = encode(square_mask(h, w, 20, 20 + k, 4))
        tracks.append(Track(100 + k, "mug", {0: mask, 10: mask}))
    return tracks


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def furnished_scene() -> SceneGeometry:
    categories = {b.instance_id: b.category for b in FURNISHED_BOXES}
    instances = build_instances(furnished_cloud(), categories)
    return SceneGeometry("scene0001", furnished_trajectory(), instances)
