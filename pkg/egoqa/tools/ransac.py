"""
RANSAC plane fitting, ground detection and gravity alignment
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from egoqa.config import Config
from egoqa.errors import DegenerateCloud, NoGround, NoPlane
from egoqa.tools.geometry import CameraTrajectory, Plane, PointCloud, Pose, rigid_matrix

logger = logging.getLogger(__name__)

# Distance matrix budget per scoring chunk (points x hypotheses)
_SCORE_BUDGET = 4_000_000


@dataclass(frozen=True)
class RansacParams:
    iterations_per_plane: int = Config.RANSAC_ITERATIONS_PER_PLANE
    inlier_threshold: float = Config.RANSAC_INLIER_THRESHOLD
    min_inliers: int = Config.RANSAC_MIN_INLIERS
    rng_seed: int = 0
    min_inlier_fraction: float = Config.RANSAC_MIN_INLIER_FRACTION
    max_planes: int = Config.GROUND_MAX_PLANES

    def __post_init__(self):
        if self.iterations_per_plane < 1:
            raise ValueError("iterations_per_plane must be >= 1")
        if self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be > 0")

    def effective_min_inliers(self, n_points: int) -> int:
        return max(self.min_inliers, math.ceil(self.min_inlier_fraction * n_points))


def _check_non_degenerate(points: np.ndarray) -> None:
    if len(points) < 3:
        raise DegenerateCloud(f"Need at least 3 points, got {len(points)}")
    s = np.linalg.svd(points - points.mean(axis=0), compute_uv=False)
    if s[1] <= 1e-9 * max(1.0, s[0]):
        raise DegenerateCloud("All points are collinear")


def _orient(normal: np.ndarray, offset: float) -> Tuple[np.ndarray, float]:
    """Canonical sign: largest-magnitude component positive"""
    if normal[np.argmax(np.abs(normal))] < 0:
        return -normal, -offset
    return normal, offset


def _refit(points: np.ndarray) -> Tuple[np.ndarray, float]:
    center = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - center, full_matrices=False)
    normal = vt[-1] / np.linalg.norm(vt[-1])
    return normal, -float(normal @ center)


def fit_plane_ransac(
    cloud: PointCloud,
    params: RansacParams,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[Plane, np.ndarray]:
    """
    Fit the plane with the most inliers among sampled 3-point hypotheses,
    then refit on its inliers by least squares.

    Args:
        cloud: Input points
        params: RANSAC parameters
        rng: Generator to draw hypotheses from (default: seeded from params.rng_seed)

    Returns:
        (plane, sorted inlier indices)

    Raises:
        DegenerateCloud: fewer than 3 points, or all collinear
        NoPlane: best hypothesis has fewer than the minimum inliers
    """
    points = cloud.points
    _check_non_degenerate(points)
    n = len(points)
    rng = rng if rng is not None else np.random.default_rng(params.rng_seed)

    samples = rng.integers(0, n, size=(params.iterations_per_plane, 3))
    p0, p1, p2 = points[samples[:, 0]], points[samples[:, 1]], points[samples[:, 2]]
    normals = np.cross(p1 - p0, p2 - p0)
    norms = np.linalg.norm(normals, axis=1)
    valid = norms > 1e-12
    normals[valid] /= norms[valid, None]
    offsets = -np.einsum("ij,ij->i", normals, p0)

    counts = np.full(len(samples), -1, dtype=np.int64)
    chunk = max(1, _SCORE_BUDGET // n)
    for start in range(0, len(samples), chunk):
        stop = min(start + chunk, len(samples))
        dist = np.abs(points @ normals[start:stop].T + offsets[start:stop])
        counts[start:stop] = np.count_nonzero(dist <= params.inlier_threshold, axis=0)
    counts[~valid] = -1

    best = int(np.argmax(counts))
    best_count = int(counts[best])
    if best_count < 0:
        raise NoPlane(f"All {len(samples)} sampled triples were degenerate")
    normal, offset = normals[best], float(offsets[best])

    if best_count >= 3:
        inliers = np.flatnonzero(np.abs(points @ normal + offset) <= params.inlier_threshold)
        ref_normal, ref_offset = _refit(points[inliers])
        ref_inliers = np.flatnonzero(np.abs(points @ ref_normal + ref_offset) <= params.inlier_threshold)
        if len(ref_inliers) >= best_count:
            normal, offset = ref_normal, ref_offset

    normal, offset = _orient(normal, offset)
    inliers = np.flatnonzero(np.abs(points @ normal + offset) <= params.inlier_threshold)

    required = params.effective_min_inliers(n)
    if len(inliers) < required:
        raise NoPlane(f"Best plane has {len(inliers)} inliers, need {required}")

    return Plane(normal, offset, len(inliers)), inliers


def detect_planes(cloud: PointCloud, params: RansacParams) -> List[Plane]:
    """Sequential RANSAC: fit, remove inliers, repeat up to params.max_planes times"""
    planes: List[Plane] = []
    remaining = cloud
    for round_idx in range(params.max_planes):
        rng = np.random.default_rng([params.rng_seed, round_idx])
        try:
            plane, inliers = fit_plane_ransac(remaining, params, rng=rng)
        except (NoPlane, DegenerateCloud) as e:
            logger.info(f"Plane search stopped after {round_idx} planes: {e}")
            break
        planes.append(plane)
        keep = np.ones(len(remaining), dtype=bool)
        keep[inliers] = False
        remaining = remaining.subset(keep)
    return planes


def detect_ground(cloud: PointCloud, initial_pose: Pose, params: RansacParams) -> Plane:
    """
    Pick, among the sequentially detected planes, the one whose normal is most
    parallel (sign-invariant) to the initial camera Y axis.

    Raises:
        NoGround: no plane reached the minimum inlier count
    """
    planes = detect_planes(cloud, params)
    if not planes:
        raise NoGround(f"No plane with >= {params.min_inliers} inliers in {params.max_planes} rounds")

    cam_y = initial_pose.up_axis
    alignment = [abs(float(p.normal @ cam_y)) for p in planes]
    ground = planes[int(np.argmax(alignment))]
    angle = math.degrees(math.acos(min(1.0, max(alignment))))
    logger.info(f"Ground selected from {len(planes)} planes ({angle:.2f} deg off camera Y)")
    return ground


@dataclass
class AlignResult:
    cloud: PointCloud
    trajectory: CameraTrajectory
    rotation: np.ndarray
    translation: np.ndarray
    angle_deg: float
    ground: Plane

    @property
    def transform(self) -> np.ndarray:
        return rigid_matrix(self.rotation, self.translation)


def gravity_align(cloud: PointCloud, traj: CameraTrajectory, ground: Plane) -> AlignResult:
    """
    Rotate the ground normal onto +Z (minimal angle, axis n x z) and translate the
    ground to z = 0. The normal is first oriented so that the mean camera position
    lies above the ground.
    """
    normal, offset = ground.normal, ground.offset
    if len(traj) and float(np.mean(traj.positions @ normal + offset)) < 0:
        normal, offset = -normal, -offset

    z = np.array([0.0, 0.0, 1.0])
    axis = np.cross(normal, z)
    s, c = float(np.linalg.norm(axis)), float(normal @ z)
    angle = math.atan2(s, c)
    if s < 1e-12:
        rotation = np.eye(3) if c > 0 else Rotation.from_rotvec([math.pi, 0.0, 0.0]).as_matrix()
    else:
        rotation = Rotation.from_rotvec(axis / s * angle).as_matrix()
    translation = np.array([0.0, 0.0, offset])

    return AlignResult(
        cloud=cloud.transformed(rotation, translation),
        trajectory=traj.transformed(rotation, translation),
        rotation=rotation,
        translation=translation,
        angle_deg=math.degrees(angle),
        ground=Plane(z, 0.0, ground.inlier_count),
    )
