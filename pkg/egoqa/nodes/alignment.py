"""
Gravity alignment node
"""
from typing import Any, Dict, Optional

import numpy as np

from egoqa.errors import EgoQAError, EmptyTrajectory
from egoqa.state import ScenePipelineState
from egoqa.tools.ransac import AlignResult, RansacParams, detect_ground, gravity_align


def ransac_params(state: ScenePipelineState) -> RansacParams:
    cfg = state["config"]
    return RansacParams(
        iterations_per_plane=cfg.ransac.iterations_per_plane,
        inlier_threshold=cfg.ransac.inlier_threshold,
        min_inliers=cfg.ransac.min_inliers,
        rng_seed=cfg.seed,
        min_inlier_fraction=cfg.ransac.min_inlier_fraction,
        max_planes=cfg.ransac.max_planes,
    )


def alignment_node(state: ScenePipelineState) -> Dict[str, Any]:
    """
    Alignment node: find the ground plane and rotate it onto z = 0, +Z up

    Args:
        state: Current pipeline state

    Returns:
        Partial state update with the aligned cloud and trajectory
    """
    print("\n" + "="*80)
    print("ALIGNMENT NODE")
    print("="*80)

    cloud = state["cloud"]
    trajectory = state["trajectory"]
    try:
        if not trajectory.poses:
            raise EmptyTrajectory("Cannot pick a ground plane without camera poses")
        ground = detect_ground(cloud, trajectory.poses[0], ransac_params(state))
        result = gravity_align(cloud, trajectory, ground)
    except EgoQAError as e:
        print(f"\n✗ Alignment failed: {e}")
        return {
            "error": e.with_stage("align"),
            "errors": state.get("errors", []) + [f"Alignment error: {e}"],
        }

    print(f"✓ Ground plane: {ground.inlier_count} inliers")
    print(f"✓ Tilt corrected: {result.angle_deg:.3f} degrees")

    return {
        "cloud": result.cloud,
        "trajectory": result.trajectory,
        "alignment": result,
    }


def align_report(scene_id: str, result: Optional[AlignResult], seed: int) -> Dict[str, Any]:
    """JSON report of one alignment; identity when the scene was already aligned"""
    if result is None:
        return {
            "scene_id": scene_id,
            "already_aligned": True,
            "angle_deg": 0.0,
            "transform": np.eye(4).tolist(),
            "ground": None,
            "seed": seed,
        }
    return {
        "scene_id": scene_id,
        "already_aligned": False,
        "angle_deg": result.angle_deg,
        "transform": result.transform.tolist(),
        "ground": result.ground.to_json(),
        "inlier_count": result.ground.inlier_count,
        "seed": seed,
    }
