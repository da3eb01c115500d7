"""
Scene loader node
"""
from typing import Any, Dict

from egoqa.errors import EgoQAError, MissingInput
from egoqa.state import ScenePipelineState
from egoqa.tools.fusion import tracks_from_records
from egoqa.tools.qa_forge import load_refs
from egoqa.tools.rle import read_mask_jsonl
from egoqa.tools.scene_io import read_intrinsics, read_ply, read_trajectory


def scene_loader_node(state: ScenePipelineState) -> Dict[str, Any]:
    """
    Loader node: read the cloud, trajectory, fused tracks and referring expressions

    Args:
        state: Current pipeline state

    Returns:
        Partial state update with the loaded scene
    """
    scene = state["scene"]
    print("\n" + "="*80)
    print(f"LOAD SCENE: {scene.scene_id}")
    print("="*80)

    try:
        if scene.cloud is None or scene.trajectory is None:
            raise MissingInput(f"Scene {scene.scene_id} needs both cloud and trajectory")
        intrinsics = read_intrinsics(scene.intrinsics) if scene.intrinsics else None
        cloud = read_ply(scene.cloud)
        trajectory = read_trajectory(scene.trajectory, intrinsics)
        tracks = tracks_from_records(read_mask_jsonl(scene.masks)) if scene.masks else []
        refs = load_refs(scene.refs) if scene.refs else {}
    except EgoQAError as e:
        print(f"\n✗ Loading failed: {e}")
        return {
            "error": e.with_stage("load"),
            "errors": state.get("errors", []) + [f"Load error: {e}"],
        }

    print(f"✓ Cloud: {len(cloud)} points, {len(cloud.instance_ids())} instances")
    print(f"✓ Trajectory: {len(trajectory)} poses")
    print(f"✓ Tracks: {len(tracks)}, referring expressions: {len(refs)}")

    return {
        "cloud": cloud,
        "trajectory": trajectory,
        "tracks": tracks,
        "refs": refs,
        "alignment": None,
    }
