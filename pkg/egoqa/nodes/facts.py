"""
Spatial facts node
"""
from typing import Any, Dict

from egoqa.config import PipelineConfig
from egoqa.errors import EgoQAError
from egoqa.state import ScenePipelineState
from egoqa.tools.fusion import cap_per_category
from egoqa.tools.spatial_facts import FactBook, QualitativePolicy, SceneGeometry, build_instances


def qualitative_policy(config: PipelineConfig) -> QualitativePolicy:
    policy = config.policy
    return QualitativePolicy(
        vertical_margin=policy.vertical_margin,
        footprint_expansion=policy.footprint_expansion,
    )


def facts_node(state: ScenePipelineState) -> Dict[str, Any]:
    """
    Facts node: per-instance geometry for the kept instances, then every fact

    Instances come from the cloud's instance labels. When fused tracks are
    available only the per-category cap survivors are kept and categories are
    taken from the tracks.

    Args:
        state: Current pipeline state

    Returns:
        Partial state update with scene geometry and facts
    """
    scene = state["scene"]
    print("\n" + "="*80)
    print("FACTS NODE")
    print("="*80)

    tracks = state.get("tracks", [])
    try:
        if tracks:
            kept = cap_per_category(tracks, state["config"].forge.max_per_category)
            categories = {t.instance_id: t.category for t in kept}
            include = sorted(categories)
        else:
            categories, include = {}, None

        instances = build_instances(state["cloud"], categories, include)
        geometry = SceneGeometry(scene.scene_id, state["trajectory"], instances)
        facts = FactBook(geometry, qualitative_policy(state["config"])).enumerate_all()
    except EgoQAError as e:
        print(f"\n✗ Fact extraction failed: {e}")
        return {
            "error": e.with_stage("facts"),
            "errors": state.get("errors", []) + [f"Facts error: {e}"],
        }

    print(f"✓ Instances: {len(instances)}")
    print(f"✓ Facts: {len(facts)}")

    return {"geometry": geometry, "facts": facts}
