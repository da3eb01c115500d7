"""
QA forge node
"""
from typing import Any, Dict

from egoqa.errors import EgoQAError
from egoqa.nodes.facts import qualitative_policy
from egoqa.state import ScenePipelineState
from egoqa.tools.qa_forge import ForgePolicy, ability_counts, forge_scene
from egoqa.tools.templates import load_templates


def forge_node(state: ScenePipelineState) -> Dict[str, Any]:
    """
    Forge node: instantiate QA templates over the scene's facts and tracks

    Args:
        state: Current pipeline state

    Returns:
        Partial state update with QA items
    """
    cfg = state["config"]
    print("\n" + "="*80)
    print("FORGE NODE")
    print("="*80)

    policy = ForgePolicy(
        quota_per_ability=cfg.forge.quota_per_ability,
        comparative_margin=cfg.forge.comparative_margin,
        qualitative=qualitative_policy(cfg),
    )
    try:
        registry = load_templates(cfg.forge.templates)
        items, _ = forge_scene(
            state["geometry"],
            state.get("tracks", []),
            state.get("refs", {}),
            policy=policy,
            seed=cfg.seed,
            registry=registry,
        )
    except EgoQAError as e:
        print(f"\n✗ Forge failed: {e}")
        return {
            "error": e.with_stage("forge"),
            "errors": state.get("errors", []) + [f"Forge error: {e}"],
        }

    print(f"✓ Forged {len(items)} QA items")
    for ability, count in ability_counts(items).items():
        print(f"  - {ability}: {count}")

    warnings = state.get("warnings", [])
    if not items:
        warnings = warnings + [f"{state['scene'].scene_id}: no QA items forged"]

    return {"items": items, "warnings": warnings}
