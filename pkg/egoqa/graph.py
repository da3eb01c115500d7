"""
LangGraph state graph for the per-scene pipeline:
load -> (align) -> facts -> forge -> (refine)
"""
from typing import Any, Optional

from langgraph.graph import END, StateGraph

from egoqa.config import PipelineConfig, SceneConfig
from egoqa.nodes import (
    alignment_node,
    facts_node,
    forge_node,
    refine_node,
    scene_loader_node,
)
from egoqa.state import ScenePipelineState

STAGES = ("load", "align", "facts", "forge", "refine")


def _stop(state: ScenePipelineState, stage: str) -> bool:
    return state.get("error") is not None or state.get("stop_after") == stage


def route_after_load(state: ScenePipelineState) -> str:
    """
    Route after loading: skip alignment for scenes flagged as already aligned

    Returns:
        "align", "facts" or "end"
    """
    if state.get("error") is not None:
        return "end"
    if state["scene"].aligned:
        return "end" if state.get("stop_after") == "align" else "facts"
    return "align"


def route_after_align(state: ScenePipelineState) -> str:
    return "end" if _stop(state, "align") else "facts"


def route_after_facts(state: ScenePipelineState) -> str:
    return "end" if _stop(state, "facts") else "forge"


def route_after_forge(state: ScenePipelineState) -> str:
    """
    Route after forging: refine questions only when enabled

    Returns:
        "refine" or "end"
    """
    if _stop(state, "forge"):
        return "end"
    if state["config"].forge.refine_questions and state.get("transport") is not None:
        return "refine"
    return "end"


def create_scene_graph():
    """
    Create and compile the scene pipeline graph

    Returns:
        Compiled StateGraph application
    """
    workflow = StateGraph(ScenePipelineState)

    workflow.add_node("load", scene_loader_node)
    workflow.add_node("align", alignment_node)
    workflow.add_node("facts", facts_node)
    workflow.add_node("forge", forge_node)
    workflow.add_node("refine", refine_node)

    workflow.add_conditional_edges("load", route_after_load, {"align": "align", "facts": "facts", "end": END})
    workflow.add_conditional_edges("align", route_after_align, {"facts": "facts", "end": END})
    workflow.add_conditional_edges("facts", route_after_facts, {"forge": "forge", "end": END})
    workflow.add_conditional_edges("forge", route_after_forge, {"refine": "refine", "end": END})
    workflow.add_edge("refine", END)

    workflow.set_entry_point("load")

    return workflow.compile()


# Create the graph instance
scene_graph = create_scene_graph()


def run_scene_pipeline(
    scene: SceneConfig,
    config: PipelineConfig,
    stop_after: str = "refine",
    transport: Optional[Any] = None,
) -> dict:
    """
    Run the pipeline for one scene

    Args:
        scene: Scene inputs
        config: Run configuration
        stop_after: Last stage to run ("align", "facts", "forge" or "refine")
        transport: Chat transport for question refinement

    Returns:
        Final state dictionary

    Raises:
        EgoQAError: the first stage failure, tagged with its stage
    """
    if stop_after not in STAGES:
        raise ValueError(f"stop_after must be one of {STAGES}")

    print("\n" + "="*80)
    print(f"STARTING SCENE PIPELINE: {scene.scene_id}")
    print(f"Stages: load -> {stop_after}")
    print("="*80)

    initial_state: ScenePipelineState = {
        "scene": scene,
        "config": config,
        "stop_after": stop_after,
        "transport": transport,
        "error": None,
        "errors": [],
        "warnings": [],
    }

    final_state = scene_graph.invoke(initial_state)

    print("\n" + "="*80)
    print(f"SCENE PIPELINE COMPLETED: {scene.scene_id}")
    print("="*80)

    print_summary(final_state)

    if final_state.get("error") is not None:
        raise final_state["error"]
    return final_state


def print_summary(state: dict):
    """
    Print a summary of one scene's run

    Args:
        state: Final state dictionary
    """
    scene = state.get("scene")
    print("\n📊 SCENE SUMMARY:")
    print(f"  - Scene: {scene.scene_id if scene else 'N/A'}")
    alignment = state.get("alignment")
    if alignment is not None:
        print(f"  - Tilt corrected: {alignment.angle_deg:.3f} degrees")
    if "facts" in state:
        print(f"  - Facts: {len(state['facts'])}")
    if "items" in state:
        print(f"  - QA items: {len(state['items'])}")
    if state.get("refined_count"):
        print(f"  - Refined questions: {state['refined_count']}")

    errors = state.get("errors", [])
    warnings = state.get("warnings", [])

    if errors:
        print(f"\n❌ Errors ({len(errors)}):")
        for error in errors:
            print(f"   - {error}")

    if warnings:
        print(f"\n⚠️  Warnings ({len(warnings)}):")
        for warning in warnings:
            print(f"   - {warning}")
