"""
Question refinement node
"""
import logging
from typing import Any, Dict, List

from egoqa.errors import TransportError
from egoqa.state import ScenePipelineState
from egoqa.tools.llm_gateway import PromptKind, build_prompt, chat_many
from egoqa.tools.qa_forge import QaItem

logger = logging.getLogger(__name__)


def accept_rewrite(item: QaItem, rewrite: str) -> bool:
    """A rewrite is kept only when it still quotes every slot fill verbatim"""
    text = rewrite.strip()
    if not text or "\n" in text:
        return False
    return all(fill in text for fill in item.provenance.get("slot_fills", []))


def refine_node(state: ScenePipelineState) -> Dict[str, Any]:
    """
    Refine node: rephrase template questions through the chat gateway

    Items keep their template question in provenance. Rewrites that drop an
    object reference, and transport failures, leave the question unchanged.

    Args:
        state: Current pipeline state

    Returns:
        Partial state update with refined items
    """
    print("\n" + "="*80)
    print("REFINE NODE")
    print("="*80)

    items: List[QaItem] = state.get("items", [])
    targets = [i for i, item in enumerate(items) if item.answer_kind != "segmentation"]
    requests = [
        build_prompt(
            PromptKind.REFINE_QUESTION,
            question=items[i].question,
            keep=items[i].provenance.get("slot_fills", []),
        )
        for i in targets
    ]
    responses = chat_many(requests, state["transport"], state["config"].score.max_in_flight)

    refined = list(items)
    warnings = list(state.get("warnings", []))
    changed = 0
    for idx, response in zip(targets, responses):
        item = items[idx]
        if isinstance(response, TransportError):
            warnings.append(f"Refine skipped for {item.id}: {response}")
            continue
        if not accept_rewrite(item, response):
            logger.warning(f"Rejected rewrite for {item.id}: {response!r}")
            continue
        refined[idx] = QaItem.from_json({**item.to_json(), "question": response.strip()})
        changed += 1

    print(f"✓ Refined {changed} of {len(targets)} questions")
    return {"items": refined, "refined_count": changed, "warnings": warnings}
