"""
LangGraph node functions
"""
from .scene_loader import scene_loader_node
from .alignment import alignment_node
from .facts import facts_node
from .forge import forge_node
from .refine import refine_node

__all__ = [
    "scene_loader_node",
    "alignment_node",
    "facts_node",
    "forge_node",
    "refine_node",
]
