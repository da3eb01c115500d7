"""
State definition for the LangGraph scene pipeline
"""
from typing import Any, Dict, List, Optional, TypedDict

from egoqa.config import PipelineConfig, SceneConfig
from egoqa.errors import EgoQAError
from egoqa.tools.fusion import Track
from egoqa.tools.geometry import CameraTrajectory, PointCloud
from egoqa.tools.qa_forge import QaItem, RefEntry
from egoqa.tools.ransac import AlignResult
from egoqa.tools.spatial_facts import SceneGeometry, SpatialFact


class ScenePipelineState(TypedDict, total=False):
    """
    State that flows through the scene pipeline.

    Each node reads from and writes to this state dictionary.
    Fields are optional (total=False) to allow incremental updates.
    """

    # ============================================================================
    # Input
    # ============================================================================
    scene: SceneConfig  # The clip being processed
    config: PipelineConfig  # Run configuration (policies, seed, forge options)
    stop_after: str  # Last node to run: "align", "facts", "forge" or "refine"
    transport: Any  # Chat transport used by the refine node

    # ============================================================================
    # Loader Outputs
    # ============================================================================
    cloud: PointCloud  # Instance-labelled point cloud (aligned after the align node)
    trajectory: CameraTrajectory  # Camera poses (aligned after the align node)
    tracks: List[Track]  # Fused instance tracks, before the per-category cap
    refs: Dict[int, RefEntry]  # Referring expressions by instance id

    # ============================================================================
    # Alignment Node Outputs
    # ============================================================================
    alignment: Optional[AlignResult]  # None when the scene was already gravity-aligned

    # ============================================================================
    # Facts Node Outputs
    # ============================================================================
    geometry: SceneGeometry  # Per-instance geometry of the kept instances
    facts: List[SpatialFact]  # Every fact defined for the scene

    # ============================================================================
    # Forge / Refine Outputs
    # ============================================================================
    items: List[QaItem]  # QA items before the dataset-level counting downsample
    refined_count: int  # Questions rewritten by the refine node

    # ============================================================================
    # Metadata
    # ============================================================================
    error: Optional[EgoQAError]  # First failure; routes the graph to END
    errors: List[str]  # Error messages
    warnings: List[str]  # Warning messages
