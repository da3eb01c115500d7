"""
Computational tools for the egoqa dataset toolkit
"""
from .rle import Rle, MaskRecord, encode, decode, mask_iou
from .geometry import Pose, Intrinsics, PointCloud, Plane, CameraTrajectory
from .ransac import RansacParams, detect_ground, gravity_align
from .fusion import Track, assemble_lifecycles, cap_per_category, segment_video
from .spatial_facts import FactBook, QualitativePolicy, SceneGeometry, SpatialFact
from .qa_forge import QaItem, forge_scene, counting_downsample
from .balance import FrequencyTable, estimate_targets, stratified_sample
from .metrics import mra, roa, global_j, boundary_f, jf_mean, sample_frames
from .scoring import LLMJudge, score_item, aggregate
from .llm_gateway import ChatRequest, PromptKind, build_prompt, chat, MockTransport

__all__ = [
    "Rle",
    "MaskRecord",
    "encode",
    "decode",
    "mask_iou",
    "Pose",
    "Intrinsics",
    "PointCloud",
    "Plane",
    "CameraTrajectory",
    "RansacParams",
    "detect_ground",
    "gravity_align",
    "Track",
    "assemble_lifecycles",
    "cap_per_category",
    "segment_video",
    "FactBook",
    "QualitativePolicy",
    "SceneGeometry",
    "SpatialFact",
    "QaItem",
    "forge_scene",
    "counting_downsample",
    "FrequencyTable",
    "estimate_targets",
    "stratified_sample",
    "mra",
    "roa",
    "global_j",
    "boundary_f",
    "jf_mean",
    "sample_frames",
    "LLMJudge",
    "score_item",
    "aggregate",
    "ChatRequest",
    "PromptKind",
    "build_prompt",
    "chat",
    "MockTransport",
]
