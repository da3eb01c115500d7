"""
Configuration settings for the egoqa dataset toolkit
"""
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from egoqa.errors import ConfigError

# Load environment variables
load_dotenv()


class Config:
    """Main configuration class"""

    # ============================================================================
    # LLM Endpoint Configuration (OpenAI-compatible chat completions)
    # ============================================================================

    LLM_BASE_URL = os.getenv("EGOQA_LLM_BASE_URL", "https://openrouter.ai/api/v1")
    LLM_API_KEY = os.getenv("EGOQA_LLM_API_KEY")
    LLM_MODEL = os.getenv("EGOQA_LLM_MODEL", "openai/gpt-4o")
    LLM_TEMPERATURE = float(os.getenv("EGOQA_LLM_TEMPERATURE", "0.0"))
    LLM_MAX_TOKENS = int(os.getenv("EGOQA_LLM_MAX_TOKENS", "1024"))
    LLM_TIMEOUT_S = float(os.getenv("EGOQA_LLM_TIMEOUT_S", "60"))
    LLM_MAX_IN_FLIGHT = int(os.getenv("EGOQA_LLM_MAX_IN_FLIGHT", "4"))

    # Retry policy for transient transport failures
    RETRY_MAX_ATTEMPTS = 5
    RETRY_BASE_DELAY_S = 1.0
    RETRY_FACTOR = 2.0

    # ============================================================================
    # Geometry (RANSAC ground detection)
    # ============================================================================

    RANSAC_ITERATIONS_PER_PLANE = int(os.getenv("EGOQA_RANSAC_ITERATIONS", "512"))
    RANSAC_INLIER_THRESHOLD = float(os.getenv("EGOQA_RANSAC_THRESHOLD", "0.02"))
    RANSAC_MIN_INLIERS = int(os.getenv("EGOQA_RANSAC_MIN_INLIERS", "500"))
    RANSAC_MIN_INLIER_FRACTION = 0.01
    GROUND_MAX_PLANES = 10

    # ============================================================================
    # Spatial Facts (qualitative policy)
    # ============================================================================

    AABB_TRIM_PERCENTILES = (2.0, 98.0)
    MIN_POINTS_FOR_SIZE = 20
    VERTICAL_MARGIN_M = 0.05
    FOOTPRINT_EXPANSION_M = 0.10
    NOT_ALIGNED_GUARD_M = -0.5

    # ============================================================================
    # Instance Fusion
    # ============================================================================

    MERGE_IOU_THRESHOLD = 0.5
    REVERSE_WINDOW_S = 4.0
    CHUNK_SECONDS = 40.0
    MAX_INSTANCES_PER_CATEGORY = 2

    # ============================================================================
    # QA Forge
    # ============================================================================

    QUOTA_PER_ABILITY = int(os.getenv("EGOQA_QUOTA_PER_ABILITY", "3"))
    COMPARATIVE_MARGIN = 0.10
    CUE_FRAME_COUNT = 8
    CUE_AREA_WEIGHT = 1.0
    CUE_CENTER_WEIGHT = 0.5

    # ============================================================================
    # Evaluation
    # ============================================================================

    EVAL_SAMPLE_FPS = 1.0
    EVAL_MAX_FRAMES = 30
    BOUNDARY_TOLERANCE_FRACTION = 0.008

    # ============================================================================
    # Balancing
    # ============================================================================

    BALANCE_TARGET_SIZE = 10_000

    # ============================================================================
    # Validation
    # ============================================================================

    @classmethod
    def validate_live(cls) -> None:
        """Validate that live LLM calls can be made"""
        errors = []

        if not cls.LLM_API_KEY:
            errors.append("EGOQA_LLM_API_KEY is required for --live-llm")

        if not cls.LLM_BASE_URL:
            errors.append("EGOQA_LLM_BASE_URL is required for --live-llm")

        if errors:
            raise ConfigError(
                "Configuration validation failed:\n" + "\n".join(f"  - {err}" for err in errors),
                stage="config",
            )

    @classmethod
    def get_llm(cls, temperature: Optional[float] = None, max_tokens: Optional[int] = None):
        """
        Get the chat model behind the live transport.

        Args:
            temperature: Optional temperature override. Defaults to LLM_TEMPERATURE.
            max_tokens: Optional completion budget override. Defaults to LLM_MAX_TOKENS.

        Returns:
            ChatOpenAI instance bound to the configured endpoint
        """
        from langchain_openai import ChatOpenAI

        return ChatOpenAI(
            model=cls.LLM_MODEL,
            base_url=cls.LLM_BASE_URL,
            api_key=cls.LLM_API_KEY,
            temperature=temperature if temperature is not None else cls.LLM_TEMPERATURE,
            max_tokens=max_tokens if max_tokens is not None else cls.LLM_MAX_TOKENS,
            timeout=cls.LLM_TIMEOUT_S,
            max_retries=0,
        )

    @classmethod
    def get_llm_info(cls) -> dict:
        """Information about the configured LLM for display purposes"""
        return {
            "primary": {
                "endpoint": cls.LLM_BASE_URL,
                "model": cls.LLM_MODEL,
            }
        }


# ============================================================================
# Pipeline configuration file (TOML)
# ============================================================================

def _existing(path: Optional[Path], field: str) -> Optional[Path]:
    if path is not None and not Path(path).exists():
        raise ValueError(f"{field}: file not found: {path}")
    return path


class SceneConfig(BaseModel):
    """One egocentric clip with its reconstruction byproducts"""

    scene_id: str
    cloud: Optional[Path] = None
    trajectory: Optional[Path] = None
    intrinsics: Optional[Path] = None
    masks: Optional[Path] = None
    refs: Optional[Path] = None
    detections: Optional[Path] = None
    tracker_frames: Optional[Path] = None
    frames_dir: Optional[Path] = None
    frame_pattern: str = "{frame:06d}.jpg"
    fps: float = 30.0
    total_frames: Optional[int] = None
    aligned: bool = False

    @model_validator(mode="after")
    def _check_files(self) -> "SceneConfig":
        for name in ("cloud", "trajectory", "intrinsics", "masks", "refs", "detections",
                     "tracker_frames", "frames_dir"):
            _existing(getattr(self, name), f"scenes[{self.scene_id}].{name}")
        return self


class RansacConfig(BaseModel):
    iterations_per_plane: int = Field(default_factory=lambda: Config.RANSAC_ITERATIONS_PER_PLANE, ge=1)
    inlier_threshold: float = Field(default_factory=lambda: Config.RANSAC_INLIER_THRESHOLD, gt=0)
    min_inliers: int = Field(default_factory=lambda: Config.RANSAC_MIN_INLIERS, ge=3)
    min_inlier_fraction: float = Field(default_factory=lambda: Config.RANSAC_MIN_INLIER_FRACTION, ge=0)
    max_planes: int = Field(default_factory=lambda: Config.GROUND_MAX_PLANES, ge=1)


class PolicyConfig(BaseModel):
    vertical_margin: float = Field(default_factory=lambda: Config.VERTICAL_MARGIN_M)
    footprint_expansion: float = Field(default_factory=lambda: Config.FOOTPRINT_EXPANSION_M)


class FusionConfig(BaseModel):
    iou_threshold: float = Field(default_factory=lambda: Config.MERGE_IOU_THRESHOLD, gt=0, le=1)
    reverse_window_s: float = Field(default_factory=lambda: Config.REVERSE_WINDOW_S, gt=0)
    chunk_seconds: float = Field(default_factory=lambda: Config.CHUNK_SECONDS, gt=0)


class ForgeConfig(BaseModel):
    quota_per_ability: int = Field(default_factory=lambda: Config.QUOTA_PER_ABILITY, ge=0)
    comparative_margin: float = Field(default_factory=lambda: Config.COMPARATIVE_MARGIN, ge=0)
    max_per_category: int = Field(default_factory=lambda: Config.MAX_INSTANCES_PER_CATEGORY, ge=1)
    templates: Optional[Path] = None
    refine_questions: bool = False

    @field_validator("templates")
    @classmethod
    def _templates_exist(cls, v):
        return _existing(v, "forge.templates")


class BalanceConfig(BaseModel):
    pool: Optional[Path] = None
    taxonomy: Optional[Path] = None
    frequency_table: Optional[Path] = None
    normalize_frequencies: bool = False
    target_size: int = Field(default_factory=lambda: Config.BALANCE_TARGET_SIZE, ge=0)

    @model_validator(mode="after")
    def _check_files(self) -> "BalanceConfig":
        for name in ("pool", "taxonomy", "frequency_table"):
            _existing(getattr(self, name), f"balance.{name}")
        return self


class ScoreConfig(BaseModel):
    items: Optional[Path] = None
    predictions: Optional[Path] = None
    max_in_flight: int = Field(default_factory=lambda: Config.LLM_MAX_IN_FLIGHT, ge=1)
    boundary_tolerance: float = Field(default_factory=lambda: Config.BOUNDARY_TOLERANCE_FRACTION, gt=0)

    @model_validator(mode="after")
    def _check_files(self) -> "ScoreConfig":
        for name in ("items", "predictions"):
            _existing(getattr(self, name), f"score.{name}")
        return self


class LLMConfig(BaseModel):
    fixtures: Optional[Path] = None
    record_fixtures: Optional[Path] = None

    @field_validator("fixtures")
    @classmethod
    def _fixtures_exist(cls, v):
        return _existing(v, "llm.fixtures")


class PipelineConfig(BaseModel):
    """Everything one CLI invocation needs; loaded from a TOML file"""

    seed: int = Field(default=0, ge=0, lt=2**64)
    jobs: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)
    live_llm: bool = False
    output_dir: Path = Path("output")
    scenes: List[SceneConfig] = Field(default_factory=list)
    ransac: RansacConfig = Field(default_factory=RansacConfig)
    policy: PolicyConfig = Field(default_factory=PolicyConfig)
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    forge: ForgeConfig = Field(default_factory=ForgeConfig)
    balance: BalanceConfig = Field(default_factory=BalanceConfig)
    score: ScoreConfig = Field(default_factory=ScoreConfig)
    llm: LLMConfig = Field(default_factory=LLMConfig)

    @classmethod
    def load(cls, path: Path) -> "PipelineConfig":
        """
        Load a pipeline config file. Relative paths inside the file resolve
        against the file's own directory.

        Raises:
            ConfigError: file missing, unparsable, or referencing missing inputs
        """
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}", stage="config")
        try:
            raw = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"Invalid TOML in {path}: {e}", stage="config") from e
        return cls.from_mapping(_resolve_paths(raw, path.parent))

    @classmethod
    def from_mapping(cls, raw: dict) -> "PipelineConfig":
        try:
            return cls.model_validate(raw)
        except ValidationError as e:
            raise ConfigError(f"Invalid pipeline config:\n{e}", stage="config") from e


_PATH_KEYS = {
    "cloud", "trajectory", "intrinsics", "masks", "refs", "detections", "tracker_frames",
    "frames_dir", "templates", "pool", "taxonomy", "frequency_table", "items", "predictions",
    "fixtures", "record_fixtures", "output_dir",
}


def _resolve_paths(node, base: Path):
    if isinstance(node, dict):
        return {
            k: (str(base / v) if k in _PATH_KEYS and isinstance(v, str) and not Path(v).is_absolute()
                else _resolve_paths(v, base))
            for k, v in node.items()
        }
    if isinstance(node, list):
        return [_resolve_paths(v, base) for v in node]
    return node
