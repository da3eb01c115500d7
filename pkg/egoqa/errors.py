"""
Exception hierarchy for the egoqa toolkit.

Every error carries the CLI exit code it maps to (0 ok / 1 usage / 2 data / 3 transport)
and an optional pipeline stage name so the CLI can say where things went wrong.
"""
from typing import Optional


class EgoQAError(Exception):
    """Base class for all toolkit errors"""

    exit_code: int = 2

    def __init__(self, message: str = "", stage: Optional[str] = None):
        super().__init__(message)
        self.stage = stage

    def with_stage(self, stage: str) -> "EgoQAError":
        if self.stage is None:
            self.stage = stage
        return self


class UsageError(EgoQAError):
    exit_code = 1


class ConfigError(UsageError):
    pass


class DataError(EgoQAError):
    exit_code = 2


class TransportError(EgoQAError):
    exit_code = 3


# ============================================================================
# geom-core
# ============================================================================

class DegenerateCloud(DataError):
    pass


class NoPlane(DataError):
    pass


class NoGround(DataError):
    pass


class OutOfBounds(DataError):
    pass


class NonPositiveDepth(DataError):
    pass


class DimensionMismatch(DataError):
    pass


# ============================================================================
# instance-fusion
# ============================================================================

class SizeMismatch(DataError):
    pass


class TrackerFailure(DataError):
    pass


# ============================================================================
# spatial-facts
# ============================================================================

class EmptyTrajectory(DataError):
    pass


class DegenerateBearing(DataError):
    pass


class NotAligned(DataError):
    pass


class TooFewPoints(DataError):
    pass


class Ambiguous(DataError):
    pass


# ============================================================================
# qa-forge
# ============================================================================

class TooShortTrack(DataError):
    pass


class MissingSlot(DataError):
    pass


class MissingReferringExpression(DataError):
    pass


# ============================================================================
# eval-metrics
# ============================================================================

class NonPositiveGroundTruth(DataError):
    pass


class NoForegroundFrames(DataError):
    pass


class KindMismatch(DataError):
    pass


# ============================================================================
# llm-gateway
# ============================================================================

class MissingInput(DataError):
    pass


class TransientTransportError(TransportError):
    """Retryable failure (connection reset, rate limit, timeout)"""


class Exhausted(TransportError):
    pass


class MalformedResponse(TransportError):
    pass


class FixtureMissing(TransportError):
    pass


class JudgeUnavailable(TransportError):
    pass
