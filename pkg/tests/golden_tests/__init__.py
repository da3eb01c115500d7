"""
Golden scene sets for spatial fact enumeration

Each file under scenes/ describes one synthetic scene with hand-computed fact
values and per-kind fact counts.

Usage:
    pytest tests/golden_tests/test_golden_scenes.py
"""

from tests.golden_tests.test_golden_scenes import (
    GoldenSceneLoader,
    GoldenSceneValidator,
)

__all__ = [
    "GoldenSceneLoader",
    "GoldenSceneValidator",
]
