"""
Frequency balancing of a QA pool: per-class targets from a real-world class
frequency table, then seeded per-class sampling without replacement.
"""
import logging
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from egoqa.errors import ConfigError, DataError
from egoqa.tools.qa_forge import QaItem

logger = logging.getLogger(__name__)

DEFAULT_TAXONOMY = Path(__file__).parent.parent / "data" / "taxonomy.toml"
OTHER = "other"
SUM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Taxonomy:
    coarse: Dict[str, str]                    # key -> display name
    fine_to_coarse: Dict[str, str] = field(default_factory=dict)

    @property
    def fine(self) -> List[str]:
        return list(self.fine_to_coarse)

    def coarse_of(self, fine_class: Optional[str]) -> str:
        if not fine_class:
            return OTHER
        return self.fine_to_coarse.get(fine_class.strip().lower(), OTHER)

    def fine_label(self, fine_class: Optional[str]) -> str:
        """Class name as known to the taxonomy, or 'other'"""
        if not fine_class:
            return OTHER
        name = fine_class.strip().lower()
        return name if name in self.fine_to_coarse else OTHER


def load_taxonomy(path: Optional[Path] = None) -> Taxonomy:
    path = Path(path) if path is not None else DEFAULT_TAXONOMY
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"Cannot load taxonomy from {path}: {e}") from e

    coarse: Dict[str, str] = {}
    fine_to_coarse: Dict[str, str] = {}
    for key, block in raw.get("coarse", {}).items():
        coarse[key] = block.get("name", key)
        for name in block.get("fine", []):
            name = name.strip().lower()
            if name in fine_to_coarse:
                raise ConfigError(f"{path}: fine class '{name}' listed under both {fine_to_coarse[name]} and {key}")
            fine_to_coarse[name] = key
    if OTHER in fine_to_coarse:
        raise ConfigError(f"{path}: '{OTHER}' is reserved")
    return Taxonomy(coarse, fine_to_coarse)


@dataclass(frozen=True)
class FrequencyTable:
    frequencies: Dict[str, float]

    def __post_init__(self):
        if any(v < 0 or not math.isfinite(v) for v in self.frequencies.values()):
            raise DataError("Frequencies must be finite and non-negative")
        total = math.fsum(self.frequencies.values())
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise DataError(f"Frequencies sum to {total!r}, expected 1")

    @classmethod
    def normalized(cls, raw: Mapping[str, float]) -> "FrequencyTable":
        total = math.fsum(raw.values())
        if total <= 0:
            raise DataError("Frequency table has no mass")
        return cls({k: v / total for k, v in raw.items()})

    @classmethod
    def from_csv(cls, path: Path, normalize: bool = False) -> "FrequencyTable":
        """CSV with columns fine_class,frequency"""
        try:
            df = pd.read_csv(path)
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise DataError(f"Cannot read frequency table {path}: {e}") from e
        missing = {"fine_class", "frequency"} - set(df.columns)
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        names = df["fine_class"].astype(str).str.strip().str.lower()
        if names.duplicated().any():
            raise DataError(f"{path}: duplicate classes {sorted(set(names[names.duplicated()]))}")
        raw = dict(zip(names, df["frequency"].astype(float)))
        return cls.normalized(raw) if normalize else cls(raw)


def estimate_targets(freq: FrequencyTable, n: int) -> Dict[str, int]:
    """
    Largest-remainder apportionment of n over the frequency table. Equal
    remainders are broken by class name.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    names = sorted(freq.frequencies)
    exact = {k: freq.frequencies[k] * n for k in names}
    targets = {k: int(math.floor(v)) for k, v in exact.items()}
    leftover = n - sum(targets.values())
    order = sorted(names, key=lambda k: (-(exact[k] - targets[k]), k))
    for k in order[:leftover]:
        targets[k] += 1
    return targets


def item_class(item: QaItem, taxonomy: Optional[Taxonomy] = None) -> str:
    if taxonomy is not None:
        return taxonomy.fine_label(item.category)
    return (item.category or OTHER).strip().lower()


def stratified_sample(
    pool: Sequence[QaItem],
    targets: Mapping[str, int],
    rng: np.random.Generator,
    taxonomy: Optional[Taxonomy] = None,
) -> Tuple[List[QaItem], Dict[str, Dict[str, int]]]:
    """
    Draw min(target, available) items per class without replacement.

    Returns:
        (sampled items in pool order, deficit report per class)
    """
    by_class: Dict[str, List[int]] = {}
    for idx, item in enumerate(pool):
        by_class.setdefault(item_class(item, taxonomy), []).append(idx)

    chosen: List[int] = []
    report: Dict[str, Dict[str, int]] = {}
    for name in sorted(targets):
        target = int(targets[name])
        available = by_class.get(name, [])
        take = min(target, len(available))
        if take:
            picks = rng.choice(len(available), size=take, replace=False)
            chosen.extend(available[int(p)] for p in picks)
        report[name] = {
            "target": target,
            "available": len(available),
            "sampled": take,
            "deficit": target - take,
        }
        if take < target:
            logger.warning(f"Class '{name}': target {target}, only {len(available)} available")

    ignored = sorted(set(by_class) - set(targets))
    if ignored:
        logger.info(f"{len(ignored)} pool classes have no target: {ignored[:10]}")

    chosen.sort()
    return [pool[i] for i in chosen], report


def total_deficit(report: Mapping[str, Mapping[str, int]]) -> int:
    return sum(entry["deficit"] for entry in report.values())


def realized_distribution(items: Sequence[QaItem], taxonomy: Optional[Taxonomy] = None) -> Dict[str, float]:
    if not items:
        return {}
    counts = pd.Series([item_class(i, taxonomy) for i in items]).value_counts()
    return {str(k): float(v) / len(items) for k, v in counts.sort_index().items()}
