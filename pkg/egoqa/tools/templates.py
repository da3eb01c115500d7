"""
QA template registry loader
"""
import re
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from egoqa.errors import ConfigError
from egoqa.tools.abilities import ABILITIES

DEFAULT_TEMPLATES = Path(__file__).parent.parent / "data" / "spatial_templates.toml"

ANSWER_KINDS = ("numeric-scale", "numeric-angle", "closed-text", "open-text", "segmentation")
VARIANTS = ("quantitative", "qualitative")
SLOT_NAMES = ("A", "B", "C")
SLOT_SOURCES = ("ref", "category", "situational_ref")

_SLOT_RE = re.compile(r"\[([A-Z])\]")


@dataclass(frozen=True)
class Template:
    id: str
    ability: str
    answer_kind: str
    variant: str
    fact: str
    slots: int
    phrasings: Tuple[str, ...]
    turn: float = 0.0
    slot_source: str = "ref"

    def render(self, phrasing_index: int, fills: List[str]) -> str:
        text = self.phrasings[phrasing_index]
        for name, value in zip(SLOT_NAMES, fills):
            text = text.replace(f"[{name}]", value)
        return text

    @property
    def group(self) -> Tuple[str, str]:
        return self.ability, self.variant


def validate_template(t: Template) -> None:
    if t.ability not in ABILITIES:
        raise ConfigError(f"Template {t.id}: unknown ability {t.ability}")
    if t.answer_kind not in ANSWER_KINDS:
        raise ConfigError(f"Template {t.id}: unknown answer_kind {t.answer_kind}")
    if t.variant not in VARIANTS:
        raise ConfigError(f"Template {t.id}: unknown variant {t.variant}")
    if t.slot_source not in SLOT_SOURCES:
        raise ConfigError(f"Template {t.id}: unknown slot_source {t.slot_source}")
    if not 0 <= t.slots <= len(SLOT_NAMES):
        raise ConfigError(f"Template {t.id}: slots must be 0..{len(SLOT_NAMES)}")
    if len(t.phrasings) < 3:
        raise ConfigError(f"Template {t.id}: needs at least 3 phrasings, has {len(t.phrasings)}")
    required = set(SLOT_NAMES[:t.slots])
    for i, phrasing in enumerate(t.phrasings):
        found = set(_SLOT_RE.findall(phrasing))
        if found != required:
            raise ConfigError(
                f"Template {t.id} phrasing {i}: slots {sorted(found)} != required {sorted(required)}"
            )


class TemplateRegistry:
    def __init__(self, templates: List[Template]):
        ids = [t.id for t in templates]
        duplicates = {i for i in ids if ids.count(i) > 1}
        if duplicates:
            raise ConfigError(f"Duplicate template ids: {sorted(duplicates)}")
        for t in templates:
            validate_template(t)
        self.templates = templates

    def __iter__(self):
        return iter(self.templates)

    def __len__(self) -> int:
        return len(self.templates)

    def get(self, template_id: str) -> Template:
        for t in self.templates:
            if t.id == template_id:
                return t
        raise KeyError(template_id)

    def groups(self) -> Dict[Tuple[str, str], List[Template]]:
        """(ability, variant) -> templates, in file order"""
        grouped: Dict[Tuple[str, str], List[Template]] = {}
        for t in self.templates:
            grouped.setdefault(t.group, []).append(t)
        return grouped


def load_templates(path: Optional[Path] = None) -> TemplateRegistry:
    path = Path(path) if path is not None else DEFAULT_TEMPLATES
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"Cannot load templates from {path}: {e}") from e

    templates = []
    for block in raw.get("template", []):
        try:
            templates.append(Template(
                id=block["id"],
                ability=block["ability"],
                answer_kind=block["answer_kind"],
                variant=block["variant"],
                fact=block["fact"],
                slots=int(block["slots"]),
                phrasings=tuple(block["phrasings"]),
                turn=float(block.get("turn", 0.0)),
                slot_source=block.get("slot_source", "ref"),
            ))
        except KeyError as e:
            raise ConfigError(f"{path}: template block missing field {e}") from e
    return TemplateRegistry(templates)
