"""
Benchmark ability registry: 22 abilities in two categories (object cognition,
spatial cognition), each reported under one benchmark column.
"""
from dataclasses import dataclass
from typing import Dict, List

OBJECT_COGNITION = "object_cognition"
SPATIAL_COGNITION = "spatial_cognition"
CATEGORIES = (OBJECT_COGNITION, SPATIAL_COGNITION)


@dataclass(frozen=True)
class Ability:
    name: str
    category: str
    column: str
    title: str


_ABILITIES = [
    # Object properties
    Ability("obj_category", OBJECT_COGNITION, "properties", "Category"),
    Ability("obj_color", OBJECT_COGNITION, "properties", "Color"),
    Ability("obj_material", OBJECT_COGNITION, "properties", "Material"),
    Ability("obj_shape", OBJECT_COGNITION, "properties", "Shape"),
    Ability("obj_state", OBJECT_COGNITION, "properties", "State"),
    Ability("obj_position", OBJECT_COGNITION, "properties", "Position"),
    Ability("obj_function", OBJECT_COGNITION, "properties", "Function"),
    Ability("obj_surface_detail", OBJECT_COGNITION, "properties", "Surface Detail"),
    Ability("obj_size", OBJECT_COGNITION, "properties", "Size"),
    Ability("counting", OBJECT_COGNITION, "properties", "Counting"),
    # Referring object segmentation
    Ability("direct_referring_segmentation", OBJECT_COGNITION, "dr", "Direct Referring"),
    Ability("situational_referring_segmentation", OBJECT_COGNITION, "sr", "Situational Referring"),
    # Ego-centric: past / present / future
    Ability("trajectory_review", SPATIAL_COGNITION, "ego_his", "Trajectory Review"),
    Ability("ego_direction", SPATIAL_COGNITION, "ego_pres", "Egocentric Direction"),
    Ability("ego_distance", SPATIAL_COGNITION, "ego_pres", "Egocentric Distance"),
    Ability("movement_imagery", SPATIAL_COGNITION, "ego_fut", "Movement Imagery"),
    Ability("spatial_imagery", SPATIAL_COGNITION, "ego_fut", "Spatial Imagery"),
    # World-centric: size / distance / positional relation
    Ability("object_size", SPATIAL_COGNITION, "world_size", "Object Size"),
    Ability("object_height", SPATIAL_COGNITION, "world_size", "Object Height"),
    Ability("object_distance", SPATIAL_COGNITION, "world_dis", "Object Distance"),
    Ability("absolute_position", SPATIAL_COGNITION, "world_pr", "Absolute Position"),
    Ability("relative_position", SPATIAL_COGNITION, "world_pr", "Relative Position"),
]

ABILITIES: Dict[str, Ability] = {a.name: a for a in _ABILITIES}

COLUMNS = (
    "properties", "dr", "sr",
    "ego_his", "ego_pres", "ego_fut",
    "world_size", "world_dis", "world_pr",
)


def get_ability(name: str) -> Ability:
    try:
        return ABILITIES[name]
    except KeyError:
        raise ValueError(f"Unknown ability: {name}") from None


def abilities_in(category: str) -> List[Ability]:
    return [a for a in _ABILITIES if a.category == category]


def abilities_in_column(column: str) -> List[Ability]:
    return [a for a in _ABILITIES if a.column == column]


# Keyword routing for free-form object comprehension questions. First match wins.
_PROPERTY_KEYWORDS = (
    ("counting", ("how many", "number of")),
    ("obj_color", ("color", "colour")),
    ("obj_material", ("material", "made of")),
    ("obj_shape", ("shape",)),
    ("obj_size", ("size", "how big", "how large", "dimension")),
    ("obj_state", ("state", "condition", "open", "closed", "turned on", "turned off")),
    ("obj_position", ("where", "located", "position", "next to", "beside")),
    ("obj_function", ("function", "used for", "purpose", "use ")),
    ("obj_surface_detail", ("surface", "texture", "pattern", "logo", "text on")),
)


def property_ability(question: str) -> str:
    """Object-property ability a comprehension question asks about; category by default"""
    q = question.lower()
    for ability, keywords in _PROPERTY_KEYWORDS:
        if any(k in q for k in keywords):
            return ability
    return "obj_category"
