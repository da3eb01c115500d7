"""
Cue frames for object-level prompting: eight frames per instance, one from each
of eight equal time spans between its first and last sighting, picked for size and
centrality. The first four are rendered as mask crops, the last four as box highlights.
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from PIL import Image, ImageDraw

from egoqa.config import Config
from egoqa.errors import MissingInput, TooShortTrack
from egoqa.tools.fusion import Track
from egoqa.tools.rle import Rle, bbox, centroid, decode

logger = logging.getLogger(__name__)

MODE_CROP = "crop"
MODE_HIGHLIGHT = "highlight"
HIGHLIGHT_COLOR = (255, 0, 0)
DIM_FACTOR = 0.35


@dataclass(frozen=True)
class CueFrameSet:
    instance_id: int
    frames: Tuple[int, ...]
    modes: Tuple[str, ...]

    @property
    def crop_frames(self) -> Tuple[int, ...]:
        return tuple(f for f, m in zip(self.frames, self.modes) if m == MODE_CROP)

    @property
    def highlight_frames(self) -> Tuple[int, ...]:
        return tuple(f for f, m in zip(self.frames, self.modes) if m == MODE_HIGHLIGHT)


def cue_score(
    mask: Rle,
    frame_dims: Tuple[int, int],
    area_weight: float = Config.CUE_AREA_WEIGHT,
    center_weight: float = Config.CUE_CENTER_WEIGHT,
) -> float:
    """area_weight·area_fraction − center_weight·(centroid offset / half diagonal)"""
    h, w = frame_dims
    center = centroid(mask)
    if center is None:
        return -math.inf
    half_diag = math.hypot(w, h) / 2.0
    offset = math.hypot(center[0] - (w - 1) / 2.0, center[1] - (h - 1) / 2.0)
    return area_weight * mask.area / float(h * w) - center_weight * offset / half_diag


def select_cue_frames(
    track: Track,
    frame_dims: Tuple[int, int],
    count: int = Config.CUE_FRAME_COUNT,
    area_weight: float = Config.CUE_AREA_WEIGHT,
    center_weight: float = Config.CUE_CENTER_WEIGHT,
) -> CueFrameSet:
    """
    Raises:
        TooShortTrack: track has fewer than `count` frames
    """
    indices = track.frame_indices
    if len(indices) < count:
        raise TooShortTrack(f"Track {track.instance_id} spans {len(indices)} frames, need {count}")

    frames = np.asarray(indices)
    first, last = int(frames[0]), int(frames[-1])
    span = (last - first) / float(count)
    slots = np.minimum(((frames - first) / span).astype(int), count - 1)

    def score(f) -> float:
        return cue_score(track.frames[int(f)], frame_dims, area_weight, center_weight)

    picked = {}
    for slot in range(count):
        group = frames[slots == slot]
        if len(group):
            picked[slot] = int(group[int(np.argmax([score(f) for f in group]))])

    # Time spans the object was out of view borrow the nearest unused frame
    empty = [slot for slot in range(count) if slot not in picked]
    for slot in empty:
        middle = first + (slot + 0.5) * span
        unused = [int(f) for f in frames if int(f) not in picked.values()]
        picked[slot] = min(unused, key=lambda f: (abs(f - middle), -score(f)))
    if empty:
        logger.debug(f"Track {track.instance_id}: {len(empty)} time spans had no visible frame")

    chosen = tuple(sorted(picked.values()))
    half = count // 2
    modes = tuple([MODE_CROP] * half + [MODE_HIGHLIGHT] * (count - half))
    return CueFrameSet(track.instance_id, chosen, modes)


# ============================================================================
# Rendering
# ============================================================================

def frame_path(frames_dir: Path, pattern: str, frame_index: int) -> Path:
    return Path(frames_dir) / pattern.format(frame=frame_index)


def _load_frame(path: Path, size: Tuple[int, int]) -> np.ndarray:
    if not path.exists():
        raise MissingInput(f"Frame image not found: {path}")
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"))
    if arr.shape[:2] != tuple(size):
        raise MissingInput(f"Frame {path} is {arr.shape[1]}x{arr.shape[0]}, mask is {size[1]}x{size[0]}")
    return arr


def render_crop(frame: np.ndarray, mask: Rle) -> Image.Image:
    """Bounding-box crop with everything outside the mask blacked out"""
    box = bbox(mask)
    if box is None:
        raise MissingInput("Cannot crop an empty mask")
    x0, y0, x1, y1 = box
    keep = decode(mask)
    out = np.where(keep[..., None], frame, 0).astype(np.uint8)
    return Image.fromarray(out[y0:y1 + 1, x0:x1 + 1])


def render_highlight(frame: np.ndarray, mask: Rle, width: int = 3) -> Image.Image:
    """Full frame, background dimmed, red box around the instance"""
    box = bbox(mask)
    if box is None:
        raise MissingInput("Cannot highlight an empty mask")
    keep = decode(mask)
    dimmed = (frame.astype(np.float32) * DIM_FACTOR).astype(np.uint8)
    out = Image.fromarray(np.where(keep[..., None], frame, dimmed).astype(np.uint8))
    ImageDraw.Draw(out).rectangle(box, outline=HIGHLIGHT_COLOR, width=width)
    return out


def render_cue_images(
    cues: CueFrameSet,
    track: Track,
    frames_dir: Path,
    out_dir: Path,
    pattern: str = "{frame:06d}.jpg",
) -> List[Path]:
    """Write the 8 cue images (crops first) and return their paths in prompt order"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for frame, mode in zip(cues.frames, cues.modes):
        mask = track.frames[frame]
        image = _load_frame(frame_path(frames_dir, pattern, frame), mask.size)
        rendered = render_crop(image, mask) if mode == MODE_CROP else render_highlight(image, mask)
        path = out_dir / f"{cues.instance_id}_{mode}_{frame:06d}.png"
        rendered.save(path)
        paths.append(path)
    logger.info(f"Rendered {len(paths)} cue images for instance {cues.instance_id}")
    return paths


def frame_dims_of(track: Track) -> Optional[Tuple[int, int]]:
    for mask in track.frames.values():
        return tuple(mask.size)
    return None
