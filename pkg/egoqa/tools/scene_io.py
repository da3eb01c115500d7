"""
Readers and writers for reconstruction byproducts: PLY point clouds, camera
trajectory CSVs, intrinsics sidecars and the alignment report.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from egoqa.errors import DataError
from egoqa.tools.geometry import CameraTrajectory, Intrinsics, PointCloud, Pose

logger = logging.getLogger(__name__)

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

TRAJECTORY_COLUMNS = ["frame", "timestamp_s", "tx", "ty", "tz", "qx", "qy", "qz", "qw"]
INTRINSICS_COLUMNS = ["fx", "fy", "cx", "cy", "width", "height"]


# ============================================================================
# PLY
# ============================================================================

def _parse_ply_header(raw: bytes, path: Path) -> Tuple[str, int, List[Tuple[str, str]], int]:
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise DataError(f"{path}: not a PLY file")
    body_start = raw.index(b"\n", end) + 1
    header = raw[:end].decode("ascii", errors="replace").splitlines()

    fmt = None
    vertex_count = None
    properties: List[Tuple[str, str]] = []
    current = None
    for line in header:
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            current = tokens[1]
            if current == "vertex":
                vertex_count = int(tokens[2])
        elif tokens[0] == "property" and current == "vertex":
            if tokens[1] == "list":
                raise DataError(f"{path}: list properties on vertices are not supported")
            if tokens[1] not in _PLY_TYPES:
                raise DataError(f"{path}: unknown PLY type {tokens[1]}")
            properties.append((tokens[2], tokens[1]))

    if fmt not in ("ascii", "binary_little_endian"):
        raise DataError(f"{path}: unsupported PLY format {fmt}")
    if vertex_count is None:
        raise DataError(f"{path}: no vertex element")
    return fmt, vertex_count, properties, body_start


def read_ply(path: Path) -> PointCloud:
    """Read x/y/z with optional red/green/blue and instance_id"""
    path = Path(path)
    raw = path.read_bytes()
    fmt, count, properties, body_start = _parse_ply_header(raw, path)
    names = [name for name, _ in properties]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise DataError(f"{path}: missing vertex property {axis}")

    dtype = np.dtype([(name, "<" + _PLY_TYPES[kind]) for name, kind in properties])
    if fmt == "ascii":
        text = raw[body_start:].decode("ascii").split("\n")
        rows = [line.split() for line in text if line.strip()][:count]
        if len(rows) < count:
            raise DataError(f"{path}: expected {count} vertices, found {len(rows)}")
        table = np.array(rows, dtype=np.float64).reshape(count, len(properties))
        data = {name: table[:, i] for i, name in enumerate(names)}
    else:
        needed = dtype.itemsize * count
        if len(raw) - body_start < needed:
            raise DataError(f"{path}: truncated binary body")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=body_start)
        data = {name: arr[name] for name in names}

    points = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
    colors = None
    if all(c in data for c in ("red", "green", "blue")):
        colors = np.stack([data["red"], data["green"], data["blue"]], axis=1).astype(np.uint8)
    labels = data["instance_id"].astype(np.int32) if "instance_id" in data else None

    logger.info(f"Read {count} points from {path.name} ({fmt})")
    return PointCloud(points, labels=labels, colors=colors)


def write_ply(path: Path, cloud: PointCloud, binary: bool = True) -> None:
    fields = [("x", "<f4", "float"), ("y", "<f4", "float"), ("z", "<f4", "float")]
    if cloud.colors is not None:
        fields += [("red", "u1", "uchar"), ("green", "u1", "uchar"), ("blue", "u1", "uchar")]
    if cloud.labels is not None:
        fields.append(("instance_id", "<i4", "int"))

    n = len(cloud)
    arr = np.zeros(n, dtype=[(name, kind) for name, kind, _ in fields])
    arr["x"], arr["y"], arr["z"] = cloud.points[:, 0], cloud.points[:, 1], cloud.points[:, 2]
    if cloud.colors is not None:
        arr["red"], arr["green"], arr["blue"] = cloud.colors[:, 0], cloud.colors[:, 1], cloud.colors[:, 2]
    if cloud.labels is not None:
        arr["instance_id"] = cloud.labels

    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0", f"element vertex {n}"]
    header += [f"property {ply} {name}" for name, _, ply in fields]
    header.append("end_header")

    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            f.write(arr.tobytes())
        else:
            for row in arr:
                f.write((" ".join(str(v) for v in row.tolist()) + "\n").encode("ascii"))


# ============================================================================
# Trajectory / intrinsics
# ============================================================================

def _read_csv(path: Path, columns: List[str]) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"{path}: unreadable CSV: {e}") from e
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    return df


def read_intrinsics(path: Path) -> Intrinsics:
    df = _read_csv(Path(path), INTRINSICS_COLUMNS)
    if len(df) != 1:
        raise DataError(f"{path}: expected exactly one intrinsics row, got {len(df)}")
    row = df.iloc[0]
    return Intrinsics(
        fx=float(row["fx"]), fy=float(row["fy"]),
        cx=float(row["cx"]), cy=float(row["cy"]),
        width=int(row["width"]), height=int(row["height"]),
    )


def write_intrinsics(path: Path, intr: Intrinsics) -> None:
    pd.DataFrame([{c: getattr(intr, c) for c in INTRINSICS_COLUMNS}]).to_csv(path, index=False)


def read_trajectory(path: Path, intrinsics: Optional[Intrinsics] = None) -> CameraTrajectory:
    df = _read_csv(Path(path), TRAJECTORY_COLUMNS)
    poses = [
        Pose(
            rotation=np.array([r.qx, r.qy, r.qz, r.qw], dtype=np.float64),
            translation=np.array([r.tx, r.ty, r.tz], dtype=np.float64),
            timestamp=float(r.timestamp_s),
            frame_index=int(r.frame),
        )
        for r in df.itertuples(index=False)
    ]
    return CameraTrajectory(poses, intrinsics)


def write_trajectory(path: Path, traj: CameraTrajectory) -> None:
    rows = []
    for pose in traj.poses:
        rows.append({
            "frame": pose.frame_index,
            "timestamp_s": pose.timestamp,
            "tx": pose.translation[0], "ty": pose.translation[1], "tz": pose.translation[2],
            "qx": pose.rotation[0], "qy": pose.rotation[1], "qz": pose.rotation[2], "qw": pose.rotation[3],
        })
    pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS).to_csv(path, index=False, float_format="%.12g")


# ============================================================================
# Reports
# ============================================================================

def write_json(path: Path, payload: Dict[str, Any]) -> None:
    """Stable JSON: sorted keys, two-space indent, trailing newline"""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path: Path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON: {e}") from e


def write_jsonl(path: Path, records) -> int:
    count = 0
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
            count += 1
    return count


def read_jsonl(path: Path) -> List[Dict[str, Any]]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{line_no}: invalid JSON: {e}") from e
    return records
