"""File formats: GVPC1 point frames, pose lists, GVL layers, key-value config.

GVPC1 frame
    5-byte magic ``GVPC1``, little-endian uint32 point count, then
    count x 3 little-endian float32 (x, y, z) in the sensor frame.

Pose file
    Text, one line per frame: ``timestamp tx ty tz qx qy qz qw``.

GVL layer
    Text header lines ``GVOM-LAYER v1``, ``name <s>``, ``width <n>``,
    ``height <n>``, ``origin_x <f>``, ``origin_y <f>``, ``resolution <f>``,
    ``nodata <f>``, a blank line, then width*height little-endian float32
    values in row-major order (rows along y, x varying fastest).
"""

from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .grid import GridSpec
from .integrate import Pose, ScanFrame
from .layers import LayerGrid, LayerParams

FRAME_MAGIC = b"GVPC1"
LAYER_MAGIC = "GVOM-LAYER v1"


class FormatError(ValueError):
    """Malformed input file; message carries the path (and frame index if known)."""


# --------------------------------------------------------------------------
# point frames


def write_frame(path, points) -> None:
    pts = np.ascontiguousarray(np.asarray(points, dtype="<f4").reshape(-1, 3))
    with open(path, "wb") as fh:
        fh.write(FRAME_MAGIC)
        fh.write(struct.pack("<I", pts.shape[0]))
        fh.write(pts.tobytes())


def read_frame(path) -> np.ndarray:
    """Points of a GVPC1 file as an (n, 3) float32 array."""
    raw = Path(path).read_bytes()
    head = len(FRAME_MAGIC) + 4
    if len(raw) < head or raw[: len(FRAME_MAGIC)] != FRAME_MAGIC:
        raise FormatError(f"{path}: not a GVPC1 frame")
    (n,) = struct.unpack_from("<I", raw, len(FRAME_MAGIC))
    if len(raw) != head + 12 * n:
        raise FormatError(f"{path}: expected {n} points ({head + 12 * n} bytes), file has {len(raw)} bytes")
    return np.frombuffer(raw, dtype="<f4", offset=head).reshape(n, 3).copy()


def write_poses(path, poses: List[Tuple[float, Pose]]) -> None:
    from scipy.spatial.transform import Rotation

    lines = []
    for t, pose in poses:
        q = Rotation.from_matrix(pose.rotation).as_quat()
        vals = [t, *pose.translation, *q]
        lines.append(" ".join(repr(float(v)) for v in vals))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_poses(path) -> List[Tuple[float, Pose]]:
    out = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            vals = [float(v) for v in line.split()]
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
        if len(vals) != 8:
            raise FormatError(f"{path}:{lineno}: expected 8 values, got {len(vals)}")
        q = np.asarray(vals[4:])
        norm = np.linalg.norm(q)
        if not abs(norm - 1.0) < 1e-3:
            raise FormatError(f"{path}:{lineno}: quaternion is not unit length ({norm:.6f})")
        out.append((vals[0], Pose.from_quaternion(vals[1:4], q / norm)))
    return out


@dataclass
class SequenceDataset:
    """Directory of ``*.gvpc`` frames (sorted by name) plus ``poses.txt``."""

    directory: Path
    frame_paths: List[Path]
    poses: List[Tuple[float, Pose]]

    @classmethod
    def open(cls, directory) -> "SequenceDataset":
        directory = Path(directory)
        if not directory.is_dir():
            raise FileNotFoundError(f"dataset directory not found: {directory}")
        frames = sorted(directory.glob("*.gvpc"))
        pose_file = directory / "poses.txt"
        poses = read_poses(pose_file) if pose_file.exists() else []
        if len(poses) != len(frames):
            raise FormatError(f"{directory}: {len(frames)} frames but {len(poses)} poses")
        stamps = [t for t, _ in poses]
        if any(b <= a for a, b in zip(stamps, stamps[1:])):
            raise FormatError(f"{pose_file}: timestamps are not strictly increasing")
        return cls(directory, frames, poses)

    def __len__(self) -> int:
        return len(self.frame_paths)

    def frame(self, k: int) -> ScanFrame:
        try:
            pts = read_frame(self.frame_paths[k])
        except FormatError as exc:
            raise FormatError(f"frame {k}: {exc}") from exc
        t, pose = self.poses[k]
        return ScanFrame(points=pts, sensor_pose=pose, timestamp=t)


def write_dataset(directory, frames: List[ScanFrame]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for k, f in enumerate(frames):
        write_frame(directory / f"frame_{k:06d}.gvpc", f.points)
    write_poses(directory / "poses.txt", [(f.timestamp, f.sensor_pose) for f in frames])
    return directory


# --------------------------------------------------------------------------
# layers


def serialize_layer(layer: LayerGrid, path, name: str = None) -> Path:
    """Write ``layer`` as GVL.  Values are stored as float32."""
    path = Path(path)
    header = [
        LAYER_MAGIC,
        f"name {name or layer.name}",
        f"width {layer.width}",
        f"height {layer.height}",
        f"origin_x {float(layer.origin[0])!r}",
        f"origin_y {float(layer.origin[1])!r}",
        f"resolution {float(layer.resolution)!r}",
        "nodata nan",
        "",
        "",
    ]
    payload = np.ascontiguousarray(np.asarray(layer.values, dtype="<f4").T)
    try:
        with open(path, "wb") as fh:
            fh.write("\n".join(header).encode("ascii"))
            fh.write(payload.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write layer {path}: {exc}") from exc
    return path


def deserialize_layer(path) -> LayerGrid:
    raw = Path(path).read_bytes()
    sep = raw.find(b"\n\n")
    if sep < 0:
        raise FormatError(f"{path}: missing header terminator")
    lines = raw[:sep].decode("ascii").split("\n")
    if lines[0] != LAYER_MAGIC:
        raise FormatError(f"{path}: bad magic {lines[0]!r}")
    meta = {}
    for line in lines[1:]:
        key, _, val = line.partition(" ")
        meta[key] = val
    try:
        w = int(meta["width"])
        h = int(meta["height"])
        origin = (float(meta["origin_x"]), float(meta["origin_y"]))
        res = float(meta["resolution"])
        nodata = float(meta["nodata"])
        name = meta["name"]
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: bad header ({exc})") from exc
    body = raw[sep + 2:]
    if len(body) != 4 * w * h:
        raise FormatError(f"{path}: payload is {len(body)} bytes, expected {4 * w * h}")
    values = np.frombuffer(body, dtype="<f4").reshape(h, w).T.astype(np.float32)
    if not np.isnan(nodata):
        values = np.where(values == nodata, np.float32(np.nan), values)
    return LayerGrid(name, values, origin, res)


# --------------------------------------------------------------------------
# config


@dataclass
class PipelineConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    layers: LayerParams = field(default_factory=LayerParams)
    buffer_capacity: int = 8
    workers: int = 1
    output_dir: str = "output"

    def __post_init__(self):
        if self.buffer_capacity < 1:
            raise ValueError("buffer_capacity must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


_GRID_KEYS = {"dims_x", "dims_y", "dims_z", "resolution", "z_offset_fraction"}
_LAYER_FIELDS = {f.name: f.type for f in dataclasses.fields(LayerParams)}


def _convert(raw: str, like):
    if isinstance(like, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw


def parse_config(text: str, source: str = "<config>") -> PipelineConfig:
    """Flat ``key = value`` config; ``#`` starts a comment, unknown keys are errors."""
    grid = GridSpec()
    grid_kw = {
        "dims_x": grid.dims[0],
        "dims_y": grid.dims[1],
        "dims_z": grid.dims[2],
        "resolution": grid.resolution,
        "z_offset_fraction": grid.z_offset_fraction,
    }
    layer_kw = dataclasses.asdict(LayerParams())
    top = {"buffer_capacity": 8, "workers": 1, "output_dir": "output"}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = (s.strip() for s in line.partition("="))
        if not sep:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        try:
            if key in grid_kw:
                grid_kw[key] = _convert(val, grid_kw[key])
            elif key in layer_kw:
                layer_kw[key] = _convert(val, layer_kw[key])
            elif key in top:
                top[key] = _convert(val, top[key])
            else:
                raise ValueError(f"unknown key {key!r}")
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: {exc}") from exc
    return PipelineConfig(
        grid=GridSpec(
            dims=(grid_kw["dims_x"], grid_kw["dims_y"], grid_kw["dims_z"]),
            resolution=grid_kw["resolution"],
            z_offset_fraction=grid_kw["z_offset_fraction"],
        ),
        layers=LayerParams(**layer_kw),
        **top,
    )


def load_config(path) -> PipelineConfig:
    path = Path(path)
    return parse_config(path.read_text(), source=str(path))


def format_config(cfg: PipelineConfig) -> str:
    lines = [
        f"dims_x = {cfg.grid.dims[0]}",
        f"dims_y = {cfg.grid.dims[1]}",
        f"dims_z = {cfg.grid.dims[2]}",
        f"resolution = {cfg.grid.resolution!r}",
        f"z_offset_fraction = {cfg.grid.z_offset_fraction!r}",
    ]
    for k, v in dataclasses.asdict(cfg.layers).items():
        lines.append(f"{k} = {v!r}")
    lines += [
        f"buffer_capacity = {cfg.buffer_capacity}",
        f"workers = {cfg.workers}",
        f"output_dir = {cfg.output_dir}",
    ]
    return "\n".join(lines) + "\n"
