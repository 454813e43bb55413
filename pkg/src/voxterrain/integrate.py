"""Scan integration: one lidar frame in, one voxel map out.

The frame is moved into the world frame, a counting pass builds the lookup
table and allocates data slots for occupied voxels, and a metrics pass traces
every ray to collect hits, misses and the lowest return height per voxel.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .grid import (
    COUNT_DTYPE,
    HEIGHT_DTYPE,
    LOOKUP_DTYPE,
    MAX_MISSES,
    GridSpec,
    MapOrigin,
    VoxelMap,
    snap_origin,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Pose:
    """Rigid transform taking sensor-frame points into the world frame."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    def validate(self, tol: float = 1e-6) -> None:
        r = self.rotation
        if not np.all(np.isfinite(r)) or not np.all(np.isfinite(self.translation)):
            raise ValueError("pose contains non-finite values")
        if np.abs(r @ r.T - np.eye(3)).max() > tol or abs(np.linalg.det(r) - 1.0) > tol:
            raise ValueError("pose rotation is not orthonormal with determinant +1")

    @classmethod
    def from_quaternion(cls, translation, quat_xyzw) -> "Pose":
        from scipy.spatial.transform import Rotation

        return cls(Rotation.from_quat(quat_xyzw).as_matrix(), translation)

    @classmethod
    def from_yaw(cls, translation, yaw: float) -> "Pose":
        c, s = np.cos(yaw), np.sin(yaw)
        return cls(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), translation)


@dataclass
class ScanFrame:
    points: np.ndarray
    sensor_pose: Pose
    timestamp: float = 0.0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)


@dataclass(frozen=True)
class Ray:
    start: np.ndarray
    end: np.ndarray


def transform_cloud(frame: ScanFrame):
    """World-frame points and the world sensor origin."""
    pose = frame.sensor_pose
    pose.validate()
    with np.errstate(invalid="ignore"):
        world = frame.points @ pose.rotation.T + pose.translation
    return world, pose.translation.copy()


def _local_cells(world: np.ndarray, spec: GridSpec, origin: MapOrigin) -> np.ndarray:
    g = np.ascontiguousarray(world / spec.resolution)
    lin = np.empty(g.shape[0], dtype=np.int64)
    _kernels.point_cells(g, np.asarray(origin.index, dtype=np.int64), np.asarray(spec.dims, dtype=np.int64), lin)
    return lin


def count_pass(world_points, spec: GridSpec, origin: MapOrigin) -> VoxelMap:
    """Lookup table with a data slot per voxel holding at least one point."""
    world = np.asarray(world_points, dtype=np.float64).reshape(-1, 3)
    lin = _local_cells(world, spec, origin)
    occupied = np.unique(lin[lin >= 0])
    k = occupied.size
    lookup = np.full(spec.n_cells, -1, dtype=LOOKUP_DTYPE)
    lookup[occupied] = np.arange(k, dtype=LOOKUP_DTYPE)
    return VoxelMap(
        spec=spec,
        origin=origin,
        lookup=lookup.reshape(spec.dims),
        hits=np.zeros(k, dtype=COUNT_DTYPE),
        misses=np.zeros(k, dtype=COUNT_DTYPE),
        min_height=np.full(k, np.inf, dtype=HEIGHT_DTYPE),
    )


def _accumulate_chunk(g, z, sensor_g, lo, dims, lookup_flat, lin, n_slots, n_cells):
    hits = np.zeros(n_slots, dtype=np.int64)
    min_h = np.full(n_slots, np.inf)
    misses = np.zeros(n_cells, dtype=np.int64)
    _kernels.accumulate(g, z, sensor_g, lo, dims, lookup_flat, lin, hits, misses, min_h)
    return hits, misses, min_h


def metrics_pass(skeleton: VoxelMap, world_points, sensor_origin, workers: int = 1) -> VoxelMap:
    """Trace every ray and fill in hits, misses and minimum return heights.

    Rays are split into ``workers`` chunks, each accumulating privately; the
    chunk results are reduced with integer sums and mins, so the output does
    not depend on the worker count.
    """
    spec = skeleton.spec
    world = np.asarray(world_points, dtype=np.float64).reshape(-1, 3)
    g = np.ascontiguousarray(world / spec.resolution)
    sensor_g = np.asarray(sensor_origin, dtype=np.float64) / spec.resolution
    lo = np.asarray(skeleton.origin.index, dtype=np.int64)
    dims = np.asarray(spec.dims, dtype=np.int64)
    lookup_flat = skeleton.lookup.reshape(-1)
    lin = _local_cells(world, spec, skeleton.origin)
    n_slots = skeleton.n_occupied
    n_cells = spec.n_cells
    z = np.ascontiguousarray(world[:, 2])

    workers = max(1, int(workers))
    bounds = np.linspace(0, g.shape[0], workers + 1).astype(np.int64)
    chunks = [(bounds[i], bounds[i + 1]) for i in range(workers) if bounds[i + 1] > bounds[i]]

    def run(span):
        a, b = span
        return _accumulate_chunk(g[a:b], z[a:b], sensor_g, lo, dims, lookup_flat, lin[a:b], n_slots, n_cells)

    if len(chunks) <= 1:
        results = [run(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            results = list(pool.map(run, chunks))

    hits = np.zeros(n_slots, dtype=np.int64)
    min_h = np.full(n_slots, np.inf)
    misses = np.zeros(n_cells, dtype=np.int64)
    for h, m, mh in results:
        hits += h
        misses += m
        np.minimum(min_h, mh, out=min_h)

    np.minimum(misses, MAX_MISSES, out=misses)
    lookup = lookup_flat.copy()
    occ = lookup >= 0
    slot_misses = np.zeros(n_slots, dtype=np.int64)
    slot_misses[lookup[occ]] = misses[occ]
    lookup[~occ] = (-1 - misses[~occ]).astype(LOOKUP_DTYPE)

    return VoxelMap(
        spec=spec,
        origin=skeleton.origin,
        lookup=lookup.reshape(spec.dims),
        hits=np.minimum(hits, MAX_MISSES).astype(COUNT_DTYPE),
        misses=slot_misses.astype(COUNT_DTYPE),
        min_height=min_h.astype(HEIGHT_DTYPE),
        dropped_points=skeleton.dropped_points,
    )


def traverse_ray(ray: Ray, spec: GridSpec, origin: MapOrigin) -> np.ndarray:
    """Voxels crossed by ``ray`` inside the grid, in order, endpoint voxel excluded.

    Returns an ``(n, 3)`` int array of local voxel indices.
    """
    s = np.asarray(ray.start, dtype=np.float64) / spec.resolution
    e = np.asarray(ray.end, dtype=np.float64) / spec.resolution
    dims = np.asarray(spec.dims, dtype=np.int64)
    out = np.empty((int(dims.sum()) + 3, 3), dtype=np.int64)
    n = _kernels.walk_ray(s, e, np.asarray(origin.index, dtype=np.int64), dims, out)
    return out[:n].copy()


def integrate_scan(
    frame: ScanFrame,
    spec: GridSpec,
    workers: int = 1,
    origin: Optional[MapOrigin] = None,
) -> VoxelMap:
    """Snap an origin at the sensor, transform, count and trace one frame."""
    world, sensor = transform_cloud(frame)
    finite = np.all(np.isfinite(world), axis=1)
    dropped = int(world.shape[0] - finite.sum())
    if dropped:
        log.debug("dropping %d non-finite points", dropped)
        world = world[finite]
    if origin is None:
        origin = snap_origin(sensor, spec)
    skeleton = count_pass(world, spec, origin)
    skeleton.dropped_points = dropped
    return metrics_pass(skeleton, world, sensor, workers=workers)
