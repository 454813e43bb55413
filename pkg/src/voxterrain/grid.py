"""Voxel map container: dense lookup table over a compact statistics array.

Every map covers a fixed block of ``dims`` voxels.  The lookup table holds, per
voxel, either an index into the data arrays (occupied voxel) or the encoded
miss count ``-1 - misses`` (empty voxel).  Origins are stored as integer voxel
indices so that any two maps with the same resolution share one global voxel
lattice; world coordinates are ``index * resolution``.

Index convention: arrays are indexed ``[ix, iy, iz]`` with z up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

LOOKUP_DTYPE = np.int32
COUNT_DTYPE = np.int32
HEIGHT_DTYPE = np.float64

#: Miss counts saturate here so ``-1 - misses`` always fits in int32.
MAX_MISSES = 2**30


@dataclass(frozen=True)
class GridSpec:
    """Shape and resolution of a voxel map.

    ``z_offset_fraction`` is the fraction of the z extent placed below the
    vehicle when snapping an origin (0.5 centres the vehicle vertically).
    """

    dims: Tuple[int, int, int] = (256, 256, 64)
    resolution: float = 0.4
    z_offset_fraction: float = 0.5

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"dims must be three positive integers, got {self.dims!r}")
        if not (self.resolution > 0 and math.isfinite(self.resolution)):
            raise ValueError(f"resolution must be positive, got {self.resolution!r}")
        if not 0.0 <= self.z_offset_fraction <= 1.0:
            raise ValueError("z_offset_fraction must lie in [0, 1]")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "resolution", float(self.resolution))

    @property
    def n_cells(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz


@dataclass(frozen=True)
class MapOrigin:
    """World position of voxel (0, 0, 0)'s minimum corner, kept on the lattice."""

    index: Tuple[int, int, int]
    resolution: float

    @property
    def world(self) -> np.ndarray:
        return np.asarray(self.index, dtype=np.float64) * self.resolution

    def offset_to(self, other: "MapOrigin") -> Tuple[int, int, int]:
        """Voxel offset that maps an index in ``self`` to the same voxel in ``other``."""
        return tuple(a - b for a, b in zip(self.index, other.index))


@dataclass(frozen=True)
class VoxelStats:
    hits: int
    misses: int
    min_return_height: float


@dataclass(frozen=True)
class Occupied:
    stats: VoxelStats


@dataclass(frozen=True)
class Empty:
    misses: int


@dataclass(eq=False)
class VoxelMap:
    """One scan's (or the fused) voxel grid.

    The data "array" is stored column-wise as three parallel arrays ``hits``,
    ``misses`` and ``min_height``, all of length ``n_occupied``.  Data indices
    are assigned in increasing linear lookup order, which makes maps built from
    the same evidence identical regardless of how they were computed.
    """

    spec: GridSpec
    origin: MapOrigin
    lookup: np.ndarray
    hits: np.ndarray
    misses: np.ndarray
    min_height: np.ndarray
    dropped_points: int = field(default=0, compare=False)

    @classmethod
    def empty(cls, spec: GridSpec, origin: MapOrigin) -> "VoxelMap":
        return cls(
            spec=spec,
            origin=origin,
            lookup=np.full(spec.dims, -1, dtype=LOOKUP_DTYPE),
            hits=np.zeros(0, dtype=COUNT_DTYPE),
            misses=np.zeros(0, dtype=COUNT_DTYPE),
            min_height=np.zeros(0, dtype=HEIGHT_DTYPE),
        )

    @property
    def n_occupied(self) -> int:
        return int(self.hits.shape[0])

    @property
    def resolution(self) -> float:
        return self.spec.resolution

    def equals(self, other: "VoxelMap") -> bool:
        """Field-for-field equality, with bit-equal heights."""
        return (
            self.spec == other.spec
            and self.origin == other.origin
            and np.array_equal(self.lookup, other.lookup)
            and np.array_equal(self.hits, other.hits)
            and np.array_equal(self.misses, other.misses)
            and self.min_height.tobytes() == other.min_height.tobytes()
        )

    def miss_grid(self) -> np.ndarray:
        """Dense per-voxel miss counts (occupied and empty voxels alike)."""
        out = decode_empty(np.minimum(self.lookup, -1)).astype(np.int64)
        occ = self.lookup >= 0
        out[occ] = self.misses[self.lookup[occ]]
        return out

    def check_invariants(self) -> None:
        """Raise AssertionError if the lookup/data encoding is inconsistent."""
        occ = self.lookup[self.lookup >= 0]
        k = self.n_occupied
        assert occ.size == k, "occupied cell count differs from data length"
        assert np.array_equal(np.sort(occ), np.arange(k)), "data indices are not a permutation"
        assert self.misses.shape == (k,) and self.min_height.shape == (k,)
        assert np.all(self.hits >= 1), "stored voxel with zero hits"
        assert self.lookup.shape == self.spec.dims


def snap_origin(vehicle_position, spec: GridSpec) -> MapOrigin:
    """Origin that centres the grid on the vehicle, rounded onto the lattice."""
    res = spec.resolution
    pos = np.asarray(vehicle_position, dtype=np.float64)
    nx, ny, nz = spec.dims
    below = (nx // 2, ny // 2, int(math.floor(nz * spec.z_offset_fraction)))
    index = tuple(int(np.round(pos[a] / res)) - below[a] for a in range(3))
    return MapOrigin(index=index, resolution=res)


def world_to_index(p, vmap: VoxelMap) -> Optional[Tuple[int, int, int]]:
    """Voxel index containing world point ``p``, or None when outside the grid."""
    p = np.asarray(p, dtype=np.float64)
    res = vmap.spec.resolution
    idx = tuple(int(math.floor(p[a] / res)) - vmap.origin.index[a] for a in range(3))
    if all(0 <= idx[a] < vmap.spec.dims[a] for a in range(3)):
        return idx
    return None


def voxel_bounds(idx, vmap: VoxelMap) -> Tuple[np.ndarray, np.ndarray]:
    """World AABB (min corner, max corner) of voxel ``idx``."""
    res = vmap.spec.resolution
    g = np.asarray(idx, dtype=np.float64) + np.asarray(vmap.origin.index, dtype=np.float64)
    return g * res, (g + 1.0) * res


def query(vmap: VoxelMap, idx) -> Union[Occupied, Empty]:
    ix, iy, iz = (int(i) for i in idx)
    if not all(0 <= i < d for i, d in zip((ix, iy, iz), vmap.spec.dims)):
        raise IndexError(f"voxel index {tuple(idx)} outside grid {vmap.spec.dims}")
    v = int(vmap.lookup[ix, iy, iz])
    if v >= 0:
        return Occupied(
            VoxelStats(
                hits=int(vmap.hits[v]),
                misses=int(vmap.misses[v]),
                min_return_height=float(vmap.min_height[v]),
            )
        )
    return Empty(misses=-1 - v)


def voxel_density(stats: VoxelStats) -> float:
    """Fraction of interacting rays that terminated in the voxel."""
    if stats.hits < 1:
        raise ValueError("density is only defined for occupied voxels")
    return stats.hits / (stats.hits + stats.misses)


def encode_empty(misses):
    """Lookup value for an empty voxel with the given miss count (saturating)."""
    m = np.minimum(np.asarray(misses, dtype=np.int64), MAX_MISSES)
    return (-1 - m).astype(LOOKUP_DTYPE)


def decode_empty(values):
    """Inverse of :func:`encode_empty`; only meaningful for negative values."""
    return -1 - np.asarray(values, dtype=np.int64)


def encode_index(data_index):
    return np.asarray(data_index, dtype=LOOKUP_DTYPE)


def decode_lookup(values):
    """Split lookup values into ``(is_occupied, data_index_or_misses)``."""
    v = np.asarray(values, dtype=np.int64)
    occ = v >= 0
    return occ, np.where(occ, v, -1 - v)
