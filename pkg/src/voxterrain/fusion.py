"""Rolling buffer of per-scan maps and their fusion into one combined map."""

from __future__ import annotations

import threading
from collections import deque
from typing import Iterable, List, Optional

import numpy as np

from . import _kernels
from .grid import COUNT_DTYPE, HEIGHT_DTYPE, LOOKUP_DTYPE, MAX_MISSES, GridSpec, MapOrigin, VoxelMap


class MapBuffer:
    """Bounded, thread-safe FIFO of voxel maps sharing one grid spec."""

    def __init__(self, capacity: int = 8, spec: Optional[GridSpec] = None):
        if capacity < 1:
            raise ValueError("buffer capacity must be at least 1")
        self.capacity = int(capacity)
        self.spec = spec
        self._entries = deque(maxlen=self.capacity)
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> List[VoxelMap]:
        with self._lock:
            return list(self._entries)

    def push(self, vmap: VoxelMap) -> None:
        with self._lock:
            if self.spec is None:
                self.spec = vmap.spec
            elif vmap.spec.dims != self.spec.dims or vmap.spec.resolution != self.spec.resolution:
                raise ValueError(f"map spec {vmap.spec} does not match buffer spec {self.spec}")
            self._entries.append(vmap)

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()


def push_map(buffer: MapBuffer, vmap: VoxelMap) -> None:
    buffer.push(vmap)


def combine_maps(maps: Iterable[VoxelMap], origin: Optional[MapOrigin] = None) -> VoxelMap:
    """Sum hits and misses, take minimum heights, over maps shifted onto ``origin``.

    ``origin`` defaults to the last map's origin.  Source voxels outside the
    output block are dropped.
    """
    maps = list(maps)
    if not maps:
        raise ValueError("cannot combine an empty buffer")
    spec = maps[-1].spec
    if origin is None:
        origin = maps[-1].origin
    n_cells = spec.n_cells
    acc_hits = np.zeros(n_cells, dtype=np.int64)
    acc_miss = np.zeros(n_cells, dtype=np.int64)
    acc_min = np.full(n_cells, np.inf, dtype=np.float64)
    out_dims = np.asarray(spec.dims, dtype=np.int64)
    for m in maps:
        if m.spec.dims != spec.dims or m.spec.resolution != spec.resolution:
            raise ValueError("all buffered maps must share one grid spec")
        offset = np.asarray(m.origin.offset_to(origin), dtype=np.int64)
        _kernels.combine_into(
            m.lookup, m.hits, m.misses, m.min_height, offset, out_dims, acc_hits, acc_miss, acc_min
        )

    lookup = np.empty(n_cells, dtype=LOOKUP_DTYPE)
    k = _kernels.encode_lookup(acc_hits, acc_miss, lookup)
    occ = acc_hits > 0
    np.minimum(acc_hits, MAX_MISSES, out=acc_hits)
    np.minimum(acc_miss, MAX_MISSES, out=acc_miss)
    out = VoxelMap(
        spec=spec,
        origin=origin,
        lookup=lookup.reshape(spec.dims),
        hits=acc_hits[occ].astype(COUNT_DTYPE),
        misses=acc_miss[occ].astype(COUNT_DTYPE),
        min_height=acc_min[occ].astype(HEIGHT_DTYPE),
    )
    assert out.n_occupied == k
    return out


def combine(buffer: MapBuffer) -> VoxelMap:
    """Fuse every buffered map at the newest map's origin."""
    return combine_maps(buffer.entries)
