"""Numba kernels shared by the integrator and fusion stages.

All coordinates handed to these kernels are in *global voxel units*
(world / resolution), so the voxel containing a point is ``floor(coord)`` and
a map's bounds are ``[origin_index, origin_index + dims)``.  Kernels release
the GIL so callers can fan work out over threads.
"""

import math

import numpy as np
from numba import njit

MAX_MISSES = 2**30


@njit(cache=True, nogil=True)
def walk_ray(s, e, lo, dims, out):
    """Grid-stepping traversal of segment s->e clipped to the map block.

    Writes local voxel indices of every voxel the segment passes through,
    in order, excluding the voxel that contains ``e``.  Returns the count.
    Ties between axes go to the lowest axis number.
    """
    d0 = e[0] - s[0]
    d1 = e[1] - s[1]
    d2 = e[2] - s[2]
    d = (d0, d1, d2)
    t0 = 0.0
    t1 = 1.0
    for a in range(3):
        blo = float(lo[a])
        bhi = float(lo[a] + dims[a])
        if d[a] == 0.0:
            if s[a] < blo or s[a] >= bhi:
                return 0
        else:
            ta = (blo - s[a]) / d[a]
            tb = (bhi - s[a]) / d[a]
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
    if t0 >= t1:
        return 0

    e0 = math.floor(e[0])
    e1 = math.floor(e[1])
    e2 = math.floor(e[2])

    v = np.empty(3, np.int64)
    if t0 == 0.0:
        for a in range(3):
            v[a] = math.floor(s[a])
    else:
        for a in range(3):
            v[a] = math.floor(s[a] + t0 * d[a])
            if v[a] < lo[a]:
                v[a] = lo[a]
            elif v[a] >= lo[a] + dims[a]:
                v[a] = lo[a] + dims[a] - 1

    step = np.zeros(3, np.int64)
    tmax = np.empty(3, np.float64)
    tdelta = np.empty(3, np.float64)
    for a in range(3):
        if d[a] > 0.0:
            step[a] = 1
            tmax[a] = (v[a] + 1.0 - s[a]) / d[a]
            tdelta[a] = 1.0 / d[a]
        elif d[a] < 0.0:
            step[a] = -1
            tmax[a] = (v[a] - s[a]) / d[a]
            tdelta[a] = -1.0 / d[a]
        else:
            tmax[a] = np.inf
            tdelta[a] = np.inf

    n = 0
    limit = dims[0] + dims[1] + dims[2] + 3
    for _ in range(limit):
        if v[0] == e0 and v[1] == e1 and v[2] == e2:
            break
        inside = True
        for a in range(3):
            if v[a] < lo[a] or v[a] >= lo[a] + dims[a]:
                inside = False
        if not inside:
            break
        axis = 0
        if tmax[1] < tmax[axis]:
            axis = 1
        if tmax[2] < tmax[axis]:
            axis = 2
        if tmax[axis] >= 1.0:
            # Segment ends inside this voxel; it is the endpoint voxel up to rounding.
            break
        out[n, 0] = v[0] - lo[0]
        out[n, 1] = v[1] - lo[1]
        out[n, 2] = v[2] - lo[2]
        n += 1
        v[axis] += step[axis]
        tmax[axis] += tdelta[axis]
    return n


@njit(cache=True, nogil=True)
def point_cells(g, lo, dims, lin_out):
    """Linear local index of the voxel holding each point, -1 when outside."""
    ny = dims[1]
    nz = dims[2]
    for i in range(g.shape[0]):
        ix = math.floor(g[i, 0]) - lo[0]
        iy = math.floor(g[i, 1]) - lo[1]
        iz = math.floor(g[i, 2]) - lo[2]
        if 0 <= ix < dims[0] and 0 <= iy < ny and 0 <= iz < nz:
            lin_out[i] = (ix * ny + iy) * nz + iz
        else:
            lin_out[i] = -1


@njit(cache=True, nogil=True)
def accumulate(g, z, sensor_g, lo, dims, lookup_flat, point_lin, hits, misses_dense, min_h):
    """Hits, min return height and per-voxel misses for a chunk of rays.

    ``hits``/``min_h`` are indexed by data slot; ``misses_dense`` by linear
    voxel index.  All updates are integer adds or mins, so chunk results can
    be reduced in any order.
    """
    ny = dims[1]
    nz = dims[2]
    buf = np.empty((dims[0] + dims[1] + dims[2] + 3, 3), np.int64)
    for i in range(g.shape[0]):
        lin = point_lin[i]
        if lin >= 0:
            slot = lookup_flat[lin]
            hits[slot] += 1
            if z[i] < min_h[slot]:
                min_h[slot] = z[i]
        n = walk_ray(sensor_g, g[i], lo, dims, buf)
        for k in range(n):
            misses_dense[(buf[k, 0] * ny + buf[k, 1]) * nz + buf[k, 2]] += 1


@njit(cache=True, nogil=True)
def combine_into(lookup, hits, misses, min_h, offset, out_dims, acc_hits, acc_miss, acc_min):
    """Add one source map into dense accumulators of the output grid.

    ``offset`` maps source index -> output index; cells that land outside the
    output grid are dropped.
    """
    snx, sny, snz = lookup.shape
    onx = out_dims[0]
    ony = out_dims[1]
    onz = out_dims[2]
    for i in range(snx):
        oi = i + offset[0]
        if oi < 0 or oi >= onx:
            continue
        for j in range(sny):
            oj = j + offset[1]
            if oj < 0 or oj >= ony:
                continue
            base = (oi * ony + oj) * onz
            for k in range(snz):
                ok = k + offset[2]
                if ok < 0 or ok >= onz:
                    continue
                v = lookup[i, j, k]
                o = base + ok
                if v >= 0:
                    acc_hits[o] += hits[v]
                    acc_miss[o] += misses[v]
                    if min_h[v] < acc_min[o]:
                        acc_min[o] = min_h[v]
                else:
                    acc_miss[o] += -1 - v


@njit(cache=True, nogil=True)
def encode_lookup(acc_hits, acc_miss, lookup_flat):
    """Assign data slots in linear order; encode empty cells as -1 - misses."""
    n = 0
    for o in range(acc_hits.shape[0]):
        if acc_hits[o] > 0:
            lookup_flat[o] = n
            n += 1
        else:
            m = acc_miss[o]
            if m > MAX_MISSES:
                m = MAX_MISSES
            lookup_flat[o] = -1 - m
    return n
