"""2D terrain layers derived from a (combined) voxel map.

All layers are ``(nx, ny)`` float64 arrays co-registered with the map's
columns; cell ``(i, j)`` covers voxel column ``(i, j)``.  Missing values are
NaN.  Flag layers hold 0.0 / 1.0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Dict, Iterator, Tuple

import numpy as np
from numba import njit

from .grid import VoxelMap

NODATA = float("nan")

LAYER_NAMES = (
    "surface_height",
    "obstacle_density",
    "hard_obstacle",
    "soft_obstacle",
    "negative_obstacle",
    "slope",
    "roughness",
)


@dataclass(frozen=True)
class LayerParams:
    min_obstacle_height: float = 0.3
    max_obstacle_height: float = 2.0
    density_threshold: float = 0.5
    slope_window: int = 5
    neg_obs_threshold: float = 0.5
    neg_obs_max_search: float = 6.0
    neg_obs_directions: int = 8
    neg_obs_cone_half_angle: float = math.pi / 8
    min_plane_points: int = 4
    # Neighbourhood radius (cells) for the ground reference of positive obstacles.
    obstacle_ground_radius: int = 1

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "obstacle_ground_radius":
                if v < 0:
                    raise ValueError("obstacle_ground_radius must be >= 0")
            elif not v > 0:
                raise ValueError(f"{f.name} must be positive, got {v!r}")
        if self.min_obstacle_height >= self.max_obstacle_height:
            raise ValueError("min_obstacle_height must be below max_obstacle_height")
        if self.slope_window % 2 != 1:
            raise ValueError("slope_window must be odd")
        if self.min_plane_points < 3:
            raise ValueError("a plane needs at least 3 points")


@dataclass(eq=False)
class LayerGrid:
    """One 2D layer plus its placement in the world."""

    name: str
    values: np.ndarray
    origin: Tuple[float, float]
    resolution: float

    @property
    def width(self) -> int:
        return int(self.values.shape[0])

    @property
    def height(self) -> int:
        return int(self.values.shape[1])

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def cell_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        i = np.arange(self.width)
        j = np.arange(self.height)
        x = self.origin[0] + (i + 0.5) * self.resolution
        y = self.origin[1] + (j + 0.5) * self.resolution
        return np.meshgrid(x, y, indexing="ij")

    def equals(self, other: "LayerGrid") -> bool:
        return (
            self.name == other.name
            and self.origin == other.origin
            and self.resolution == other.resolution
            and self.values.shape == other.values.shape
            and self.values.tobytes() == other.values.astype(self.values.dtype).tobytes()
        )


@dataclass(eq=False)
class LayerStack:
    surface_height: LayerGrid
    obstacle_density: LayerGrid
    hard_obstacle: LayerGrid
    soft_obstacle: LayerGrid
    negative_obstacle: LayerGrid
    slope: LayerGrid
    roughness: LayerGrid

    def __iter__(self) -> Iterator[LayerGrid]:
        return (getattr(self, n) for n in LAYER_NAMES)

    def as_dict(self) -> Dict[str, LayerGrid]:
        return {n: getattr(self, n) for n in LAYER_NAMES}


def _layer(name: str, values: np.ndarray, vmap: VoxelMap) -> LayerGrid:
    ox, oy, _ = vmap.origin.world
    return LayerGrid(name, values, (float(ox), float(oy)), vmap.spec.resolution)


def _like(name: str, values: np.ndarray, ref: LayerGrid) -> LayerGrid:
    return LayerGrid(name, values, ref.origin, ref.resolution)


# --------------------------------------------------------------------------
# surface height


@njit(cache=True, nogil=True)
def _column_min_height(lookup, min_h, out):
    nx, ny, nz = lookup.shape
    for i in range(nx):
        for j in range(ny):
            out[i, j] = np.nan
            for k in range(nz):
                v = lookup[i, j, k]
                if v >= 0:
                    out[i, j] = min_h[v]
                    break


def extract_height_map(vmap: VoxelMap) -> LayerGrid:
    """Lowest return of the lowest occupied voxel in each column."""
    nx, ny, _ = vmap.spec.dims
    out = np.empty((nx, ny), dtype=np.float64)
    _column_min_height(vmap.lookup, vmap.min_height, out)
    return _layer("surface_height", out, vmap)


# --------------------------------------------------------------------------
# positive obstacles


@njit(cache=True, nogil=True)
def _ground_reference(surface, radius, out):
    nx, ny = surface.shape
    for i in range(nx):
        for j in range(ny):
            h = surface[i, j]
            if np.isnan(h):
                out[i, j] = np.nan
                continue
            for di in range(-radius, radius + 1):
                for dj in range(-radius, radius + 1):
                    a = i + di
                    b = j + dj
                    if 0 <= a < nx and 0 <= b < ny:
                        v = surface[a, b]
                        if v < h:
                            h = v
            out[i, j] = h


@njit(cache=True, nogil=True)
def _obstacle_density(lookup, hits, misses, min_h, ground, lo_band, hi_band, out):
    nx, ny, nz = lookup.shape
    for i in range(nx):
        for j in range(ny):
            out[i, j] = 0.0
            g = ground[i, j]
            if np.isnan(g):
                continue
            num = 0.0
            den = 0.0
            for k in range(nz):
                v = lookup[i, j, k]
                if v < 0:
                    continue
                dh = min_h[v] - g
                if lo_band <= dh <= hi_band:
                    num += hits[v]
                    den += hits[v] + misses[v]
            if den > 0.0:
                out[i, j] = num / den


def positive_obstacles(vmap: VoxelMap, surface_height: LayerGrid, params: LayerParams = LayerParams()):
    """Evidence-weighted density of returns in the obstacle band, and its hard/soft split.

    A voxel belongs to the band when its lowest return sits between
    ``min_obstacle_height`` and ``max_obstacle_height`` above the ground
    reference.  The ground reference of a column is the lowest surface
    height within ``obstacle_ground_radius`` cells; radius 0 uses the
    column's own surface height.  Density is sum(hits) / sum(hits + misses)
    over band voxels, i.e. per-voxel density weighted by hits + misses.
    """
    ground = np.empty_like(surface_height.values)
    _ground_reference(surface_height.values, int(params.obstacle_ground_radius), ground)
    density = np.empty_like(surface_height.values)
    _obstacle_density(
        vmap.lookup,
        vmap.hits,
        vmap.misses,
        vmap.min_height,
        ground,
        float(params.min_obstacle_height),
        float(params.max_obstacle_height),
        density,
    )
    present = density > 0.0
    hard = present & (density >= params.density_threshold)
    soft = present & ~hard
    return (
        _like("obstacle_density", density, surface_height),
        _like("hard_obstacle", hard.astype(np.float64), surface_height),
        _like("soft_obstacle", soft.astype(np.float64), surface_height),
    )


# --------------------------------------------------------------------------
# slope and roughness


@njit(cache=True, nogil=True)
def _plane_fit(surface, half, res, min_points, slope_out, rough_out):
    nx, ny = surface.shape
    size = (2 * half + 1) ** 2
    xs = np.empty(size)
    ys = np.empty(size)
    zs = np.empty(size)
    for i in range(nx):
        for j in range(ny):
            slope_out[i, j] = np.nan
            rough_out[i, j] = np.nan
            if np.isnan(surface[i, j]):
                continue
            n = 0
            for di in range(-half, half + 1):
                a = i + di
                if a < 0 or a >= nx:
                    continue
                for dj in range(-half, half + 1):
                    b = j + dj
                    if b < 0 or b >= ny:
                        continue
                    z = surface[a, b]
                    if np.isnan(z):
                        continue
                    xs[n] = di * res
                    ys[n] = dj * res
                    zs[n] = z
                    n += 1
            if n < min_points:
                continue
            mx = 0.0
            my = 0.0
            mz = 0.0
            for k in range(n):
                mx += xs[k]
                my += ys[k]
                mz += zs[k]
            mx /= n
            my /= n
            mz /= n
            cxx = 0.0
            cxy = 0.0
            cyy = 0.0
            cxz = 0.0
            cyz = 0.0
            for k in range(n):
                dx = xs[k] - mx
                dy = ys[k] - my
                dz = zs[k] - mz
                cxx += dx * dx
                cxy += dx * dy
                cyy += dy * dy
                cxz += dx * dz
                cyz += dy * dz
            det = cxx * cyy - cxy * cxy
            if det <= 1e-9 * (cxx + cyy) * (cxx + cyy):
                continue
            a_ = (cxz * cyy - cyz * cxy) / det
            b_ = (cyz * cxx - cxz * cxy) / det
            sse = 0.0
            for k in range(n):
                r = (zs[k] - mz) - a_ * (xs[k] - mx) - b_ * (ys[k] - my)
                sse += r * r
            slope_out[i, j] = math.atan(math.sqrt(a_ * a_ + b_ * b_))
            rough_out[i, j] = sse / n


def slope_roughness(surface_height: LayerGrid, params: LayerParams = LayerParams()):
    """Least-squares plane over the N x N window around each defined cell.

    Slope is the plane's inclination in radians, roughness the mean squared
    residual in m^2.  Cells with too few defined neighbours, or whose
    neighbours are collinear, are NaN.
    """
    slope = np.empty_like(surface_height.values)
    rough = np.empty_like(surface_height.values)
    _plane_fit(
        surface_height.values,
        params.slope_window // 2,
        surface_height.resolution,
        int(params.min_plane_points),
        slope,
        rough,
    )
    return _like("slope", slope, surface_height), _like("roughness", rough, surface_height)


# --------------------------------------------------------------------------
# negative obstacles


def cone_offsets(params: LayerParams, resolution: float):
    """Per-direction search offsets, nearest first.

    Returns ``(offsets, starts)``: ``offsets[starts[d]:starts[d + 1]]`` are the
    ``(di, dj)`` cells of direction ``d``'s cone within the search distance,
    ordered by Chebyshev ring, then Euclidean distance, then angle off-axis.
    """
    r_cells = int(math.floor(params.neg_obs_max_search / resolution))
    di, dj = np.meshgrid(np.arange(-r_cells, r_cells + 1), np.arange(-r_cells, r_cells + 1), indexing="ij")
    di = di.ravel()
    dj = dj.ravel()
    dist = np.hypot(di, dj)
    keep = (dist > 0) & (dist * resolution <= params.neg_obs_max_search + 1e-12)
    di, dj, dist = di[keep], dj[keep], dist[keep]
    ring = np.maximum(np.abs(di), np.abs(dj))
    ang = np.arctan2(dj, di)
    chunks = []
    starts = [0]
    for d in range(params.neg_obs_directions):
        theta = 2.0 * math.pi * d / params.neg_obs_directions
        off = np.abs((ang - theta + math.pi) % (2.0 * math.pi) - math.pi)
        sel = np.nonzero(off <= params.neg_obs_cone_half_angle)[0]
        order = np.lexsort((dj[sel], di[sel], off[sel], dist[sel], ring[sel]))
        sel = sel[order]
        chunks.append(np.stack([di[sel], dj[sel]], axis=1))
        starts.append(starts[-1] + sel.size)
    offsets = np.concatenate(chunks).astype(np.int64) if chunks else np.zeros((0, 2), np.int64)
    return offsets, np.asarray(starts, dtype=np.int64)


@njit(cache=True, nogil=True)
def _negative_search(surface, offsets, starts, threshold, out):
    nx, ny = surface.shape
    n_dir = starts.shape[0] - 1
    for i in range(nx):
        for j in range(ny):
            out[i, j] = 0.0
            if not np.isnan(surface[i, j]):
                continue
            found = 0
            hmin = np.inf
            hmax = -np.inf
            for d in range(n_dir):
                for q in range(starts[d], starts[d + 1]):
                    a = i + offsets[q, 0]
                    b = j + offsets[q, 1]
                    if a < 0 or a >= nx or b < 0 or b >= ny:
                        continue
                    h = surface[a, b]
                    if np.isnan(h):
                        continue
                    found += 1
                    if h < hmin:
                        hmin = h
                    if h > hmax:
                        hmax = h
                    break
            if found >= 2 and hmax - hmin > threshold:
                out[i, j] = 1.0


def negative_obstacles(surface_height: LayerGrid, params: LayerParams = LayerParams()) -> LayerGrid:
    """Flag unobserved cells whose surroundings disagree in height by more than the threshold.

    Each undefined cell searches outward in ``neg_obs_directions`` cones for
    the nearest defined cell; if at least two cones find one and the found
    heights span more than ``neg_obs_threshold``, the cell is flagged.
    """
    offsets, starts = cone_offsets(params, surface_height.resolution)
    out = np.empty_like(surface_height.values)
    _negative_search(surface_height.values, offsets, starts, float(params.neg_obs_threshold), out)
    return _like("negative_obstacle", out, surface_height)


def build_layers(vmap: VoxelMap, params: LayerParams = LayerParams()) -> LayerStack:
    surface = extract_height_map(vmap)
    density, hard, soft = positive_obstacles(vmap, surface, params)
    slope, rough = slope_roughness(surface, params)
    negative = negative_obstacles(surface, params)
    return LayerStack(
        surface_height=surface,
        obstacle_density=density,
        hard_obstacle=hard,
        soft_obstacle=soft,
        negative_obstacle=negative,
        slope=slope,
        roughness=rough,
    )
