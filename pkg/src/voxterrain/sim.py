"""Synthetic lidar scenes with exact geometry, used as a ground-truth oracle.

Terrain is a piecewise-planar heightfield: one base plane plus axis-aligned
steps and rectangular trenches.  Because the heightfield is affine between
feature boundaries, beam/terrain intersections are solved in closed form
per interval rather than marched, so noise-free returns lie on the geometry
to rounding error.  Solid boxes stop beams; vegetation boxes stop a beam
with probability ``p`` per ``stride`` metres travelled inside them.
"""

from __future__ import annotations

import math
import shlex
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .grid import GridSpec, MapOrigin
from .integrate import Pose, ScanFrame
from .layers import LayerGrid, LayerParams, LayerStack


@dataclass(frozen=True)
class Step:
    """Adds ``delta`` to the terrain where ``coord >= position``."""

    axis: str
    position: float
    delta: float

    def __post_init__(self):
        if self.axis not in ("x", "y"):
            raise ValueError("step axis must be 'x' or 'y'")


@dataclass(frozen=True)
class Trench:
    """Lowers the terrain by ``depth`` inside ``[xmin, xmax) x [ymin, ymax)``."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float
    depth: float


@dataclass(frozen=True)
class Box:
    lo: Tuple[float, float, float]
    hi: Tuple[float, float, float]


@dataclass(frozen=True)
class Vegetation:
    lo: Tuple[float, float, float]
    hi: Tuple[float, float, float]
    p: float
    stride: float = 0.4

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError("vegetation termination probability must be in (0, 1)")
        if self.stride <= 0:
            raise ValueError("vegetation stride must be positive")


@dataclass
class Scene:
    base: Tuple[float, float, float] = (0.0, 0.0, 0.0)  # z0, dz/dx, dz/dy
    steps: List[Step] = field(default_factory=list)
    trenches: List[Trench] = field(default_factory=list)
    solids: List[Box] = field(default_factory=list)
    vegetation: List[Vegetation] = field(default_factory=list)
    rng_seed: int = 0

    def height(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        z0, gx, gy = self.base
        h = z0 + gx * x + gy * y
        for s in self.steps:
            c = x if s.axis == "x" else y
            h = h + np.where(c >= s.position, s.delta, 0.0)
        for t in self.trenches:
            inside = (x >= t.xmin) & (x < t.xmax) & (y >= t.ymin) & (y < t.ymax)
            h = h - np.where(inside, t.depth, 0.0)
        return h

    def gradient(self) -> Tuple[float, float]:
        return self.base[1], self.base[2]

    def _breakpoints(self, o, d):
        """Ray parameters where the heightfield's piecewise definition changes."""
        planes = []
        for s in self.steps:
            planes.append((0 if s.axis == "x" else 1, s.position))
        for t in self.trenches:
            planes += [(0, t.xmin), (0, t.xmax), (1, t.ymin), (1, t.ymax)]
        n = d.shape[0]
        if not planes:
            return np.zeros((n, 0))
        out = np.empty((n, len(planes)))
        with np.errstate(divide="ignore", invalid="ignore"):
            for c, (axis, pos) in enumerate(planes):
                t = (pos - o[axis]) / d[:, axis]
                out[:, c] = np.where(np.isfinite(t) & (t > 0), t, np.inf)
        return out

    def terrain_hit(self, o, d, t_max) -> np.ndarray:
        """First parameter where each ray ``o + t d`` meets the terrain, inf if none."""
        o = np.asarray(o, dtype=np.float64)
        d = np.asarray(d, dtype=np.float64).reshape(-1, 3)
        n = d.shape[0]
        t_max = np.broadcast_to(np.asarray(t_max, dtype=np.float64), (n,))
        bp = np.sort(self._breakpoints(o, d), axis=1)
        bp = np.minimum(bp, t_max[:, None])
        edges = np.concatenate([np.zeros((n, 1)), bp, t_max[:, None]], axis=1)
        _, gx, gy = self.base
        slope_rate = d[:, 2] - gx * d[:, 0] - gy * d[:, 1]
        hit = np.full(n, np.inf)
        prev_gap_end = None
        for k in range(edges.shape[1] - 1):
            ta = edges[:, k]
            tb = edges[:, k + 1]
            tm = 0.5 * (ta + tb)
            pm = o + tm[:, None] * d
            # gap(t) = ray z - terrain z, affine on this interval
            gap_m = pm[:, 2] - self.height(pm[:, 0], pm[:, 1])
            gap_a = gap_m + (ta - tm) * slope_rate
            gap_b = gap_m + (tb - tm) * slope_rate
            open_ = np.isinf(hit) & (tb > ta)
            if prev_gap_end is not None:
                # vertical face at the interval boundary
                face = open_ & (prev_gap_end > 0) & (gap_a <= 0)
                hit = np.where(face, ta, hit)
                open_ &= ~face
            with np.errstate(divide="ignore", invalid="ignore"):
                root = np.where(slope_rate != 0.0, ta - gap_a / slope_rate, np.inf)
            cross = open_ & (gap_a > 0) & (gap_b <= 0)
            root = np.clip(root, ta, tb)
            hit = np.where(cross, root, hit)
            prev_gap_end = np.where(tb > ta, gap_b, prev_gap_end if prev_gap_end is not None else gap_b)
        return hit

    @staticmethod
    def _slab(o, d, lo, hi):
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            ta = (lo - o) * inv
            tb = (hi - o) * inv
        # rays parallel to a slab: inside -> (-inf, inf), outside -> empty
        par = d == 0.0
        inside = (o >= lo) & (o <= hi)
        ta = np.where(par, np.where(inside, -np.inf, np.inf), ta)
        tb = np.where(par, np.where(inside, np.inf, -np.inf), tb)
        t_in = np.max(np.minimum(ta, tb), axis=1)
        t_out = np.min(np.maximum(ta, tb), axis=1)
        return t_in, t_out

    def solid_hit(self, o, d) -> np.ndarray:
        d = np.asarray(d, dtype=np.float64).reshape(-1, 3)
        hit = np.full(d.shape[0], np.inf)
        for b in self.solids:
            t_in, t_out = self._slab(o, d, b.lo, b.hi)
            ok = (t_in <= t_out) & (t_in > 0)
            hit = np.where(ok & (t_in < hit), t_in, hit)
        return hit

    def first_hit(self, o, d, t_max) -> np.ndarray:
        """Nearest terrain or solid intersection (vegetation ignored)."""
        return np.minimum(self.terrain_hit(o, d, t_max), self.solid_hit(o, d))

    def surface_residual(self, points) -> np.ndarray:
        """Distance-like residual of points from the scene's solid geometry.

        Exact for points on the heightfield, on step or trench walls, and on
        box faces; used to check that noise-free returns lie on geometry.
        """
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
        res = np.abs(z - self.height(x, y))
        eps = 1e-7
        walls = [(0 if s.axis == "x" else 1, s.position) for s in self.steps]
        for t in self.trenches:
            walls += [(0, t.xmin), (0, t.xmax), (1, t.ymin), (1, t.ymax)]
        for axis, pos in walls:
            c = p[:, axis]
            q_lo = p.copy()
            q_hi = p.copy()
            q_lo[:, axis] = pos - eps
            q_hi[:, axis] = pos + eps
            h1 = self.height(q_lo[:, 0], q_lo[:, 1])
            h2 = self.height(q_hi[:, 0], q_hi[:, 1])
            between = (z >= np.minimum(h1, h2) - 1e-9) & (z <= np.maximum(h1, h2) + 1e-9)
            res = np.where(between, np.minimum(res, np.abs(c - pos)), res)
        for b in self.solids:
            lo = np.asarray(b.lo)
            hi = np.asarray(b.hi)
            outside = np.maximum(np.maximum(lo - p, p - hi), 0.0)
            d_out = np.linalg.norm(outside, axis=1)
            d_in = np.min(np.minimum(p - lo, hi - p), axis=1)
            dist = np.where(d_out > 0, d_out, np.abs(d_in))
            res = np.minimum(res, dist)
        return res


@dataclass(frozen=True)
class LidarModel:
    channels: int = 64
    azimuth_steps: int = 1024
    vertical_fov: Tuple[float, float] = (math.radians(-16.6), math.radians(16.6))
    max_range: float = 120.0
    range_noise_sigma: float = 0.0

    def __post_init__(self):
        if self.channels < 1 or self.azimuth_steps < 1:
            raise ValueError("lidar beam counts must be >= 1")
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")
        if self.vertical_fov[0] > self.vertical_fov[1]:
            raise ValueError("vertical_fov must be (min, max)")

    def beam_directions(self) -> np.ndarray:
        """Unit beam directions in the sensor frame, channel-major."""
        if self.channels == 1:
            elev = np.array([0.5 * (self.vertical_fov[0] + self.vertical_fov[1])])
        else:
            elev = np.linspace(self.vertical_fov[0], self.vertical_fov[1], self.channels)
        az = 2.0 * np.pi * np.arange(self.azimuth_steps) / self.azimuth_steps
        e, a = np.meshgrid(elev, az, indexing="ij")
        d = np.stack([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)], axis=-1)
        return d.reshape(-1, 3)


def simulate_scan(scene: Scene, sensor_pose: Pose, lidar: LidarModel = LidarModel(), seed: int = 0,
                  timestamp: float = 0.0) -> ScanFrame:
    """One sweep of ``lidar`` from ``sensor_pose``; points are returned in the sensor frame."""
    sensor_pose.validate()
    o = sensor_pose.translation
    d = lidar.beam_directions() @ sensor_pose.rotation.T
    n = d.shape[0]
    rng = np.random.default_rng([int(scene.rng_seed), int(seed)])
    veg_u = rng.random((n, len(scene.vegetation)))
    noise = rng.standard_normal(n)

    t = scene.first_hit(o, d, lidar.max_range * 1.5)
    for v_i, v in enumerate(scene.vegetation):
        t_in, t_out = Scene._slab(o, d, v.lo, v.hi)
        t_in = np.maximum(t_in, 0.0)
        depth = v.stride * np.log1p(-veg_u[:, v_i]) / math.log1p(-v.p)
        t_stop = t_in + depth
        stop = (t_in <= t_out) & (t_stop < np.minimum(t_out, t))
        t = np.where(stop, t_stop, t)

    keep = np.isfinite(t) & (t <= lidar.max_range)
    r = t + lidar.range_noise_sigma * noise if lidar.range_noise_sigma > 0 else t
    world = o + d[keep] * r[keep, None]
    local = (world - o) @ sensor_pose.rotation
    return ScanFrame(points=local, sensor_pose=sensor_pose, timestamp=timestamp)


def visibility(scene: Scene, targets: np.ndarray, viewpoints: Sequence, lidar: Optional[LidarModel] = None,
               tol: float = 1e-6) -> np.ndarray:
    """Whether each target point has an unobstructed line of sight from any viewpoint.

    With ``lidar`` given, targets must also fall inside its vertical field of
    view (viewpoint assumed level) and range.
    """
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
    seen = np.zeros(targets.shape[0], dtype=bool)
    for vp in viewpoints:
        o = np.asarray(vp, dtype=np.float64)
        v = targets - o
        dist = np.linalg.norm(v, axis=1)
        d = v / np.maximum(dist, 1e-12)[:, None]
        t = scene.first_hit(o, d, dist + 1.0)
        ok = t >= dist - tol
        if lidar is not None:
            elev = np.arcsin(np.clip(d[:, 2], -1.0, 1.0))
            ok &= (elev >= lidar.vertical_fov[0]) & (elev <= lidar.vertical_fov[1]) & (dist <= lidar.max_range)
        seen |= ok
    return seen


def _disc_footprint(radius_cells: float) -> np.ndarray:
    r = int(math.floor(radius_cells))
    i, j = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    return np.hypot(i, j) <= radius_cells + 1e-9


def ground_truth_layers(scene: Scene, spec: GridSpec, origin: MapOrigin, params: LayerParams = LayerParams(),
                        viewpoints: Optional[Sequence] = None, lidar: Optional[LidarModel] = None) -> LayerStack:
    """Layers evaluated analytically from the scene at cell centres.

    Surface height and slope come from the heightfield; obstacle footprints
    from the boxes (solids hard with density 1, vegetation soft with density
    ``p``).  Negative-obstacle truth needs ``viewpoints``: a cell is flagged
    when its ground is hidden from every viewpoint, visible ground within the
    search distance spans more than the threshold, and the cell lies more
    than the threshold below the highest of that visible ground.  Without
    viewpoints the negative layer is all zeros.  Roughness truth is zero
    (every terrain piece is planar).
    """
    from scipy import ndimage

    nx, ny, _ = spec.dims
    res = spec.resolution
    ox, oy, _ = origin.world
    org = (float(ox), float(oy))
    i = np.arange(nx)
    j = np.arange(ny)
    cx, cy = np.meshgrid(ox + (i + 0.5) * res, oy + (j + 0.5) * res, indexing="ij")
    h = scene.height(cx, cy)

    gx, gy = scene.gradient()
    slope = np.full((nx, ny), math.atan(math.hypot(gx, gy)))
    rough = np.zeros((nx, ny))

    x0 = ox + i * res
    y0 = oy + j * res
    eps = 1e-9  # a box edge on a cell boundary must not claim the neighbour

    def footprint(b_lo, b_hi):
        fx = (x0 + res > b_lo[0] + eps) & (x0 < b_hi[0] - eps)
        fy = (y0 + res > b_lo[1] + eps) & (y0 < b_hi[1] - eps)
        return fx[:, None] & fy[None, :]

    hard = np.zeros((nx, ny), dtype=bool)
    density = np.zeros((nx, ny))
    for b in scene.solids:
        fp = footprint(b.lo, b.hi)
        top = b.hi[2] - h
        bottom = b.lo[2] - h
        in_band = (top >= params.min_obstacle_height) & (bottom <= params.max_obstacle_height)
        hard |= fp & in_band
    density[hard] = 1.0
    soft = np.zeros((nx, ny), dtype=bool)
    for v in scene.vegetation:
        fp = footprint(v.lo, v.hi) & ~hard
        top = v.hi[2] - h
        fp &= top >= params.min_obstacle_height
        soft |= fp
        density[fp] = np.maximum(density[fp], v.p)

    negative = np.zeros((nx, ny), dtype=bool)
    if viewpoints:
        targets = np.stack([cx.ravel(), cy.ravel(), h.ravel()], axis=1)
        seen = visibility(scene, targets, viewpoints, lidar).reshape(nx, ny)
        fp = _disc_footprint(params.neg_obs_max_search / res)
        vis_max = ndimage.maximum_filter(np.where(seen, h, -np.inf), footprint=fp, mode="constant", cval=-np.inf)
        vis_min = ndimage.minimum_filter(np.where(seen, h, np.inf), footprint=fp, mode="constant", cval=np.inf)
        thr = params.neg_obs_threshold
        negative = ~seen & (vis_max - vis_min > thr) & (h < vis_max - thr)

    def grid(name, values):
        return LayerGrid(name, np.asarray(values, dtype=np.float64), org, res)

    return LayerStack(
        surface_height=grid("surface_height", h),
        obstacle_density=grid("obstacle_density", density),
        hard_obstacle=grid("hard_obstacle", hard),
        soft_obstacle=grid("soft_obstacle", soft),
        negative_obstacle=grid("negative_obstacle", negative),
        slope=grid("slope", slope),
        roughness=grid("roughness", rough),
    )


# --------------------------------------------------------------------------
# scene description files


@dataclass
class SceneFile:
    scene: Scene
    lidar: LidarModel
    poses: List[Tuple[float, Pose]]


_LIDAR_KEYS = {"channels", "azimuth_steps", "fov_min_deg", "fov_max_deg", "max_range", "noise"}


def parse_scene(text: str, source: str = "<scene>") -> SceneFile:
    """Parse the line-oriented scene format (grammar in README.md)."""
    scene = Scene()
    lidar_kw = {}
    poses: List[Tuple[float, Pose]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = shlex.split(line)
        kind, args = tok[0].lower(), tok[1:]
        where = f"{source}:{lineno}"
        try:
            if kind == "seed":
                scene.rng_seed = int(args[0])
            elif kind == "plane":
                z0, gx, gy = (float(a) for a in args[:3]) if len(args) >= 3 else (float(args[0]), 0.0, 0.0)
                scene.base = (z0, gx, gy)
            elif kind == "step":
                scene.steps.append(Step(args[0], float(args[1]), float(args[2])))
            elif kind == "trench":
                scene.trenches.append(Trench(*(float(a) for a in args[:5])))
            elif kind == "box":
                v = [float(a) for a in args[:6]]
                if len(v) != 6:
                    raise ValueError("box needs 6 numbers")
                scene.solids.append(Box(tuple(v[:3]), tuple(v[3:])))
            elif kind == "vegetation":
                v = [float(a) for a in args]
                if len(v) not in (7, 8):
                    raise ValueError("vegetation needs 7 or 8 numbers")
                scene.vegetation.append(Vegetation(tuple(v[:3]), tuple(v[3:6]), *v[6:]))
            elif kind == "lidar":
                for kv in args:
                    key, _, val = kv.partition("=")
                    if key not in _LIDAR_KEYS:
                        raise ValueError(f"unknown lidar key {key!r}")
                    lidar_kw[key] = float(val)
            elif kind == "pose":
                t, x, y, z = (float(a) for a in args[:4])
                yaw = math.radians(float(args[4])) if len(args) > 4 else 0.0
                poses.append((t, Pose.from_yaw((x, y, z), yaw)))
            else:
                raise ValueError(f"unknown directive {kind!r}")
        except (IndexError, TypeError) as exc:
            raise ValueError(f"{where}: malformed {kind!r} line") from exc
        except ValueError as exc:
            raise ValueError(f"{where}: {exc}") from exc

    lidar = LidarModel(
        channels=int(lidar_kw.get("channels", 64)),
        azimuth_steps=int(lidar_kw.get("azimuth_steps", 1024)),
        vertical_fov=(
            math.radians(lidar_kw.get("fov_min_deg", -16.6)),
            math.radians(lidar_kw.get("fov_max_deg", 16.6)),
        ),
        max_range=lidar_kw.get("max_range", 120.0),
        range_noise_sigma=lidar_kw.get("noise", 0.0),
    )
    return SceneFile(scene, lidar, poses)


def load_scene(path) -> SceneFile:
    path = Path(path)
    return parse_scene(path.read_text(), source=str(path))
