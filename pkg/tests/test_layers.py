import math

import numpy as np
import pytest

from oracles import lstsq_plane
from voxterrain.grid import GridSpec, MapOrigin, VoxelMap
from voxterrain.layers import (
    LAYER_NAMES,
    LayerGrid,
    LayerParams,
    build_layers,
    cone_offsets,
    extract_height_map,
    negative_obstacles,
    positive_obstacles,
    slope_roughness,
)

RES = 0.4


def _grid(values, res=RES):
    return LayerGrid("surface_height", np.asarray(values, dtype=np.float64), (0.0, 0.0), res)


def _plane(n, a, b, c, res=RES):
    x = (np.arange(n) + 0.5) * res
    X, Y = np.meshgrid(x, x, indexing="ij")
    return X, Y, a * X + b * Y + c


def _vmap(voxels, dims=(8, 8, 8)):
    """Map from {(i, j, k): (hits, misses, min_height)}; slots in linear order."""
    spec = GridSpec(dims, RES)
    vmap = VoxelMap.empty(spec, MapOrigin((0, 0, 0), RES))
    keys = sorted(voxels)
    for slot, v in enumerate(keys):
        vmap.lookup[v] = slot
    vmap.hits = np.array([voxels[v][0] for v in keys], np.int32)
    vmap.misses = np.array([voxels[v][1] for v in keys], np.int32)
    vmap.min_height = np.array([voxels[v][2] for v in keys], np.float64)
    return vmap


class TestParams:
    @pytest.mark.parametrize("kw", [
        {"slope_window": 4},
        {"min_obstacle_height": 3.0},
        {"density_threshold": 0.0},
        {"min_plane_points": 2},
        {"obstacle_ground_radius": -1},
    ])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            LayerParams(**kw)


class TestHeightMap:
    def test_lowest_occupied_voxel(self):
        vmap = _vmap({(1, 1, 5): (1, 0, 2.1), (1, 1, 2): (3, 1, 0.85), (2, 3, 0): (1, 0, 0.1)})
        h = extract_height_map(vmap)
        assert h.values[1, 1] == 0.85
        assert h.values[2, 3] == 0.1
        assert np.isnan(h.values[0, 0])
        assert h.defined.sum() == 2

    def test_origin_and_resolution(self):
        spec = GridSpec((4, 4, 4), RES)
        vmap = VoxelMap.empty(spec, MapOrigin((-2, 3, 0), RES))
        h = extract_height_map(vmap)
        assert h.origin == pytest.approx((-0.8, 1.2))
        assert h.resolution == RES
        assert h.values.shape == (4, 4)


class TestSlopeRoughness:
    def test_analytic_plane(self):
        _, _, z = _plane(16, 0.3, 0.4, 1.0)
        slope, rough = slope_roughness(_grid(z))
        assert np.nanmax(np.abs(slope.values - math.atan(0.5))) <= 1e-9
        assert np.nanmax(rough.values) <= 1e-12
        assert slope.defined.all()

    def test_flat(self):
        slope, rough = slope_roughness(_grid(np.full((8, 8), 2.5)))
        assert np.all(slope.values == 0.0)
        assert np.all(rough.values == 0.0)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_lstsq_oracle(self, seed):
        rng = np.random.default_rng(seed)
        X, Y, z = _plane(12, -0.2, 0.7, 0.3)
        z = z + rng.normal(0, 0.05, z.shape)
        z[rng.random(z.shape) < 0.2] = np.nan
        params = LayerParams()
        slope, rough = slope_roughness(_grid(z), params)
        half = params.slope_window // 2
        for i in range(12):
            for j in range(12):
                win = (slice(max(i - half, 0), i + half + 1), slice(max(j - half, 0), j + half + 1))
                ok = ~np.isnan(z[win])
                if np.isnan(z[i, j]) or ok.sum() < params.min_plane_points:
                    assert np.isnan(slope.values[i, j])
                    continue
                a, b, _, mse = lstsq_plane(X[win][ok], Y[win][ok], z[win][ok])
                assert abs(rough.values[i, j] - mse) <= 1e-9
                assert abs(slope.values[i, j] - math.atan(math.hypot(a, b))) <= 1e-9

    def test_checkerboard_roughness(self):
        z = np.indices((9, 9)).sum(axis=0) % 2 * 0.2
        X, Y, _ = _plane(9, 0, 0, 0)
        _, rough = slope_roughness(_grid(z))
        _, _, _, mse = lstsq_plane(X[2:7, 2:7].ravel(), Y[2:7, 2:7].ravel(), z[2:7, 2:7].ravel())
        assert abs(rough.values[4, 4] - mse) <= 1e-9
        assert rough.values[4, 4] > 0

    def test_rotation_invariant(self):
        rng = np.random.default_rng(7)
        _, _, z = _plane(10, 0.25, -0.1, 0.0)
        z = z + rng.normal(0, 0.03, z.shape)
        s0, r0 = slope_roughness(_grid(z))
        s1, r1 = slope_roughness(_grid(np.rot90(z)))
        np.testing.assert_allclose(np.rot90(s0.values), s1.values, atol=1e-9)
        np.testing.assert_allclose(np.rot90(r0.values), r1.values, atol=1e-12)

    def test_roughness_non_negative(self):
        z = np.random.default_rng(1).normal(0, 1, (10, 10))
        _, rough = slope_roughness(_grid(z))
        assert np.all(rough.values[rough.defined] >= 0)

    def test_too_few_points(self):
        z = np.full((7, 7), np.nan)
        z[3, 3] = 0.0
        z[3, 4] = 0.1
        z[4, 3] = 0.2
        slope, _ = slope_roughness(_grid(z))
        assert not slope.defined.any()

    def test_collinear_is_undefined(self):
        z = np.full((7, 7), np.nan)
        z[3, :] = np.arange(7) * 0.1
        slope, rough = slope_roughness(_grid(z))
        assert not slope.defined.any()
        assert not rough.defined.any()


class TestPositiveObstacles:
    def _column(self, hits, misses):
        ground = {(i, j, 0): (5, 0, 0.0) for i in range(5) for j in range(5)}
        ground[(2, 2, 2)] = (hits, misses, 0.85)
        ground[(2, 2, 3)] = (hits, misses, 1.25)
        return _vmap(ground)

    def test_density_and_hard(self):
        vmap = self._column(6, 2)
        density, hard, soft = positive_obstacles(vmap, extract_height_map(vmap))
        assert density.values[2, 2] == pytest.approx(12 / 16)
        assert hard.values[2, 2] == 1.0 and soft.values[2, 2] == 0.0
        assert hard.values.sum() == 1.0

    def test_soft(self):
        vmap = self._column(1, 9)
        density, hard, soft = positive_obstacles(vmap, extract_height_map(vmap))
        assert density.values[2, 2] == pytest.approx(0.1)
        assert soft.values[2, 2] == 1.0 and hard.values[2, 2] == 0.0

    def test_threshold_flips_class(self):
        vmap = self._column(1, 1)
        surface = extract_height_map(vmap)
        _, hard, _ = positive_obstacles(vmap, surface, LayerParams(density_threshold=0.5))
        assert hard.values[2, 2] == 1.0
        _, hard, soft = positive_obstacles(vmap, surface, LayerParams(density_threshold=0.51))
        assert hard.values[2, 2] == 0.0 and soft.values[2, 2] == 1.0

    def test_partition(self):
        vmap = self._column(3, 4)
        density, hard, soft = positive_obstacles(vmap, extract_height_map(vmap))
        assert np.all(hard.values * soft.values == 0)
        assert np.array_equal((hard.values + soft.values) > 0, density.values > 0)

    def test_band_limits(self):
        voxels = {(1, 1, 0): (5, 0, 0.0), (1, 1, 7): (5, 0, 2.9)}
        vmap = _vmap(voxels)
        density, _, _ = positive_obstacles(vmap, extract_height_map(vmap))
        assert density.values[1, 1] == 0.0

    def test_box_top_column_uses_neighbour_ground(self):
        # a column whose lowest return is the box top still sees the ground next to it
        voxels = {(i, j, 0): (5, 0, 0.0) for i in range(5) for j in range(5) if (i, j) != (2, 2)}
        voxels[(2, 2, 2)] = (4, 0, 0.9)
        vmap = _vmap(voxels)
        surface = extract_height_map(vmap)
        _, hard, _ = positive_obstacles(vmap, surface)
        assert hard.values[2, 2] == 1.0
        _, hard, _ = positive_obstacles(vmap, surface, LayerParams(obstacle_ground_radius=0))
        assert hard.values[2, 2] == 0.0


class TestNegativeObstacles:
    def test_hole_between_levels(self):
        z = np.zeros((15, 15))
        z[:, 8:] = 1.0
        z[6:9, 6:9] = np.nan
        neg = negative_obstacles(_grid(z))
        assert neg.values[7, 7] == 1.0
        assert neg.values[z == z].sum() == 0

    def test_hole_on_flat_ground(self):
        z = np.zeros((15, 15))
        z[6:9, 6:9] = np.nan
        assert negative_obstacles(_grid(z)).values.sum() == 0

    def test_fully_defined(self):
        z = np.random.default_rng(0).normal(0, 2, (12, 12))
        assert negative_obstacles(_grid(z)).values.sum() == 0

    def test_single_direction_not_flagged(self):
        z = np.full((15, 15), np.nan)
        z[7, 10] = 0.0
        z[7, 11] = 5.0
        neg = negative_obstacles(_grid(z))
        assert neg.values[7, 7] == 0.0

    def test_search_distance(self):
        z = np.full((41, 41), np.nan)
        z[20, 20 + 16] = 0.0  # 6.4 m away, beyond 6 m
        z[20, 20 - 3] = 3.0
        assert negative_obstacles(_grid(z)).values[20, 20] == 0.0
        z[20, 20 + 15] = 0.0  # 6.0 m
        assert negative_obstacles(_grid(z)).values[20, 20] == 1.0

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(4)
        z = rng.normal(0, 1.0, (30, 30))
        z[rng.random(z.shape) < 0.4] = np.nan
        counts = [
            negative_obstacles(_grid(z), LayerParams(neg_obs_threshold=t)).values.sum()
            for t in np.linspace(0.1, 2.0, 20)
        ]
        assert all(b <= a for a, b in zip(counts, counts[1:]))
        assert counts[0] > 0

    def test_cone_offsets(self):
        params = LayerParams()
        offsets, starts = cone_offsets(params, RES)
        assert starts.shape == (params.neg_obs_directions + 1,)
        assert np.all(np.diff(starts) > 0)
        dist = np.hypot(offsets[:, 0], offsets[:, 1]) * RES
        assert dist.max() <= params.neg_obs_max_search + 1e-9
        for d in range(params.neg_obs_directions):
            ring = np.abs(offsets[starts[d]:starts[d + 1]]).max(axis=1)
            assert np.all(np.diff(ring) >= 0)
        # east cone starts at the adjacent cell
        assert offsets[starts[0]].tolist() == [1, 0]


def test_build_layers_names_and_shapes():
    voxels = {(i, j, 0): (3, 0, 0.1 * i) for i in range(8) for j in range(8)}
    stack = build_layers(_vmap(voxels))
    assert [g.name for g in stack] == list(LAYER_NAMES)
    for g in stack:
        assert g.values.shape == (8, 8)
    assert stack.slope.values[4, 4] == pytest.approx(math.atan(0.1 / RES), abs=1e-9)
