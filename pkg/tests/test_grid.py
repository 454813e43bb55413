import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxterrain.grid import (
    MAX_MISSES,
    Empty,
    GridSpec,
    MapOrigin,
    Occupied,
    VoxelMap,
    VoxelStats,
    decode_empty,
    decode_lookup,
    encode_empty,
    query,
    snap_origin,
    voxel_bounds,
    voxel_density,
    world_to_index,
)


class TestGridSpec:
    def test_defaults(self):
        spec = GridSpec()
        assert spec.dims == (256, 256, 64)
        assert spec.resolution == 0.4

    @pytest.mark.parametrize("dims,res", [((0, 4, 4), 0.4), ((4, 4), 0.4), ((4, 4, 4), 0.0), ((4, 4, 4), -1.0)])
    def test_rejects_bad_values(self, dims, res):
        with pytest.raises(ValueError):
            GridSpec(dims, res)


class TestSnapOrigin:
    def test_centred_at_zero(self):
        o = snap_origin((0.0, 0.0, 0.0), GridSpec())
        assert o.index == (-128, -128, -32)
        np.testing.assert_allclose(o.world, (-51.2, -51.2, -12.8), atol=1e-12)

    def test_rounds_to_lattice(self):
        # round(0.13 / 0.4) = 0, so x stays at -51.2
        o = snap_origin((0.13, 0.0, 0.0), GridSpec())
        assert o.world[0] == pytest.approx(-51.2, abs=1e-12)
        o = snap_origin((0.21, 0.0, 0.0), GridSpec())
        assert o.world[0] == pytest.approx(0.4 - 51.2, abs=1e-12)

    def test_components_are_multiples(self):
        o = snap_origin((10.0, -3.0, 1.0), GridSpec())
        for c in o.world:
            assert abs(c / 0.4 - round(c / 0.4)) < 1e-9

    def test_z_offset_fraction(self):
        spec = GridSpec((8, 8, 10), 0.5, z_offset_fraction=0.2)
        o = snap_origin((0.0, 0.0, 0.0), spec)
        assert o.index == (-4, -4, -2)


class TestWorldToIndex:
    def setup_method(self):
        spec = GridSpec((8, 8, 8), 0.4)
        self.vmap = VoxelMap.empty(spec, MapOrigin((-4, -4, -4), 0.4))

    def test_origin_corner(self):
        assert world_to_index(self.vmap.origin.world, self.vmap) == (0, 0, 0)

    def test_floor_semantics(self):
        p = self.vmap.origin.world + np.array([0.4 * 3 + 0.01, 0.01, 0.01])
        assert world_to_index(p, self.vmap) == (3, 0, 0)

    def test_out_of_bounds(self):
        beyond = self.vmap.origin.world + 0.4 * np.array([8.0, 8.0, 8.0]) + 0.4
        assert world_to_index(beyond, self.vmap) is None
        below = self.vmap.origin.world - 0.01
        assert world_to_index(below, self.vmap) is None

    @settings(max_examples=200, deadline=None)
    @given(st.tuples(*[st.floats(-1.59, 1.59, allow_nan=False)] * 3))
    def test_round_trip_contains_point(self, p):
        idx = world_to_index(p, self.vmap)
        assert idx is not None
        lo, hi = voxel_bounds(idx, self.vmap)
        assert np.all(lo <= np.asarray(p) + 1e-12) and np.all(np.asarray(p) < hi + 1e-12)


class TestQuery:
    def test_fresh_map_is_empty(self):
        vmap = VoxelMap.empty(GridSpec((4, 4, 4), 0.4), MapOrigin((0, 0, 0), 0.4))
        assert query(vmap, (1, 2, 3)) == Empty(0)

    def test_encoded_misses(self):
        vmap = VoxelMap.empty(GridSpec((4, 4, 4), 0.4), MapOrigin((0, 0, 0), 0.4))
        vmap.lookup[1, 1, 1] = -5
        assert query(vmap, (1, 1, 1)) == Empty(4)

    def test_occupied(self):
        spec = GridSpec((4, 4, 4), 0.4)
        vmap = VoxelMap.empty(spec, MapOrigin((0, 0, 0), 0.4))
        vmap.hits = np.arange(1, 9, dtype=np.int32)
        vmap.misses = np.arange(8, dtype=np.int32)
        vmap.min_height = np.linspace(0.0, 0.7, 8)
        vmap.lookup[2, 0, 1] = 7
        assert query(vmap, (2, 0, 1)) == Occupied(VoxelStats(8, 7, 0.7))

    def test_out_of_range_index(self):
        vmap = VoxelMap.empty(GridSpec((4, 4, 4), 0.4), MapOrigin((0, 0, 0), 0.4))
        with pytest.raises(IndexError):
            query(vmap, (4, 0, 0))


@pytest.mark.parametrize("hits,misses,expected", [(10, 0, 1.0), (1, 9, 0.1), (3, 3, 0.5)])
def test_voxel_density(hits, misses, expected):
    assert voxel_density(VoxelStats(hits, misses, 0.0)) == pytest.approx(expected)


def test_density_requires_hits():
    with pytest.raises(ValueError):
        voxel_density(VoxelStats(0, 3, 0.0))


class TestEncoding:
    @given(st.integers(0, MAX_MISSES))
    def test_empty_round_trip(self, m):
        v = encode_empty(m)
        assert v < 0
        assert decode_empty(v) == m

    def test_saturates(self):
        assert decode_empty(encode_empty(MAX_MISSES + 12345)) == MAX_MISSES
        assert encode_empty(MAX_MISSES) == np.int32(-1 - 2**30)

    def test_decode_lookup_splits(self):
        occ, val = decode_lookup(np.array([5, -1, -8, 0]))
        assert occ.tolist() == [True, False, False, True]
        assert val.tolist() == [5, 0, 7, 0]


def test_memory_is_proportional_to_occupied():
    spec = GridSpec((64, 64, 16), 0.4)
    vmap = VoxelMap.empty(spec, MapOrigin((0, 0, 0), 0.4))
    k = 10
    vmap.hits = np.ones(k, np.int32)
    vmap.misses = np.zeros(k, np.int32)
    vmap.min_height = np.zeros(k)
    data_bytes = vmap.hits.nbytes + vmap.misses.nbytes + vmap.min_height.nbytes
    assert data_bytes == k * 16
    assert vmap.lookup.nbytes == 4 * spec.n_cells
    assert math.isclose(vmap.lookup.nbytes / spec.n_cells, 4)
