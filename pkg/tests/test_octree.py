import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from progs.octree import OctreeError, OctreeStore, build_from_points
from progs.scene import VoxelCoord, morton_key

from conftest import random_store, small_config


def _reference_levels(cfg, pts):
    """Occupied voxels per level, from integer division of each point's finest voxel."""
    L = cfg.num_lods
    v = cfg.bbox_side / 2 ** (cfg.base_depth + L)
    top = cfg.grid_size(L) - 1
    levels = {l: set() for l in range(1, L + 1)}
    for p in pts:
        leaf = tuple(min(int(np.floor((x - b) / v + 0.5)), top) for x, b in zip(p, cfg.bbox_min))
        for l in range(L, 0, -1):
            levels[l].add(tuple(c // 2 ** (L - l) for c in leaf))
    return levels


def test_single_point_gives_one_chain():
    cfg = small_config()
    store = build_from_points(cfg, [(0.3, 0.6, 0.9)])
    assert store.counts() == [1] * cfg.num_lods
    assert store.validate() is None


def test_duplicate_points_collapse():
    cfg = small_config()
    a = build_from_points(cfg, [(0.3, 0.6, 0.9)])
    b = build_from_points(cfg, [(0.3, 0.6, 0.9), (0.3 + 1e-6, 0.6, 0.9)])
    assert a.same_content(b)


def test_empty_cloud_rejected():
    with pytest.raises(OctreeError):
        build_from_points(small_config(), np.zeros((0, 3)))


def test_build_matches_set_reference(rng):
    cfg = small_config(base_depth=1, num_lods=4)
    for _ in range(10):
        pts = rng.random((100, 3))
        store = build_from_points(cfg, pts)
        assert store.validate() is None
        ref = _reference_levels(cfg, pts)
        for l in range(1, cfg.num_lods + 1):
            assert set(store.level_keys(l)) == ref[l]
        counts = store.counts()
        assert all(a <= b for a, b in zip(counts, counts[1:]))


def test_insert_semantics():
    cfg = small_config()
    store = OctreeStore(cfg)
    assert store.insert(VoxelCoord(1, 2, 3, 1))
    assert not store.insert(VoxelCoord(1, 2, 3, 1))
    assert store.counts()[0] == 1
    assert store.insert(VoxelCoord(3, 4, 7, 2))
    with pytest.raises(OctreeError):
        store.insert(VoxelCoord(0, 0, 0, 3))
    with pytest.raises(OctreeError):
        store.insert(VoxelCoord(8, 0, 0, 1))  # level-1 grid is 8 wide


def test_remove_leaf():
    store = build_from_points(small_config(), [(0.5, 0.5, 0.5)])
    root = store.coords(1)[0]
    with pytest.raises(OctreeError):
        store.remove_leaf(root)
    assert not store.remove_leaf(VoxelCoord(0, 0, 0, 1))
    for l in range(4, 0, -1):
        assert store.remove_leaf(store.coords(l)[0])
    assert len(store) == 0


def test_new_anchor_attributes_are_independent():
    cfg = small_config()
    store = OctreeStore(cfg)
    a, b = VoxelCoord(0, 0, 0, 1), VoxelCoord(1, 0, 0, 1)
    store.insert(a)
    store.insert(b)
    store.set_attributes(a, np.ones(cfg.num_channels))
    assert not store.get_attributes(b).any()


def test_lod_slice(rng):
    store = random_store(rng, small_config(), 60)
    assert len(store.lod_slice(4)) == len(store)
    assert [a.coord.level for a in store.lod_slice(1)] == [1] * store.count(1)
    for l in range(1, 4):
        small = [a.coord for a in store.lod_slice(l)]
        big = [a.coord for a in store.lod_slice(l + 1)]
        assert big[:len(small)] == small


def test_canonical_order_is_level_then_morton(rng):
    store = random_store(rng, small_config(), 80)
    order = store.canonical_order()
    keys = [(c.level, morton_key(c.xyz)) for c in order]
    assert keys == sorted(keys)


def test_validate_reports_orphans():
    cfg = small_config()
    store = OctreeStore(cfg)
    store._levels[1][(2, 2, 2)] = store._zero
    assert "no parent" in store.validate()


def test_restricted(rng):
    store = random_store(rng, small_config(), 30, attr_scale=1.0)
    part = store.restricted(2)
    assert part.counts() == store.counts()[:2] + [0, 0]
    assert part.validate() is None


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 200), st.integers(0, 2**32 - 1))
def test_build_always_valid(n, seed):
    store = random_store(np.random.default_rng(seed), small_config(base_depth=3, num_lods=5), n)
    assert store.validate() is None
    assert store.count(5) <= n
