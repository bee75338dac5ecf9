"""Level-indexed anchor container enforcing the strict octree property."""
from __future__ import annotations

import numpy as np

from .scene import (Anchor, AttributeSet, OctreeConfig, PointCloud, VoxelCoord,
                    morton_key, morton_keys, voxelize_many)


class OctreeError(ValueError):
    pass


class OctreeStore:
    """Anchors keyed by ``(ix, iy, iz)`` per level.

    Every level-``l >= 2`` anchor has its parent voxel occupied at ``l - 1``.
    Attribute vectors are flat (``cfg.num_channels``); freshly created anchors
    share one read-only zero vector until their attributes are set.
    """

    def __init__(self, cfg: OctreeConfig):
        self.cfg = cfg
        self._zero = np.zeros(cfg.num_channels)
        self._zero.flags.writeable = False
        self._levels: list[dict[tuple, np.ndarray]] = [dict() for _ in range(cfg.num_lods)]
        self._order: list[list[tuple] | None] = [None] * cfg.num_lods

    # -- access -----------------------------------------------------------

    def _level(self, level: int) -> dict:
        if not 1 <= level <= self.cfg.num_lods:
            raise OctreeError(f"level {level} outside [1, {self.cfg.num_lods}]")
        return self._levels[level - 1]

    def __len__(self):
        return sum(len(d) for d in self._levels)

    def __contains__(self, c: VoxelCoord) -> bool:
        if not 1 <= c.level <= self.cfg.num_lods:
            return False
        return (c.ix, c.iy, c.iz) in self._levels[c.level - 1]

    def count(self, level: int) -> int:
        return len(self._level(level))

    def counts(self) -> list[int]:
        return [len(d) for d in self._levels]

    def level_keys(self, level: int) -> list[tuple]:
        """``(ix, iy, iz)`` tuples of one level in Morton order."""
        order = self._order[level - 1]
        if order is None:
            keys = list(self._level(level))
            if keys:
                mk = morton_keys(np.array(keys, dtype=np.int64))
                order = [keys[i] for i in np.argsort(mk, kind="stable")]
            else:
                order = []
            self._order[level - 1] = order
        return order

    def coords(self, level: int) -> list[VoxelCoord]:
        return [VoxelCoord(*k, level) for k in self.level_keys(level)]

    def canonical_order(self) -> list[VoxelCoord]:
        """All anchors, level-major then Morton within a level."""
        out = []
        for level in range(1, self.cfg.num_lods + 1):
            out.extend(self.coords(level))
        return out

    def level_array(self, level: int) -> np.ndarray:
        keys = self.level_keys(level)
        return np.array(keys, dtype=np.int64).reshape(-1, 3)

    def level_attributes(self, level: int) -> np.ndarray:
        d = self._level(level)
        keys = self.level_keys(level)
        if not keys:
            return np.zeros((0, self.cfg.num_channels))
        return np.stack([d[k] for k in keys])

    def get_attributes(self, c: VoxelCoord) -> np.ndarray:
        try:
            return self._level(c.level)[c.xyz]
        except KeyError:
            raise OctreeError(f"no anchor at {tuple(c)}") from None

    def set_attributes(self, c: VoxelCoord, values) -> None:
        d = self._level(c.level)
        if c.xyz not in d:
            raise OctreeError(f"no anchor at {tuple(c)}")
        vec = np.array(values, dtype=np.float64).reshape(-1)
        if vec.shape != (self.cfg.num_channels,):
            raise OctreeError(f"expected {self.cfg.num_channels} channels, got {vec.shape}")
        d[c.xyz] = vec

    def set_level_attributes(self, level: int, values: np.ndarray) -> None:
        """Assign a (count, C) block in canonical order."""
        values = np.asarray(values, dtype=np.float64)
        keys = self.level_keys(level)
        if values.shape != (len(keys), self.cfg.num_channels):
            raise OctreeError(f"attribute block shape {values.shape} does not match level {level}")
        d = self._levels[level - 1]
        for k, row in zip(keys, values):
            d[k] = row.copy()

    def anchor(self, c: VoxelCoord) -> Anchor:
        return Anchor(c, AttributeSet.from_flat(self.get_attributes(c), self.cfg))

    def lod_slice(self, level: int) -> list[Anchor]:
        self._level(level)
        return [self.anchor(c) for lv in range(1, level + 1) for c in self.coords(lv)]

    def children_of(self, c: VoxelCoord) -> list[VoxelCoord]:
        if c.level >= self.cfg.num_lods:
            return []
        d = self._levels[c.level]
        bx, by, bz = 2 * c.ix, 2 * c.iy, 2 * c.iz
        out = []
        for octant in range(8):
            k = (bx + (octant & 1), by + ((octant >> 1) & 1), bz + ((octant >> 2) & 1))
            if k in d:
                out.append(VoxelCoord(*k, c.level + 1))
        return out

    def has_children(self, c: VoxelCoord) -> bool:
        return bool(self.children_of(c))

    # -- mutation ---------------------------------------------------------

    def _check_bounds(self, c: VoxelCoord):
        if not 1 <= c.level <= self.cfg.num_lods:
            raise OctreeError(f"level {c.level} outside [1, {self.cfg.num_lods}]")
        n = self.cfg.grid_size(c.level)
        if not (0 <= c.ix < n and 0 <= c.iy < n and 0 <= c.iz < n):
            raise OctreeError(f"coordinate {tuple(c)} outside level grid of size {n}")

    def insert(self, c: VoxelCoord) -> bool:
        """Add a zero-attribute anchor; False if the voxel is already occupied."""
        self._check_bounds(c)
        d = self._levels[c.level - 1]
        if c.xyz in d:
            return False
        if c.level >= 2 and (c.ix >> 1, c.iy >> 1, c.iz >> 1) not in self._levels[c.level - 2]:
            raise OctreeError(f"parent of {tuple(c)} is missing; insert parents first")
        d[c.xyz] = self._zero
        self._order[c.level - 1] = None
        return True

    def remove_leaf(self, c: VoxelCoord) -> bool:
        if c not in self:
            return False
        if self.has_children(c):
            raise OctreeError(f"anchor {tuple(c)} has children and cannot be removed")
        del self._levels[c.level - 1][c.xyz]
        self._order[c.level - 1] = None
        return True

    def restricted(self, level: int) -> "OctreeStore":
        """Copy holding only levels ``<= level`` (same config)."""
        out = OctreeStore(self.cfg)
        for lv in range(level):
            out._levels[lv] = dict(self._levels[lv])
        return out

    # -- checks -----------------------------------------------------------

    def validate(self) -> str | None:
        """Return ``None`` when all invariants hold, else a description of the first violation."""
        for lv, d in enumerate(self._levels, start=1):
            n = self.cfg.grid_size(lv)
            parents = self._levels[lv - 2] if lv >= 2 else None
            for k, vec in d.items():
                if len(k) != 3 or not all(0 <= v < n for v in k):
                    return f"anchor {k} at level {lv} out of bounds [0, {n})"
                if vec.shape != (self.cfg.num_channels,):
                    return f"anchor {k} at level {lv} has attribute shape {vec.shape}"
                if parents is not None and (k[0] >> 1, k[1] >> 1, k[2] >> 1) not in parents:
                    return f"anchor {k} at level {lv} has no parent at level {lv - 1}"
        # dict keys guarantee uniqueness per (level, coord)
        return None

    def dump(self) -> str:
        """One ``level ix iy iz`` line per anchor in canonical order."""
        return "".join(f"{c.level} {c.ix} {c.iy} {c.iz}\n" for c in self.canonical_order())

    def same_content(self, other: "OctreeStore") -> bool:
        if self.cfg != other.cfg or self.counts() != other.counts():
            return False
        for a, b in zip(self._levels, other._levels):
            if a.keys() != b.keys():
                return False
            if any(not np.array_equal(a[k], b[k]) for k in a):
                return False
        return True


def build_from_points(cfg: OctreeConfig, pc) -> OctreeStore:
    """Voxelise every point at the finest level and materialise its ancestor chain."""
    pts = pc.points if isinstance(pc, PointCloud) else np.asarray(pc, dtype=np.float64)
    pts = pts.reshape(-1, 3)
    if len(pts) == 0:
        raise OctreeError("cannot build an octree from an empty point cloud")
    store = OctreeStore(cfg)
    idx = np.unique(voxelize_many(cfg, pts, cfg.num_lods), axis=0)
    for level in range(cfg.num_lods, 0, -1):
        store._levels[level - 1] = dict.fromkeys(map(tuple, idx.tolist()), store._zero)
        if level > 1:
            idx = np.unique(idx >> 1, axis=0)
    return store


def canonical_sort(keys) -> list:
    return sorted(keys, key=morton_key)
