"""Gradient-driven anchor growing and opacity-driven pruning."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .octree import OctreeError, OctreeStore
from .scene import GaussianStats, VoxelCoord, inside_cube, morton_key, voxel_size, voxelize_many


@dataclass(frozen=True)
class AdjustParams:
    tau_g: float = 5e-5
    beta: float = 0.01
    tau_o: float = 0.5
    period: int = 100

    def __post_init__(self):
        if not self.tau_g > 0:
            raise ValueError("tau_g must be positive")
        if self.period < 1:
            raise ValueError("period must be >= 1")


class Significance(enum.IntEnum):
    NON_SIGNIFICANT = 0
    SIGNIFICANT = 1
    VERY_SIGNIFICANT = 2


def level_threshold(p: AdjustParams, level) -> float:
    return p.tau_g * 2.0 ** (p.beta * level)


def classify(grad_mag: float, p: AdjustParams, level: int) -> Significance:
    if grad_mag > level_threshold(p, level + 1):
        return Significance.VERY_SIGNIFICANT
    if grad_mag > level_threshold(p, level):
        return Significance.SIGNIFICANT
    return Significance.NON_SIGNIFICANT


@dataclass
class GrowReport:
    candidates_per_level: list[int] = field(default_factory=list)
    spawned_per_level: list[int] = field(default_factory=list)
    dropped_outside: int = 0

    @property
    def spawned(self) -> int:
        return sum(self.spawned_per_level)


@dataclass
class PruneReport:
    pruned_per_level: list[int] = field(default_factory=list)

    @property
    def pruned(self) -> int:
        return sum(self.pruned_per_level)


def check_stats(store: OctreeStore, stats: GaussianStats):
    if len(stats) != len(store):
        raise OctreeError(f"stats cover {len(stats)} anchors but the store holds {len(store)}")
    if stats.grad_mags.shape[1] != store.cfg.dim_o:
        raise OctreeError(
            f"stats carry {stats.grad_mags.shape[1]} gradient rows per anchor, expected {store.cfg.dim_o}")


def gaussian_centres(store: OctreeStore, level: int) -> np.ndarray:
    """(n, dim_o, 3) Gaussian centres for the anchors of one level in canonical order."""
    cfg = store.cfg
    pos = np.asarray(cfg.bbox_min) + store.level_array(level) * voxel_size(cfg, level)
    offsets = store.level_attributes(level)[:, cfg.dim_f + cfg.dim_s:]
    return pos[:, None, :] + offsets.reshape(-1, cfg.dim_o, 3)


def _voxel_set(store: OctreeStore, centres: np.ndarray, level: int, report: GrowReport) -> set:
    if len(centres) == 0:
        return set()
    ok = inside_cube(store.cfg, centres)
    report.dropped_outside += int((~ok).sum())
    if not ok.any():
        return set()
    return set(map(tuple, voxelize_many(store.cfg, centres[ok], level).tolist()))


def grow(store: OctreeStore, stats: GaussianStats, p: AdjustParams) -> GrowReport:
    """Spawn anchors where Gaussians carry significant gradients.

    Levels are visited fine to coarse.  A very significant Gaussian below the
    finest level proposes a candidate one level down; a significant one
    proposes a candidate at its own level.  Candidates whose parent voxel is
    empty queue that parent, which is checked in turn at the next coarser
    level.  Candidates are inserted coarse to fine so parents always precede
    children; occupied voxels are left untouched.

    Candidates whose Gaussian centre falls outside the scene cube are dropped.
    """
    check_stats(store, stats)
    cfg = store.cfg
    L = cfg.num_lods
    report = GrowReport(dropped_outside=0)
    # stats rows follow canonical order of the store as it is now
    offsets = np.cumsum([0] + store.counts())
    cands: dict[int, set] = {lv: set() for lv in range(1, L + 2)}

    for level in range(L, 0, -1):
        cands[level] = set()
        g = stats.grad_mags[offsets[level - 1]:offsets[level]]
        centres = gaussian_centres(store, level)
        thr_here = level_threshold(p, level)
        thr_next = level_threshold(p, level + 1)
        very = g > thr_next if level < L else np.zeros_like(g, dtype=bool)
        sig = ~very & (g > thr_here)
        if level < L:
            cands[level + 1] |= _voxel_set(store, centres[very], level + 1, report)
        cands[level] |= _voxel_set(store, centres[sig], level, report)
        if level < L:
            existing = store._levels[level - 1]
            for ix, iy, iz in cands[level + 1]:
                parent = (ix >> 1, iy >> 1, iz >> 1)
                if parent not in existing:
                    cands[level].add(parent)

    for level in range(1, L + 1):
        report.candidates_per_level.append(len(cands[level]))
        spawned = 0
        for key in sorted(cands[level], key=morton_key):
            spawned += store.insert(VoxelCoord(*key, level))
        report.spawned_per_level.append(spawned)
    return report


def prune(store: OctreeStore, opacity: dict, p: AdjustParams) -> PruneReport:
    """Remove childless anchors whose opacity is at most ``tau_o``, cascading upward.

    ``opacity`` maps ``VoxelCoord`` to accumulated opacity (or is a
    :class:`GaussianStats` aligned with the store).  Anchors without an entry,
    such as ones spawned since the statistics were gathered, are kept.
    """
    if isinstance(opacity, GaussianStats):
        check_stats(store, opacity)
        opacity = dict(zip(store.canonical_order(), opacity.opacity.tolist()))
    L = store.cfg.num_lods
    pruned = [0] * L
    # one fine-to-coarse sweep reaches the fixed point: removing a level-l anchor
    # can only make level-(l-1) anchors childless
    for level in range(L, 0, -1):
        for c in store.coords(level):
            op = opacity.get(c)
            if op is not None and op <= p.tau_o and not store.has_children(c):
                store.remove_leaf(c)
                pruned[level - 1] += 1
    return PruneReport(pruned)


@dataclass
class AdjustReport:
    grow: GrowReport
    prune: PruneReport
    anchor_counts_after: list[int]

    def to_dict(self) -> dict:
        return {
            "spawned_per_level": self.grow.spawned_per_level,
            "pruned_per_level": self.prune.pruned_per_level,
            "anchor_counts_after": self.anchor_counts_after,
            "candidates_per_level": self.grow.candidates_per_level,
            "dropped_outside": self.grow.dropped_outside,
        }


def adjust_step(store: OctreeStore, stats: GaussianStats, p: AdjustParams) -> AdjustReport:
    check_stats(store, stats)
    opacity = dict(zip(store.canonical_order(), stats.opacity.tolist()))
    g = grow(store, stats, p)
    pr = prune(store, opacity, p)
    problem = store.validate()
    if problem is not None:
        raise OctreeError(f"adjustment broke the octree: {problem}")
    return AdjustReport(g, pr, store.counts())
