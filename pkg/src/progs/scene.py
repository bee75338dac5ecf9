"""Core domain types and voxel arithmetic.

Voxel indices are measured from ``bbox_min``; an anchor's canonical position
is the corner of its voxel, so ``voxelize(canonical_position(a))`` returns
the anchor's own coordinate exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

# 3 x 21 interleaved bits must fit in a 64-bit Morton key
MAX_TREE_DEPTH = 21


@dataclass(frozen=True)
class OctreeConfig:
    base_depth: int = 11
    num_lods: int = 5
    bbox_min: tuple[float, float, float] = (0.0, 0.0, 0.0)
    bbox_side: float = 1.0
    dim_f: int = 32
    dim_s: int = 6
    dim_o: int = 10
    q0_f: float = 1.0
    q0_s: float = 0.001
    q0_o: float = 0.2

    def __post_init__(self):
        if self.num_lods < 1:
            raise ValueError(f"num_lods must be >= 1, got {self.num_lods}")
        if self.base_depth < 0:
            raise ValueError(f"base_depth must be >= 0, got {self.base_depth}")
        if self.base_depth + self.num_lods > MAX_TREE_DEPTH:
            raise ValueError(
                f"base_depth + num_lods must be <= {MAX_TREE_DEPTH}, "
                f"got {self.base_depth + self.num_lods}")
        if not self.bbox_side > 0:
            raise ValueError(f"bbox_side must be positive, got {self.bbox_side}")
        if min(self.dim_f, self.dim_s, self.dim_o) < 0:
            raise ValueError("attribute dimensions must be non-negative")
        if min(self.q0_f, self.q0_s, self.q0_o) <= 0:
            raise ValueError("base quantization steps must be positive")
        object.__setattr__(self, "bbox_min", tuple(float(v) for v in self.bbox_min))

    @property
    def num_channels(self) -> int:
        return self.dim_f + self.dim_s + 3 * self.dim_o

    def q0_vector(self) -> np.ndarray:
        """Base quantization step for every scalar channel (f, then s, then o)."""
        return np.concatenate([
            np.full(self.dim_f, self.q0_f),
            np.full(self.dim_s, self.q0_s),
            np.full(3 * self.dim_o, self.q0_o),
        ])

    def grid_size(self, level: int) -> int:
        return 1 << (self.base_depth + level)

    def with_bbox(self, bbox_min, bbox_side) -> "OctreeConfig":
        return OctreeConfig(
            self.base_depth, self.num_lods, tuple(bbox_min), float(bbox_side),
            self.dim_f, self.dim_s, self.dim_o, self.q0_f, self.q0_s, self.q0_o)


class VoxelCoord(NamedTuple):
    ix: int
    iy: int
    iz: int
    level: int

    @property
    def xyz(self) -> tuple[int, int, int]:
        return (self.ix, self.iy, self.iz)


@dataclass
class AttributeSet:
    f: np.ndarray
    s: np.ndarray
    o: np.ndarray  # (dim_o, 3)

    @classmethod
    def zeros(cls, cfg: OctreeConfig) -> "AttributeSet":
        return cls(np.zeros(cfg.dim_f), np.zeros(cfg.dim_s), np.zeros((cfg.dim_o, 3)))

    @classmethod
    def from_flat(cls, vec, cfg: OctreeConfig) -> "AttributeSet":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (cfg.num_channels,):
            raise ValueError(f"expected {cfg.num_channels} channels, got shape {vec.shape}")
        a, b = cfg.dim_f, cfg.dim_f + cfg.dim_s
        return cls(vec[:a].copy(), vec[a:b].copy(), vec[b:].reshape(cfg.dim_o, 3).copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.f, self.s, np.asarray(self.o).ravel()])


@dataclass
class Anchor:
    coord: VoxelCoord
    attrs: AttributeSet


@dataclass
class GaussianStats:
    """Per-anchor training statistics, aligned to the store's canonical order."""
    grad_mags: np.ndarray  # (N, dim_o), already averaged over the adjustment period
    opacity: np.ndarray  # (N,)

    def __post_init__(self):
        self.grad_mags = np.asarray(self.grad_mags, dtype=np.float64)
        self.opacity = np.asarray(self.opacity, dtype=np.float64)
        if self.grad_mags.ndim != 2 or self.opacity.shape != (self.grad_mags.shape[0],):
            raise ValueError("grad_mags must be (N, dim_o) and opacity (N,)")
        if (self.grad_mags < 0).any() or (self.opacity < 0).any():
            raise ValueError("gradient magnitudes and opacities must be non-negative")

    def __len__(self):
        return self.grad_mags.shape[0]


def _check_level(cfg: OctreeConfig, level: int):
    if not 1 <= level <= cfg.num_lods:
        raise ValueError(f"level {level} outside [1, {cfg.num_lods}]")


def voxel_size(cfg: OctreeConfig, level: int) -> float:
    _check_level(cfg, level)
    return cfg.bbox_side / 2.0 ** (cfg.base_depth + level)


def estimate_bbox(points, margin: float = 0.001):
    """Cube enclosing ``points`` padded by ``margin`` times the largest extent.

    Returns ``(bbox_min, side)``.  A degenerate cloud (all points equal) gets
    a unit extent so the cube stays non-empty.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("cannot estimate a bounding box of an empty point cloud")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    extent = float((hi - lo).max())
    if extent == 0.0:
        extent = 1.0
    bbox_min = lo - margin * extent
    return tuple(bbox_min.tolist()), extent * (1.0 + 2.0 * margin)


def _round_half_up(x):
    return np.floor(x + 0.5)


def voxelize_many(cfg: OctreeConfig, positions, level: int) -> np.ndarray:
    """Vectorised :func:`voxelize`: (N, 3) positions -> (N, 3) int64 indices."""
    v = voxel_size(cfg, level)
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    rel = pos - np.asarray(cfg.bbox_min)
    if not np.all((rel >= 0) & (rel <= cfg.bbox_side)):
        raise ValueError("position outside the scene bounding cube")
    idx = _round_half_up(rel / v).astype(np.int64)
    return np.clip(idx, 0, cfg.grid_size(level) - 1)


def inside_cube(cfg: OctreeConfig, positions) -> np.ndarray:
    rel = np.asarray(positions, dtype=np.float64) - np.asarray(cfg.bbox_min)
    return np.all((rel >= 0) & (rel <= cfg.bbox_side), axis=-1)


def voxelize(cfg: OctreeConfig, position, level: int) -> VoxelCoord:
    ix, iy, iz = voxelize_many(cfg, position, level)[0].tolist()
    return VoxelCoord(ix, iy, iz, level)


def canonical_position(cfg: OctreeConfig, coord: VoxelCoord) -> np.ndarray:
    v = voxel_size(cfg, coord.level)
    return np.asarray(cfg.bbox_min) + np.array(coord.xyz, dtype=np.float64) * v


def parent_coord(c: VoxelCoord) -> VoxelCoord:
    if c.level < 2:
        raise ValueError("a level-1 anchor has no parent")
    return VoxelCoord(c.ix >> 1, c.iy >> 1, c.iz >> 1, c.level - 1)


def octant_code(c: VoxelCoord) -> int:
    if c.level < 2:
        raise ValueError("octant code is defined for levels >= 2 only")
    return (c.ix & 1) | ((c.iy & 1) << 1) | ((c.iz & 1) << 2)


def child_coord(parent: VoxelCoord, octant: int) -> VoxelCoord:
    return VoxelCoord(2 * parent.ix + (octant & 1), 2 * parent.iy + ((octant >> 1) & 1),
                      2 * parent.iz + ((octant >> 2) & 1), parent.level + 1)


def _spread_bits(v):
    # works for python ints and uint64 arrays alike
    v = v & 0x1FFFFF
    v = (v | (v << 32)) & 0x1F00000000FFFF
    v = (v | (v << 16)) & 0x1F0000FF0000FF
    v = (v | (v << 8)) & 0x100F00F00F00F00F
    v = (v | (v << 4)) & 0x10C30C30C30C30C3
    v = (v | (v << 2)) & 0x1249249249249249
    return v


def morton_key(c) -> int:
    """Interleave z, y, x index bits; x occupies the least significant slot."""
    ix, iy, iz = c[0], c[1], c[2]
    return _spread_bits(ix) | (_spread_bits(iy) << 1) | (_spread_bits(iz) << 2)


def morton_keys(idx: np.ndarray) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.uint64).reshape(-1, 3)
    one, two = np.uint64(1), np.uint64(2)
    return (_spread_bits(idx[:, 0]) | (_spread_bits(idx[:, 1]) << one)
            | (_spread_bits(idx[:, 2]) << two))


def expand_gaussians(anchor: Anchor, cfg: OctreeConfig) -> np.ndarray:
    """Gaussian centres of an anchor's cluster: position shifted by each offset row."""
    return canonical_position(cfg, anchor.coord) + np.asarray(anchor.attrs.o).reshape(-1, 3)


@dataclass
class PointCloud:
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)

    def __len__(self):
        return len(self.points)
