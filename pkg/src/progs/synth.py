"""Synthetic scenes and training statistics for fuzzing and demos."""
from __future__ import annotations

import numpy as np

from .octree import OctreeStore, build_from_points
from .scene import GaussianStats, OctreeConfig


def random_config(rng: np.random.Generator, dims=(32, 6, 10)) -> OctreeConfig:
    base_depth = int(rng.integers(0, 6))
    num_lods = int(rng.integers(1, 6))
    bbox_min = tuple(rng.uniform(-5, 5, 3).tolist())
    side = float(np.exp(rng.uniform(-2, 3)))
    return OctreeConfig(base_depth, num_lods, bbox_min, side, *dims)


def random_points(rng: np.random.Generator, cfg: OctreeConfig, n: int, clustered: bool = True):
    """Points inside the cube; clustered clouds mimic surfaces better than uniform ones."""
    lo = np.asarray(cfg.bbox_min)
    # stay a hair inside so lo + x * side - lo cannot round past the far face
    side = cfg.bbox_side * (1.0 - 1e-9)
    if not clustered or n < 8:
        return lo + rng.random((n, 3)) * side
    k = max(1, n // 50)
    centres = rng.random((k, 3))
    pts = centres[rng.integers(0, k, n)] + rng.normal(0, 0.03, (n, 3))
    return lo + np.clip(pts, 0.0, 1.0) * side


def fill_attributes(rng: np.random.Generator, store: OctreeStore, outliers: float = 0.0) -> None:
    """Random attributes: features O(1), scalings O(q0_s), offsets O(voxel).

    ``outliers`` is the fraction of entries replaced by large values that
    fall outside any coding window.
    """
    cfg = store.cfg
    for level in range(1, cfg.num_lods + 1):
        n = store.count(level)
        if n == 0:
            continue
        v = cfg.bbox_side / cfg.grid_size(level)
        f = rng.normal(0.0, 2.0, (n, cfg.dim_f))
        s = rng.normal(0.0, 0.01, (n, cfg.dim_s))
        o = rng.normal(0.0, 2.0 * v, (n, 3 * cfg.dim_o))
        attrs = np.concatenate([f, s, o], axis=1)
        if outliers:
            mask = rng.random(attrs.shape) < outliers
            steps = cfg.q0_vector()
            attrs[mask] = (rng.integers(-30000, 30000, int(mask.sum()))
                           * np.broadcast_to(steps, attrs.shape)[mask])
        store.set_level_attributes(level, attrs)


def random_scene(rng: np.random.Generator, n_points: int | None = None,
                 cfg: OctreeConfig | None = None, outliers: float = 0.0,
                 drop_finest: bool = False) -> OctreeStore:
    cfg = cfg or random_config(rng)
    n = n_points if n_points is not None else int(np.exp(rng.uniform(np.log(1), np.log(300))))
    store = build_from_points(cfg, random_points(rng, cfg, n))
    if drop_finest and cfg.num_lods > 1:
        store = store.restricted(cfg.num_lods - 1)
    fill_attributes(rng, store, outliers)
    return store


def random_stats(rng: np.random.Generator, store: OctreeStore, tau_g: float = 5e-5) -> GaussianStats:
    """Gradient magnitudes spread across the growth thresholds, uniform opacities."""
    n, d = len(store), store.cfg.dim_o
    grads = tau_g * rng.choice([0.0, 0.5, 1.0, 1.03, 1.2, 3.0], size=(n, d))
    return GaussianStats(grads, rng.random(n))
