"""Evaluate every objective term on a stored scene."""
from __future__ import annotations

import numpy as np

from .adjust import AdjustParams, Significance, check_stats, classify
from .bitstream import estimate_bits
from .config import Config
from .entropy import MlpWeights, normalized_rate
from .hashgrid import HashGrid, hash_bit_cost
from .objectives import c2f_loss, info_nce, mi_estimate, psnr, ssim, total_loss, volume_loss
from .octree import OctreeStore
from .scene import GaussianStats, parent_coord


def gaussian_scales(store: OctreeStore) -> np.ndarray:
    """(N * dim_o, 3) scales of the spawned Gaussians.

    The last three scaling channels act as the Gaussian scale (the first three
    scale offsets); with fewer than six channels the first three are used.
    Offsets of one anchor share its scale.
    """
    cfg = store.cfg
    if cfg.dim_s < 3 or len(store) == 0:
        return np.zeros((0, 3))
    lo = cfg.dim_f + (3 if cfg.dim_s >= 6 else 0)
    rows = np.concatenate([store.level_attributes(l) for l in range(1, cfg.num_lods + 1)])
    return np.repeat(np.abs(rows[:, lo:lo + 3]), cfg.dim_o, axis=0)


def parent_child_pairs(store: OctreeStore) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Child attributes, parent attributes and the parent's canonical index."""
    order = store.canonical_order()
    index = {c: i for i, c in enumerate(order)}
    kids = [c for c in order if c.level > 1]
    C = store.cfg.num_channels
    if not kids:
        return np.zeros((0, C)), np.zeros((0, C)), np.zeros(0, dtype=np.int64)
    child = np.array([store.get_attributes(c) for c in kids])
    parents = [parent_coord(c) for c in kids]
    parent = np.array([store.get_attributes(p) for p in parents])
    return child, parent, np.array([index[p] for p in parents])


def nce_average(store: OctreeStore, samples: int | None, negatives: int, temperature: float,
                rng: np.random.Generator) -> float | None:
    """Mean contrastive loss over a uniform sample of non-root anchors.

    Negatives are drawn with replacement from anchors that are neither the
    sample itself nor its parent.
    """
    order = store.canonical_order()
    n = len(order)
    index = {c: i for i, c in enumerate(order)}
    kids = [i for i, c in enumerate(order) if c.level > 1]
    if not kids or n < 3:
        return None
    if samples is None:
        samples = max(1, round(0.05 * len(kids)))
    samples = min(samples, len(kids))
    attrs = np.array([store.get_attributes(c) for c in order])
    picked = rng.choice(np.array(kids), size=samples, replace=False)
    losses = []
    for i in picked.tolist():
        p = index[parent_coord(order[i])]
        lo, hi = sorted((i, p))
        # map [0, n-2) onto indices skipping lo and hi
        j = rng.integers(0, n - 2, size=negatives)
        j = j + (j >= lo)
        j = j + (j >= hi)
        losses.append(info_nce(attrs[i], attrs[p], attrs[j], temperature))
    return float(np.mean(losses))


def stats_summary(store: OctreeStore, stats: GaussianStats, p: AdjustParams) -> dict:
    order = store.canonical_order()
    counts = {s.name.lower(): 0 for s in Significance}
    for c, row in zip(order, stats.grad_mags):
        for g in row.tolist():
            counts[classify(g, p, c.level).name.lower()] += 1
    return {
        "anchors": len(stats),
        "mean_opacity": float(stats.opacity.mean()) if len(stats) else 0.0,
        "prunable_leaves": int(sum(o <= p.tau_o and not store.has_children(c)
                                   for c, o in zip(order, stats.opacity.tolist()))),
        "gaussian_significance": counts,
    }


def analyze_scene(store: OctreeStore, cfg: Config, stats: GaussianStats | None = None,
                  render_pairs=None, grid: HashGrid | None = None,
                  weights: MlpWeights | None = None, nce_samples: int | None = None,
                  seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    w = cfg.loss_weights()
    mode = "mlp" if grid is not None and weights is not None else "fitted"
    n = len(store)
    level_bits = estimate_bits(store, mode, grid, weights) if n else [0.0] * store.cfg.num_lods
    hash_bits = hash_bit_cost(grid) if mode == "mlp" else 0.0
    rate = normalized_rate(sum(level_bits) + hash_bits, n, store.cfg) if n else 0.0

    vol = volume_loss(gaussian_scales(store))
    nce = nce_average(store, nce_samples, cfg.nce_negatives, cfg.nce_temperature, rng)
    child, parent, _ = parent_child_pairs(store)
    mi = mi_estimate(child, parent, cfg.mi_bins) if len(child) else None

    out = {
        "anchors": n,
        "anchors_per_level": store.counts(),
        "prior_mode": mode,
        "rate": {"attribute_bits_per_level": level_bits, "hash_bits": hash_bits,
                 "bits_per_symbol": rate},
        "volume": vol,
        "info_nce": nce,
        "parent_child_mi": mi,
        "c2f": None,
    }
    if render_pairs:
        out["c2f"] = c2f_loss(render_pairs, w.lambda_ssim)
        out["per_level_images"] = [{"lod": k + 1, "psnr": psnr(r, g), "ssim": ssim(r, g)}
                                   for k, (r, g) in enumerate(render_pairs)]
    if stats is not None:
        check_stats(store, stats)
        out["stats"] = stats_summary(store, stats, cfg.adjust_params())
    # absent terms contribute zero to the composition
    out["total"] = total_loss(out["c2f"] or 0.0, vol, nce or 0.0, rate, w)
    out["weights"] = {"lambda_ssim": w.lambda_ssim, "lambda_vol": w.lambda_vol,
                      "lambda_nce": w.lambda_nce, "lambda_e": w.lambda_e}
    return out
