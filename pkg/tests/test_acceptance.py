"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run standalone with ``python3 tests/test_acceptance.py`` or through pytest,
which repeats the lines in its terminal summary.
"""
import math
import struct
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from progs.adjust import AdjustParams, adjust_step, grow  # noqa: E402
from progs.bitstream import (decode_prefix, encode_scene_with_reconstruction,  # noqa: E402
                             encode_structural, inspect, pack_structural, reconstruct_children,
                             unpack_structural)
from progs.entropy import (EntropyParams, GaussianCoder, MlpWeights, entropy_bits,  # noqa: E402
                           quantize, serialize_weights)
from progs.errors import StructuralOverflowError  # noqa: E402
from progs.hashgrid import HashGrid, HashGridConfig, hash_bit_cost  # noqa: E402
from progs import hashgrid  # noqa: E402
from progs.objectives import c2f_loss, info_nce, mi_estimate, ssim  # noqa: E402
from progs.octree import build_from_points  # noqa: E402
from progs.rangecoder import RangeEncoder, cdf_quantize, decode, encode  # noqa: E402
from progs.octree import OctreeError  # noqa: E402
from progs.scene import OctreeConfig  # noqa: E402
from progs.synth import (fill_attributes, random_config, random_points,  # noqa: E402
                         random_scene, random_stats)

from test_adjust import brute_force_grow  # noqa: E402

RESULTS: dict[int, str] = {}

# Bin entropy (bits) of N(0, 0.1) quantized with unit-centred bins of width q,
# evaluated once at 40 significant digits with mpmath and cross-checked with
# an erfc summation in double precision.
ANALYTIC_BIN_ENTROPY = {
    1.0: 1.3287385677553647e-05,
    0.001: 8.6909577861596562,
    0.2: 1.241195646011676,
}


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


def _log_uniform_int(rng, lo, hi):
    return int(round(math.exp(rng.uniform(math.log(lo), math.log(hi)))))


# 1 -------------------------------------------------------------------------

def test_octree_invariants_under_fuzz():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    violations = 0
    for _ in range(1000):
        cfg = random_config(rng)
        store = build_from_points(cfg, random_points(rng, cfg, _log_uniform_int(rng, 10, 10_000),
                                                     clustered=bool(rng.integers(0, 2))))
        violations += store.validate() is not None
    stores = 0
    iterations = 0
    while iterations < 1000:
        cfg = random_config(rng)
        store = build_from_points(cfg, random_points(rng, cfg, _log_uniform_int(rng, 10, 400)))
        stores += 1
        for _ in range(10):
            fill_attributes(rng, store)
            try:
                report = adjust_step(store, random_stats(rng, store), AdjustParams(tau_o=0.3))
            except OctreeError:
                violations += 1
                break
            violations += store.validate() is not None
            violations += report.anchor_counts_after != store.counts()
            iterations += 1
            # random gradients grow a store geometrically; rotate to a fresh one
            if len(store) == 0 or len(store) > 3000:
                break
    elapsed = time.perf_counter() - t0
    record(1, violations == 0 and elapsed < 60,
           f"1000 builds + {iterations} adjust steps ({stores} stores): "
           f"{violations} violations, {elapsed:.1f} s (limit 60 s)")


# 2 -------------------------------------------------------------------------

def test_grow_matches_set_reference():
    rng = np.random.default_rng(2)
    p = AdjustParams()
    t0 = time.perf_counter()
    mismatches = 0
    sizes = []
    for _ in range(200):
        cfg = OctreeConfig(int(rng.integers(0, 4)), int(rng.integers(2, 6)), (0.0, 0.0, 0.0), 1.0)
        store = random_scene(rng, _log_uniform_int(rng, 1, 150), cfg=cfg)
        while len(store) > 500:
            store = random_scene(rng, 20, cfg=cfg)
        sizes.append(len(store))
        stats = random_stats(rng, store, p.tau_g)
        expected = brute_force_grow(store, stats.grad_mags, p)
        grow(store, stats, p)
        got = {(c.level, c.xyz) for c in store.canonical_order()}
        mismatches += got != expected
    elapsed = time.perf_counter() - t0
    record(2, mismatches == 0 and elapsed < 30,
           f"200 instances (max {max(sizes)} anchors): {mismatches} mismatches, "
           f"{elapsed:.1f} s (limit 30 s)")


# 3 -------------------------------------------------------------------------

def test_range_coder_roundtrip():
    failures = 0
    n = 100_000
    for seed in range(100):
        rng = np.random.default_rng(seed)
        tables = []
        for _ in range(32):
            size = _log_uniform_int(rng, 1, 4096)
            tables.append(cdf_quantize(rng.dirichlet(np.full(size, rng.uniform(0.05, 3.0)))))
        which = rng.integers(0, len(tables), n)
        seq = [tables[i] for i in which.tolist()]
        sizes = np.array([t.num_symbols for t in tables])[which]
        symbols = (rng.random(n) * sizes).astype(np.int64).tolist()
        failures += decode(encode(symbols, seq), seq) != symbols
    record(3, failures == 0, f"100 seeds x 10^5 symbols: {failures} failures")


# 4 -------------------------------------------------------------------------

def test_rate_matches_model_estimate():
    rng = np.random.default_rng(4)
    n = 10_000
    worst = []
    ok = True
    for mu, sigma, q in ((0.0, 3.0, 1.0), (0.4, 0.7, 1.0), (-2.0, 25.0, 1.0), (0.0, 0.1, 0.2)):
        params = EntropyParams(np.full(n, mu), np.full(n, sigma), np.full(n, q))
        symbols = quantize(rng.normal(mu, sigma, n), q)
        enc = RangeEncoder()
        GaussianCoder().encode(enc, symbols, params)
        actual = 8 * len(enc.finish())
        estimate = entropy_bits(symbols, params)
        ok &= abs(actual - estimate) <= 0.01 * estimate + 64
        worst.append(f"sigma/q={sigma / q:g}: {actual} vs {estimate:.0f} bits")
    record(4, ok, "; ".join(worst) + " (tolerance 1% + 64 bits)")


# 5 and 6 -------------------------------------------------------------------

_SCENES = {}


def _fuzzed_scenes():
    if not _SCENES:
        rng = np.random.default_rng(5)
        for i in range(100):
            _SCENES[i] = random_scene(rng, _log_uniform_int(rng, 1, 150), outliers=0.005,
                                      drop_finest=i % 10 == 0)
    return _SCENES


def _mlp_inputs(cfg, seed):
    grid_cfg = HashGridConfig((8, 16, 32), (64,), 4, 10)
    return (HashGrid.random(grid_cfg, seed),
            MlpWeights.seeded(cfg, 2 * grid_cfg.output_dim, 32, seed))


_STREAMS = {}


def _streams():
    if not _STREAMS:
        for i, store in _fuzzed_scenes().items():
            for mode in ("fitted", "mlp"):
                grid, weights = _mlp_inputs(store.cfg, i) if mode == "mlp" else (None, None)
                _STREAMS[i, mode] = encode_scene_with_reconstruction(store, mode, grid, weights)
    return _STREAMS


def test_full_codec_roundtrip():
    coord_errors = attr_errors = 0
    for (i, mode), (data, expected) in _streams().items():
        store = _fuzzed_scenes()[i]
        decoded = decode_prefix(data, store.cfg.num_lods)
        for level in range(1, store.cfg.num_lods + 1):
            coord_errors += decoded.level_keys(level) != store.level_keys(level)
            attr_errors += not np.array_equal(decoded.level_attributes(level),
                                              expected.level_attributes(level))
        # the expected values are the quantized originals
        for level in range(1, store.cfg.num_lods + 1):
            q = decoded.level_attributes(level)
            a = store.level_attributes(level)
            if len(a) and mode == "fitted":
                steps = decoded.cfg.q0_vector()
                attr_errors += not np.array_equal(q, quantize(a, steps) * steps)
    record(5, coord_errors == 0 and attr_errors == 0,
           f"100 scenes x 2 prior modes: {coord_errors} coordinate and "
           f"{attr_errors} attribute mismatches")


def test_prefix_property():
    failures = checks = 0
    for (i, mode), (data, _) in _streams().items():
        L = _fuzzed_scenes()[i].cfg.num_lods
        full = decode_prefix(data, L)
        for k in range(1, L + 1):
            checks += 1
            failures += not decode_prefix(data, k).same_content(full.restricted(k))
    record(6, failures == 0, f"{checks} prefix decodes over 100 scenes x 2 modes: "
                             f"{failures} mismatches")


# 7 -------------------------------------------------------------------------

def test_compression_near_analytic_entropy():
    rng = np.random.default_rng(7)
    cfg = OctreeConfig(3, 3, (0.0, 0.0, 0.0), 1.0)
    store = build_from_points(cfg, random_points(rng, cfg, 2000, clustered=False))
    for level in range(1, cfg.num_lods + 1):
        store.set_level_attributes(level, rng.normal(0, 0.1, (store.count(level), cfg.num_channels)))
    data, _ = encode_scene_with_reconstruction(store, "fitted")
    payload_bits = 8 * sum(c["attribute_bytes"] for c in inspect(data)["chunks"])
    symbols = len(store) * cfg.num_channels
    coded = payload_bits / symbols
    steps = cfg.q0_vector()
    analytic = float(np.mean([ANALYTIC_BIN_ENTROPY[float(q)] for q in steps]))
    rel = abs(coded - analytic) / analytic
    record(7, rel <= 0.05, f"{symbols} symbols: {coded:.4f} coded vs {analytic:.4f} analytic "
                           f"bits/symbol ({100 * rel:.2f}% off, limit 5%)")


# 8 -------------------------------------------------------------------------

def test_structural_addressing():
    rng = np.random.default_rng(8)
    n = 1_000_000
    prev = rng.integers(0, 2**19, (2**20, 3))
    parents = rng.integers(0, 2**20, n)
    octants = rng.integers(0, 8, n)
    p, o = unpack_structural(pack_structural(parents, octants), n)
    coords = reconstruct_children(prev, p, o)
    base = prev[parents]
    expected = np.stack([2 * base[:, 0] + (octants & 1), 2 * base[:, 1] + (octants >> 1 & 1),
                         2 * base[:, 2] + (octants >> 2 & 1)], axis=1)
    exact = np.array_equal(coords, expected)
    over = [(i, 0, 0) for i in range(2**20 + 1)]
    try:
        encode_structural(np.array([[0, 0, 0]]), over, 2)
        raised = False
    except StructuralOverflowError:
        raised = True
    record(8, exact and raised, f"10^6 pairs exact: {exact}; "
                                f"2^20+1 parents raise StructuralOverflowError: {raised}")


# 9 -------------------------------------------------------------------------

def test_objectives():
    rng = np.random.default_rng(9)
    x = rng.random((32, 32, 3))
    s = ssim(x, x)
    c2f = c2f_loss([(x, x), (1 - x, 1 - x)])
    a = rng.normal(size=16)
    nce = info_nce(a, a, np.tile(a, (100, 1)))
    u = rng.integers(0, 16, 100_000) + 0.5
    mi_same = mi_estimate(u, u)
    mi_indep = mi_estimate(rng.random(100_000), rng.random(100_000))
    checks = {
        "ssim(x,x)=1": abs(s - 1) <= 1e-9,
        "c2f identical=0": c2f == 0,
        "info_nce=ln100": abs(nce - math.log(100)) <= 1e-9,
        "MI identical ~ ln16": abs(mi_same - math.log(16)) <= 0.02 * math.log(16),
        "MI independent < 0.02": mi_indep < 0.02,
    }
    record(9, all(checks.values()),
           f"ssim={s:.12f} c2f={c2f} nce-ln100={nce - math.log(100):.2e} "
           f"MI_same={mi_same:.4f} (ln16={math.log(16):.4f}) MI_indep={mi_indep:.5f}")


# 10 ------------------------------------------------------------------------

def test_hash_accounting():
    rng = np.random.default_rng(10)
    worst = 0.0
    for seed in range(100):
        frac = rng.uniform(0.02, 0.98)
        cfg = HashGridConfig((16, 32), (64,), 4, int(rng.integers(6, 12)))
        tables = np.where(rng.random((cfg.num_levels, cfg.table_size, 4)) < frac, 1, -1)
        grid = HashGrid(cfg, tables)
        m = grid.num_entries
        f = float((tables == 1).sum()) / m
        h2 = -f * math.log2(f) - (1 - f) * math.log2(1 - f)
        worst = max(worst, abs(hash_bit_cost(grid) - m * h2))
    size_ok = True
    for i, store in list(_fuzzed_scenes().items())[:20]:
        grid, weights = _mlp_inputs(store.cfg, i)
        for mode in ("fitted", "mlp"):
            data, _ = encode_scene_with_reconstruction(store, mode, grid, weights)
            fixed = struct.calcsize("<4sBBB4d3H3fB")
            if mode == "mlp":
                actual = fixed + 4 + len(hashgrid.serialize(grid)) + 4 + len(serialize_weights(weights))
            else:
                actual = fixed + 4 * store.cfg.num_lods * store.cfg.num_channels * 2
            # the header is the prefix of the stream before the first chunk
            first = data[actual:actual + 5]
            report = inspect(data)
            size_ok &= report["header"]["total_bytes"] == actual
            size_ok &= struct.unpack("<BI", first)[0] == 1
            size_ok &= report["header"]["total_bytes"] + sum(
                c["total_bytes"] for c in report["chunks"]) == len(data)
    record(10, worst <= 1e-9 and size_ok,
           f"max |cost - M*H2| over 100 grids = {worst:.2e} (limit 1e-9); "
           f"header sizes exact: {size_ok}")


if __name__ == "__main__":
    order = [test_octree_invariants_under_fuzz, test_grow_matches_set_reference,
             test_range_coder_roundtrip, test_rate_matches_model_estimate,
             test_full_codec_roundtrip, test_prefix_property,
             test_compression_near_analytic_entropy, test_structural_addressing,
             test_objectives, test_hash_accounting]
    failed = 0
    for t in order:
        try:
            t()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
