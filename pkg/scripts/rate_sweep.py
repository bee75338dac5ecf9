"""Coded size versus quantization step on a synthetic scene (fitted prior).

Every Q0 is multiplied by the same scale; the coded rate is compared with the
model estimate and the reconstruction error is reported per attribute group.

    python3 scripts/rate_sweep.py --scales 0.25 0.5 1 2 4
"""
import argparse

import numpy as np

from progs.bitstream import decode_prefix, encode_scene, estimate_bits, inspect
from progs.octree import build_from_points
from progs.scene import OctreeConfig
from progs.synth import fill_attributes, random_points


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=3000)
    ap.add_argument("--scales", type=float, nargs="+", default=[0.25, 0.5, 1.0, 2.0, 4.0])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    base = OctreeConfig(3, 4)
    rng = np.random.default_rng(args.seed)
    points = random_points(rng, base, args.points)
    print(f"{'scale':>6} {'bytes':>9} {'bits/sym':>9} {'model':>9} "
          f"{'rmse f':>9} {'rmse s':>9} {'rmse o':>9}")
    for scale in args.scales:
        cfg = OctreeConfig(3, 4, q0_f=base.q0_f * scale, q0_s=base.q0_s * scale,
                           q0_o=base.q0_o * scale)
        store = build_from_points(cfg, points)
        fill_attributes(np.random.default_rng(args.seed + 1), store)
        data = encode_scene(store, "fitted")
        symbols = len(store) * cfg.num_channels
        coded = 8 * sum(c["attribute_bytes"] for c in inspect(data)["chunks"]) / symbols
        model = sum(estimate_bits(store, "fitted")) / symbols
        decoded = decode_prefix(data)
        err = np.concatenate([decoded.level_attributes(k) - store.level_attributes(k)
                              for k in range(1, cfg.num_lods + 1)])
        f, s = cfg.dim_f, cfg.dim_f + cfg.dim_s
        rmse = [float(np.sqrt(np.mean(e ** 2))) for e in (err[:, :f], err[:, f:s], err[:, s:])]
        print(f"{scale:>6g} {len(data):>9} {coded:>9.4f} {model:>9.4f} "
              + " ".join(f"{r:>9.2e}" for r in rmse))


if __name__ == "__main__":
    main()
