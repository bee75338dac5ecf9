"""Command-line entry point: ``progs <command> ...``.

Exit codes: 0 success, 1 usage error, 2 validation or invariant failure,
3 I/O or format error.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

from . import bitstream, hashgrid, io
from .adjust import adjust_step
from .analysis import analyze_scene
from .config import Config, load_config
from .entropy import MlpWeights, load_weights, save_weights
from .errors import FormatError
from .octree import build_from_points
from .scene import estimate_bbox

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _clean(obj):
    # strict JSON has no infinities
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _emit(report: dict, as_json: bool, lines=None) -> None:
    if as_json or lines is None:
        print(json.dumps(_clean(report), indent=2, sort_keys=True))
    else:
        for line in lines:
            print(line)


def _config(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    if getattr(args, "seed", None) is not None:
        from dataclasses import replace
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _grid_and_weights(args, cfg: Config, store_cfg):
    grid = hashgrid.load(args.grid) if args.grid else hashgrid.HashGrid.random(cfg.hash_config(), cfg.seed)
    if args.weights:
        weights = load_weights(args.weights)
    else:
        weights = MlpWeights.seeded(store_cfg, 2 * grid.cfg.output_dim, cfg.mlp_hidden, cfg.seed)
    return grid, weights


def cmd_build(args) -> int:
    cfg = _config(args)
    pc = io.read_points(args.points)
    bbox_min, side = estimate_bbox(pc.points, cfg.bbox_margin)
    store = build_from_points(cfg.octree(bbox_min, side), pc)
    io.write_scene(args.out, store)
    report = {"points": len(pc.points), "anchors_per_level": store.counts(),
              "bbox_min": list(bbox_min), "bbox_side": side}
    _emit(report, args.json, [f"level {l}: {n} anchors" for l, n in enumerate(store.counts(), 1)])
    return EXIT_OK


def cmd_adjust(args) -> int:
    cfg = _config(args)
    store = io.read_scene(args.scene)
    stats = io.read_stats(args.stats, store.cfg.dim_o)
    report = adjust_step(store, stats, cfg.adjust_params())
    io.write_scene(args.out, store)
    _emit(report.to_dict(), True)
    return EXIT_OK


def cmd_encode(args) -> int:
    cfg = _config(args)
    store = io.read_scene(args.scene)
    mode = args.mode or cfg.prior_mode
    grid = weights = None
    if mode == "mlp":
        grid, weights = _grid_and_weights(args, cfg, store.cfg)
    data = bitstream.encode_scene(store, mode, grid, weights)
    Path(args.out).write_bytes(data)
    report = {"mode": mode, "bytes": len(data), "anchors": len(store)}
    _emit(report, args.json, [f"wrote {len(data)} bytes ({len(store)} anchors, {mode} prior)"])
    return EXIT_OK


def cmd_decode(args) -> int:
    data = Path(args.stream).read_bytes()
    store = bitstream.decode_prefix(data, args.lod)
    io.write_scene(args.out, store)
    report = {"lod": args.lod, "anchors_per_level": store.counts()}
    _emit(report, args.json, [f"decoded {len(store)} anchors"])
    return EXIT_OK


def cmd_inspect(args) -> int:
    report = bitstream.inspect(Path(args.stream).read_bytes())
    lines = [f"header: {report['header']['total_bytes']} bytes"]
    lines += [f"lod {c['level']}: {c['anchors']} anchors, {c['structural_bytes']} structural, "
              f"{c['attribute_bytes']} attribute bytes" for c in report["chunks"]]
    _emit(report, args.json, lines)
    return EXIT_OK


def cmd_stream_sim(args) -> int:
    report = bitstream.simulate_stream(Path(args.stream).read_bytes())
    lines = [f"lod {r['lod']}: {r['cumulative_bytes']} bytes, {r['anchors']} anchors, "
             f"{r['gaussians']} gaussians, prefix {'ok' if r['prefix_ok'] else 'MISMATCH'}"
             for r in report["lods"]]
    _emit(report, args.json, lines)
    return EXIT_OK if report["ok"] else EXIT_INVALID


def _render_pairs(directory, num_lods: int):
    d = Path(directory)
    gt = io.read_png(d / "gt.png")
    pairs = []
    for level in range(1, num_lods + 1):
        path = d / f"lod_{level}.png"
        if not path.exists():
            raise FileNotFoundError(f"missing render {path}")
        img = io.read_png(path)
        if img.shape != gt.shape:
            raise ValueError(f"{path} has shape {img.shape}, gt.png has {gt.shape}")
        pairs.append((img, gt))
    return pairs


def cmd_analyze(args) -> int:
    cfg = _config(args)
    store = io.read_scene(args.scene)
    stats = io.read_stats(args.stats, store.cfg.dim_o) if args.stats else None
    pairs = _render_pairs(args.renders, store.cfg.num_lods) if args.renders else None
    grid = hashgrid.load(args.grid) if args.grid else None
    weights = load_weights(args.weights) if args.weights else None
    report = analyze_scene(store, cfg, stats, pairs, grid, weights, args.nce_samples, cfg.seed)
    _emit(report, True)
    return EXIT_OK


def cmd_make_grid(args) -> int:
    cfg = _config(args)
    hashgrid.save(hashgrid.HashGrid.random(cfg.hash_config(), cfg.seed), args.out)
    return EXIT_OK


def cmd_make_weights(args) -> int:
    cfg = _config(args)
    in_dim = 2 * cfg.hash_config().output_dim
    save_weights(MlpWeights.seeded(cfg.octree(), in_dim, cfg.mlp_hidden, cfg.seed), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="progs", description="Progressive octree codec for anchor-based Gaussian scenes.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, fn, help_text, seeded=False):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--json", action="store_true", help="print a JSON report")
        if seeded:
            sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.set_defaults(func=fn)
        return sp

    sp = command("build", cmd_build, "build a scene from a point cloud (.ply or raw)")
    sp.add_argument("points")
    sp.add_argument("--out", required=True)

    sp = command("adjust", cmd_adjust, "grow and prune anchors from training statistics")
    sp.add_argument("scene")
    sp.add_argument("--stats", required=True)
    sp.add_argument("--out", required=True)

    sp = command("encode", cmd_encode, "encode a scene into a progressive stream", seeded=True)
    sp.add_argument("scene")
    sp.add_argument("--out", required=True)
    sp.add_argument("--mode", choices=sorted(bitstream.MODES))
    sp.add_argument("--grid", help="hash grid file (mlp mode); seeded random if omitted")
    sp.add_argument("--weights", help="MLP weights file (mlp mode); seeded if omitted")

    sp = command("decode", cmd_decode, "decode the first LoDs of a stream")
    sp.add_argument("stream")
    sp.add_argument("--lod", type=int, required=True)
    sp.add_argument("--out", required=True)

    sp = command("inspect", cmd_inspect, "byte accounting of a stream")
    sp.add_argument("stream")

    sp = command("stream-sim", cmd_stream_sim, "decode every prefix and verify it")
    sp.add_argument("stream")

    sp = command("analyze", cmd_analyze, "evaluate the objective terms on a scene", seeded=True)
    sp.add_argument("--scene", required=True)
    sp.add_argument("--stats")
    sp.add_argument("--renders", help="directory with lod_<l>.png and gt.png")
    sp.add_argument("--nce-samples", type=int, help="anchors sampled for the contrastive term "
                    "(default: 5%% of non-root anchors)")
    sp.add_argument("--grid")
    sp.add_argument("--weights")

    sp = command("make-grid", cmd_make_grid, "write a seeded random hash grid", seeded=True)
    sp.add_argument("--out", required=True)

    sp = command("make-weights", cmd_make_weights, "write seeded MLP weights", seeded=True)
    sp.add_argument("--out", required=True)
    return p


def _limit_threads():
    n = os.environ.get("PROGS_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(1, int(n)))


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:  # --help or a usage error
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    limiter = _limit_threads()
    try:
        return args.func(args)
    except (FormatError, OSError) as e:
        print(f"progs: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"progs: {e}", file=sys.stderr)
        return EXIT_INVALID
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
