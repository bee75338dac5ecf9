"""Progressive container: one header followed by one chunk per level of detail.

Layout (all integers little-endian)::

    header  "PGS1" u8 version | u8 base_depth u8 num_lods | 3 f64 bbox_min f64 side
            | 3 u16 dims | 3 f32 q0 | u8 mode
            mode=mlp:    u32 len + hash-grid block, u32 len + MLP weights block
            mode=fitted: num_lods x channels x (f32 mu, f32 sigma)
    chunk   u8 level | u32 count | structural block | u32 payload length | payload

The structural block of level 1 holds 3 u32 voxel indices per anchor.  Deeper
levels spend 23 bits per anchor, MSB first: the parent's index within the
previous level's canonical order (20 bits), then the octant code (3 bits).
The payload is one range-coded stream of every anchor's quantized channels,
anchor-major, in canonical order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import hashgrid
from .entropy import (EntropyParams, GaussianCoder, MlpWeights, deserialize_weights,
                      dequantize, entropy_bits, fit_static_prior, predict_params, quantize,
                      serialize_weights)
from .errors import FormatError, StructuralOverflowError
from .hashgrid import HashGrid
from .octree import OctreeError, OctreeStore
from .rangecoder import RangeDecoder, RangeEncoder
from .scene import OctreeConfig, morton_keys

MAGIC = b"PGS1"
VERSION = 1
MODE_FITTED, MODE_MLP = 0, 1
MODES = {"fitted": MODE_FITTED, "mlp": MODE_MLP}
PARENT_BITS, OCTANT_BITS = 20, 3
MAX_PARENTS = 1 << PARENT_BITS
_FIXED = struct.Struct("<4sBBB4d3H3fB")
_CHUNK_HEAD = struct.Struct("<BI")
_U32 = struct.Struct("<I")


@dataclass
class Header:
    cfg: OctreeConfig
    mode: int
    grid: HashGrid | None = None
    weights: MlpWeights | None = None
    fitted: np.ndarray | None = None  # (num_lods, channels, 2) float32: mu, sigma

    def level_prior(self, level: int) -> EntropyParams:
        mu, sigma = self.fitted[level - 1, :, 0], self.fitted[level - 1, :, 1]
        return EntropyParams(mu.astype(np.float64), sigma.astype(np.float64), self.cfg.q0_vector())


def serialize_header(h: Header) -> bytes:
    c = h.cfg
    out = [_FIXED.pack(MAGIC, VERSION, c.base_depth, c.num_lods, *c.bbox_min, c.bbox_side,
                       c.dim_f, c.dim_s, c.dim_o, c.q0_f, c.q0_s, c.q0_o, h.mode)]
    if h.mode == MODE_MLP:
        for block in (hashgrid.serialize(h.grid), serialize_weights(h.weights)):
            out += [_U32.pack(len(block)), block]
    else:
        fitted = np.asarray(h.fitted, dtype="<f4")
        if fitted.shape != (c.num_lods, c.num_channels, 2):
            raise ValueError(f"fitted prior table has shape {fitted.shape}")
        out.append(fitted.tobytes())
    return b"".join(out)


def parse_header(data: bytes) -> tuple[Header, dict]:
    """Parse the header; returns it with the byte size of each header component."""
    if len(data) < _FIXED.size:
        raise FormatError("stream shorter than the fixed header")
    (magic, version, base_depth, num_lods, bx, by, bz, side, df, ds, do,
     qf, qs, qo, mode) = _FIXED.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad stream magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported stream version {version}")
    try:
        cfg = OctreeConfig(base_depth, num_lods, (bx, by, bz), side, df, ds, do, qf, qs, qo)
    except ValueError as e:
        raise FormatError(f"invalid config in header: {e}") from None
    sizes = {"fixed": _FIXED.size, "hash_grid": 0, "mlp_weights": 0, "fitted_prior": 0}
    pos = _FIXED.size
    if mode == MODE_MLP:
        blocks = []
        for name in ("hash_grid", "mlp_weights"):
            if len(data) < pos + 4:
                raise FormatError("truncated header")
            (n,) = _U32.unpack_from(data, pos)
            if len(data) < pos + 4 + n:
                raise FormatError("truncated header")
            blocks.append(bytes(data[pos + 4:pos + 4 + n]))
            sizes[name] = 4 + n
            pos += 4 + n
        grid, end = hashgrid.deserialize(blocks[0])
        weights, end2 = deserialize_weights(blocks[1])
        if end != len(blocks[0]) or end2 != len(blocks[1]):
            raise FormatError("header block length mismatch")
        if weights.channels != cfg.num_channels or weights.in_dim != 2 * grid.cfg.output_dim:
            raise FormatError("MLP weights do not match the config and hash grid")
        header = Header(cfg, mode, grid=grid, weights=weights)
    elif mode == MODE_FITTED:
        n = cfg.num_lods * cfg.num_channels * 2
        if len(data) < pos + 4 * n:
            raise FormatError("truncated header")
        fitted = np.frombuffer(data, dtype="<f4", count=n, offset=pos)
        fitted = fitted.reshape(cfg.num_lods, cfg.num_channels, 2).copy()
        if not np.all(fitted[:, :, 1] > 0):
            raise FormatError("non-positive sigma in fitted prior table")
        sizes["fitted_prior"] = 4 * n
        pos += 4 * n
        header = Header(cfg, mode, fitted=fitted)
    else:
        raise FormatError(f"unknown prior mode {mode}")
    sizes["total"] = pos
    return header, sizes


# -- structure ---------------------------------------------------------------

def encode_level1_coords(coords) -> bytes:
    return np.asarray(coords, dtype="<u4").reshape(-1, 3).tobytes()


def decode_level1_coords(block: bytes, count: int) -> np.ndarray:
    return np.frombuffer(block, dtype="<u4", count=3 * count).reshape(count, 3).astype(np.int64)


def structural_size(level: int, count: int) -> int:
    if level == 1:
        return 12 * count
    return (count * (PARENT_BITS + OCTANT_BITS) + 7) // 8


def encode_structural(coords, prev_keys, level: int | None = None) -> bytes:
    """23 bits per anchor: parent index in ``prev_keys`` (20) then octant (3)."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
    if len(prev_keys) > MAX_PARENTS:
        where = f" at level {level}" if level is not None else ""
        raise StructuralOverflowError(
            f"{len(prev_keys)} parents{where} exceed the 20-bit parent index "
            f"(max {MAX_PARENTS})")
    index = {k: i for i, k in enumerate(prev_keys)}
    try:
        parents = np.array([index[k] for k in map(tuple, (coords >> 1).tolist())], dtype=np.uint32)
    except KeyError as e:
        raise OctreeError(f"parent {e.args[0]} missing from the previous level") from None
    octants = (coords[:, 0] & 1) | ((coords[:, 1] & 1) << 1) | ((coords[:, 2] & 1) << 2)
    return pack_structural(parents, octants.astype(np.uint32))


def pack_structural(parents, octants) -> bytes:
    parents = np.asarray(parents, dtype=np.uint64)
    if parents.size and int(parents.max()) >= MAX_PARENTS:
        raise StructuralOverflowError(f"parent index {int(parents.max())} needs more than 20 bits")
    values = (parents << np.uint64(OCTANT_BITS)) | np.asarray(octants, dtype=np.uint64)
    shifts = np.arange(PARENT_BITS + OCTANT_BITS - 1, -1, -1, dtype=np.uint64)
    bits = ((values[:, None] >> shifts) & np.uint64(1)).astype(np.uint8).ravel()
    return np.packbits(bits, bitorder="big").tobytes()


def unpack_structural(block: bytes, count: int) -> tuple[np.ndarray, np.ndarray]:
    width = PARENT_BITS + OCTANT_BITS
    bits = np.unpackbits(np.frombuffer(block, dtype=np.uint8), bitorder="big")[:count * width]
    weights = 1 << np.arange(width - 1, -1, -1, dtype=np.int64)
    values = bits.reshape(count, width).astype(np.int64) @ weights
    return values >> OCTANT_BITS, values & 0b111


def reconstruct_children(prev_keys, parents, octants) -> np.ndarray:
    """Child indices ``parent * 2 + octant bit`` per axis."""
    if len(parents) and int(np.max(parents)) >= len(prev_keys):
        raise FormatError("structural parent index out of range")
    base = np.asarray(prev_keys, dtype=np.int64).reshape(-1, 3)[np.asarray(parents, dtype=np.int64)]
    octants = np.asarray(octants, dtype=np.int64)
    bits = np.stack([octants & 1, (octants >> 1) & 1, (octants >> 2) & 1], axis=1)
    return 2 * base + bits


# -- attributes --------------------------------------------------------------

def level_params(h: Header, level: int, coords: np.ndarray) -> EntropyParams:
    """Entropy parameters for one level's anchors (canonical order), shape (n, C).

    Depends only on the header and voxel coordinates, so the decoder derives
    exactly what the encoder used.
    """
    cfg = h.cfg
    n, C = len(coords), cfg.num_channels
    if h.mode == MODE_FITTED:
        prior = h.level_prior(level)
        shape = (n, C)
        return EntropyParams(np.broadcast_to(prior.mu, shape).copy(),
                             np.broadcast_to(prior.sigma, shape).copy(),
                             np.broadcast_to(prior.q, shape).copy())
    if n == 0:
        z = np.zeros((0, C))
        return EntropyParams(z, z + 1.0, z + 1.0)
    scale = float(cfg.grid_size(level))
    ctx = h.grid.query(coords / scale)
    if level == 1:
        parent_ctx = np.zeros_like(ctx)
    else:
        parent_ctx = h.grid.query((coords >> 1) / (scale / 2))
    return predict_params(h.weights, ctx, parent_ctx, cfg)


def _build_header(store: OctreeStore, mode: str, grid, weights) -> Header:
    if mode not in MODES:
        raise ValueError(f"unknown prior mode {mode!r}; expected one of {sorted(MODES)}")
    cfg = store.cfg
    if MODES[mode] == MODE_MLP:
        if grid is None or weights is None:
            raise ValueError("mlp mode needs a hash grid and MLP weights")
        if weights.in_dim != 2 * grid.cfg.output_dim or weights.channels != cfg.num_channels:
            raise ValueError("MLP weights do not match the hash grid / attribute channels")
        return Header(cfg, MODE_MLP, grid=grid, weights=weights)
    fitted = np.zeros((cfg.num_lods, cfg.num_channels, 2), dtype=np.float32)
    for level in range(1, cfg.num_lods + 1):
        prior = fit_static_prior(store.level_attributes(level), cfg)
        fitted[level - 1, :, 0] = prior.mu
        fitted[level - 1, :, 1] = prior.sigma
    # float32 rounding must not push sigma to zero
    fitted[:, :, 1] = np.maximum(fitted[:, :, 1], np.float32(1e-4))
    return Header(cfg, MODE_FITTED, fitted=fitted)


def encode_scene_with_reconstruction(store: OctreeStore, mode: str = "fitted",
                                     grid: HashGrid | None = None,
                                     weights: MlpWeights | None = None):
    """Encode ``store``; also return the store a full decode will reproduce."""
    problem = store.validate()
    if problem is not None:
        raise OctreeError(problem)
    head_bytes = serialize_header(_build_header(store, mode, grid, weights))
    # encode against the parsed header so both sides see identical numbers
    header, _ = parse_header(head_bytes)
    cfg = header.cfg
    recon = OctreeStore(cfg)
    coder = GaussianCoder()
    parts = [head_bytes]
    prev_keys: list = []
    for level in range(1, cfg.num_lods + 1):
        keys = store.level_keys(level)
        coords = np.array(keys, dtype=np.int64).reshape(-1, 3)
        if level == 1:
            structural = encode_level1_coords(coords)
        else:
            structural = encode_structural(coords, prev_keys, level)
        params = level_params(header, level, coords)
        symbols = quantize(store.level_attributes(level), params.q)
        enc = RangeEncoder()
        coder.encode(enc, symbols, params)
        payload = enc.finish()
        parts += [_CHUNK_HEAD.pack(level, len(keys)), structural, _U32.pack(len(payload)), payload]

        recon._levels[level - 1] = {k: row for k, row in zip(keys, dequantize(symbols, params.q))}
        prev_keys = keys
    return b"".join(parts), recon


def estimate_bits(store: OctreeStore, mode: str = "fitted", grid: HashGrid | None = None,
                  weights: MlpWeights | None = None) -> list[float]:
    """Model cost in bits of each level's attribute symbols, as the encoder would see it."""
    header, _ = parse_header(serialize_header(_build_header(store, mode, grid, weights)))
    bits = []
    for level in range(1, store.cfg.num_lods + 1):
        coords = np.array(store.level_keys(level), dtype=np.int64).reshape(-1, 3)
        params = level_params(header, level, coords)
        bits.append(entropy_bits(quantize(store.level_attributes(level), params.q), params))
    return bits


def encode_scene(store: OctreeStore, mode: str = "fitted", grid: HashGrid | None = None,
                 weights: MlpWeights | None = None) -> bytes:
    return encode_scene_with_reconstruction(store, mode, grid, weights)[0]


def _read(data, pos, n, what):
    if pos + n > len(data):
        raise FormatError(f"truncated {what}")
    return data[pos:pos + n], pos + n


def decode_prefix(data: bytes, k: int | None = None) -> OctreeStore:
    """Decode the header and the first ``k`` chunks (all of them if ``k`` is None)."""
    header, sizes = parse_header(data)
    cfg = header.cfg
    if k is None:
        k = cfg.num_lods
    if not 1 <= k <= cfg.num_lods:
        raise ValueError(f"LoD {k} outside [1, {cfg.num_lods}]")
    store = OctreeStore(cfg)
    coder = GaussianCoder()
    pos = sizes["total"]
    prev_keys: list = []
    for level in range(1, k + 1):
        head, pos = _read(data, pos, _CHUNK_HEAD.size, f"chunk header of level {level}")
        lv, count = _CHUNK_HEAD.unpack(head)
        if lv != level:
            raise FormatError(f"expected chunk for level {level}, found level {lv}")
        block, pos = _read(data, pos, structural_size(level, count), f"structure of level {level}")
        if level == 1:
            coords = decode_level1_coords(block, count)
        else:
            if count and not prev_keys:
                raise FormatError(f"level {level} has anchors but level {level - 1} is empty")
            coords = reconstruct_children(prev_keys, *unpack_structural(block, count))
        if count > 1 and not np.all(np.diff(morton_keys(coords).astype(np.int64)) > 0):
            raise FormatError(f"level {level} anchors are not in canonical order")
        raw, pos = _read(data, pos, 4, f"payload length of level {level}")
        (n_payload,) = _U32.unpack(raw)
        payload, pos = _read(data, pos, n_payload, f"payload of level {level}")

        keys = list(map(tuple, coords.tolist()))
        n = cfg.grid_size(level)
        if coords.size and (coords.min() < 0 or coords.max() >= n):
            raise FormatError(f"level {level} coordinate out of bounds")
        params = level_params(header, level, coords)
        symbols = coder.decode(RangeDecoder(payload), params)
        store._levels[level - 1] = dict(zip(keys, dequantize(symbols, params.q)))
        prev_keys = keys
    problem = store.validate()
    if problem is not None:
        raise FormatError(f"decoded octree is invalid: {problem}")
    return store


def inspect(data: bytes) -> dict:
    """Byte accounting per header component and per chunk; sums to ``len(data)``."""
    header, sizes = parse_header(data)
    cfg = header.cfg
    pos = sizes["total"]
    chunks = []
    while pos < len(data):
        head, pos2 = _read(data, pos, _CHUNK_HEAD.size, "chunk header")
        level, count = _CHUNK_HEAD.unpack(head)
        if not 1 <= level <= cfg.num_lods:
            raise FormatError(f"chunk level {level} out of range")
        s = structural_size(level, count)
        raw, pos3 = _read(data, pos2 + s, 4, "payload length")
        (n_payload,) = _U32.unpack(raw)
        _read(data, pos3, n_payload, "payload")
        end = pos3 + n_payload
        chunks.append({
            "level": level,
            "anchors": count,
            "overhead_bytes": _CHUNK_HEAD.size + 4,
            "structural_bytes": s,
            "attribute_bytes": n_payload,
            "total_bytes": end - pos,
            "end_offset": end,
        })
        pos = end
    return {
        "total_bytes": len(data),
        "mode": "mlp" if header.mode == MODE_MLP else "fitted",
        "num_lods": cfg.num_lods,
        "header": {
            "total_bytes": sizes["total"],
            "fixed_bytes": sizes["fixed"],
            "hash_grid_bytes": sizes["hash_grid"],
            "mlp_weights_bytes": sizes["mlp_weights"],
            "fitted_prior_bytes": sizes["fitted_prior"],
        },
        "chunks": chunks,
    }


def simulate_stream(data: bytes) -> dict:
    """Decode every prefix in order and check it against the full decode.

    Each step reads only the bytes up to the end of chunk ``k``.
    """
    report = inspect(data)
    header, _ = parse_header(data)
    cfg = header.cfg
    full = decode_prefix(data, cfg.num_lods)
    rows = []
    structural = attribute = 0
    for chunk in report["chunks"]:
        k = chunk["level"]
        prefix = data[:chunk["end_offset"]]
        part = decode_prefix(prefix, k)
        structural += chunk["structural_bytes"]
        attribute += chunk["attribute_bytes"]
        n = len(part)
        rows.append({
            "lod": k,
            "cumulative_bytes": len(prefix),
            "anchors": n,
            "gaussians": n * cfg.dim_o,
            "structural_bytes": structural,
            "attribute_bytes": attribute,
            "prefix_ok": part.same_content(full.restricted(k)),
        })
    return {"header_bytes": report["header"]["total_bytes"], "total_bytes": len(data),
            "lods": rows, "ok": all(r["prefix_ok"] for r in rows) and len(rows) == cfg.num_lods}
