"""File formats: point clouds, Gaussian statistics, scene files and images.

Scene file (little-endian)::

    "PGSC" u8 version | u8 base_depth u8 num_lods | 3 f64 bbox_min f64 side
    | 3 u16 dims | 3 f32 q0 | u64 count | count x (u8 level, 3 u32 index, C f32)

Anchors are written in canonical order.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .octree import OctreeStore
from .scene import GaussianStats, OctreeConfig, PointCloud

SCENE_MAGIC = b"PGSC"
SCENE_VERSION = 1
_SCENE_HEAD = struct.Struct("<4sBBB4d3H3f")
_U64 = struct.Struct("<Q")

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


# -- point clouds -------------------------------------------------------------

def read_ply(path) -> PointCloud:
    data = Path(path).read_bytes()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    body_start = data.index(b"\n", end) + 1
    lines = data[:end].decode("ascii", errors="replace").splitlines()
    fmt = None
    elements: list[tuple[str, int, list]] = []
    for line in lines[1:]:
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise FormatError(f"{path}: property before element")
            if tok[1] == "list":
                elements[-1][2].append((tok[4], None))
            else:
                if tok[1] not in _PLY_TYPES:
                    raise FormatError(f"{path}: unknown PLY type {tok[1]}")
                elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise FormatError(f"{path}: unsupported PLY format {fmt}")
    if not elements or elements[0][0] != "vertex":
        raise FormatError(f"{path}: PLY must start with the vertex element")
    _, count, props = elements[0]
    names = [p[0] for p in props]
    if any(t is None for _, t in props):
        raise FormatError(f"{path}: list properties on vertices are not supported")
    if not {"x", "y", "z"} <= set(names):
        raise FormatError(f"{path}: vertex element lacks x, y, z")
    if fmt == "ascii":
        rows = data[body_start:].decode("ascii").split("\n")
        table = np.loadtxt(rows[:count], ndmin=2, dtype=np.float64) if count else np.zeros((0, len(names)))
        if table.shape != (count, len(names)):
            raise FormatError(f"{path}: expected {count} vertex rows of {len(names)} values")
        pts = table[:, [names.index(a) for a in "xyz"]]
    else:
        dtype = np.dtype([(n, "<" + t) for n, t in props])
        if len(data) - body_start < count * dtype.itemsize:
            raise FormatError(f"{path}: truncated vertex data")
        rec = np.frombuffer(data, dtype=dtype, count=count, offset=body_start)
        pts = np.stack([rec[a].astype(np.float64) for a in "xyz"], axis=1)
    return PointCloud(pts)


def write_ply(path, points, binary: bool = True) -> None:
    pts = np.asarray(points, dtype="<f4").reshape(-1, 3)
    fmt = "binary_little_endian" if binary else "ascii"
    head = (f"ply\nformat {fmt} 1.0\nelement vertex {len(pts)}\n"
            "property float x\nproperty float y\nproperty float z\nend_header\n").encode()
    with open(path, "wb") as fh:
        fh.write(head)
        if binary:
            fh.write(pts.tobytes())
        else:
            fh.write("".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in pts.tolist()).encode())


def read_raw_points(path) -> PointCloud:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise FormatError(f"{path}: raw point file shorter than its count")
    (count,) = _U64.unpack_from(data, 0)
    if len(data) != 8 + 12 * count:
        raise FormatError(f"{path}: expected {8 + 12 * count} bytes, found {len(data)}")
    return PointCloud(np.frombuffer(data, dtype="<f4", offset=8).reshape(count, 3))


def write_raw_points(path, points) -> None:
    pts = np.asarray(points, dtype="<f4").reshape(-1, 3)
    with open(path, "wb") as fh:
        fh.write(_U64.pack(len(pts)) + pts.tobytes())


def read_points(path) -> PointCloud:
    if str(path).lower().endswith(".ply"):
        return read_ply(path)
    return read_raw_points(path)


# -- statistics ---------------------------------------------------------------

def read_stats(path, dim_o: int) -> GaussianStats:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise FormatError(f"{path}: stats file shorter than its count")
    (count,) = _U64.unpack_from(data, 0)
    if len(data) != 8 + 4 * (dim_o + 1) * count:
        raise FormatError(f"{path}: size does not match {count} anchors with {dim_o} offsets")
    rows = np.frombuffer(data, dtype="<f4", offset=8).reshape(count, dim_o + 1).astype(np.float64)
    try:
        return GaussianStats(rows[:, :dim_o], rows[:, dim_o])
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from None


def write_stats(path, stats: GaussianStats) -> None:
    rows = np.concatenate([stats.grad_mags, stats.opacity[:, None]], axis=1).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_U64.pack(len(rows)) + rows.tobytes())


# -- scenes -------------------------------------------------------------------

def _anchor_dtype(channels: int) -> np.dtype:
    return np.dtype([("level", "u1"), ("idx", "<u4", 3), ("attrs", "<f4", channels)])


def scene_bytes(store: OctreeStore) -> bytes:
    c = store.cfg
    head = _SCENE_HEAD.pack(SCENE_MAGIC, SCENE_VERSION, c.base_depth, c.num_lods, *c.bbox_min,
                            c.bbox_side, c.dim_f, c.dim_s, c.dim_o, c.q0_f, c.q0_s, c.q0_o)
    rec = np.zeros(len(store), dtype=_anchor_dtype(c.num_channels))
    pos = 0
    for level in range(1, c.num_lods + 1):
        n = store.count(level)
        rec["level"][pos:pos + n] = level
        rec["idx"][pos:pos + n] = store.level_array(level)
        rec["attrs"][pos:pos + n] = store.level_attributes(level)
        pos += n
    return head + _U64.pack(len(rec)) + rec.tobytes()


def write_scene(path, store: OctreeStore) -> None:
    Path(path).write_bytes(scene_bytes(store))


def parse_scene(data: bytes) -> OctreeStore:
    if len(data) < _SCENE_HEAD.size + 8:
        raise FormatError("scene file too short")
    (magic, version, base_depth, num_lods, bx, by, bz, side, df, ds, do,
     qf, qs, qo) = _SCENE_HEAD.unpack_from(data, 0)
    if magic != SCENE_MAGIC or version != SCENE_VERSION:
        raise FormatError("not a scene file (bad magic or version)")
    try:
        cfg = OctreeConfig(base_depth, num_lods, (bx, by, bz), side, df, ds, do, qf, qs, qo)
    except ValueError as e:
        raise FormatError(f"invalid scene config: {e}") from None
    (count,) = _U64.unpack_from(data, _SCENE_HEAD.size)
    dtype = _anchor_dtype(cfg.num_channels)
    start = _SCENE_HEAD.size + 8
    if len(data) != start + count * dtype.itemsize:
        raise FormatError("scene file size does not match its anchor count")
    rec = np.frombuffer(data, dtype=dtype, offset=start)
    store = OctreeStore(cfg)
    levels = rec["level"].astype(np.int64)
    if count and (levels.min() < 1 or levels.max() > num_lods):
        raise FormatError("scene anchor level out of range")
    for level in range(1, num_lods + 1):
        sel = rec[levels == level]
        keys = map(tuple, sel["idx"].astype(np.int64).tolist())
        store._levels[level - 1] = dict(zip(keys, sel["attrs"].astype(np.float64)))
        if len(store._levels[level - 1]) != len(sel):
            raise FormatError(f"duplicate anchors at level {level}")
    problem = store.validate()
    if problem is not None:
        raise FormatError(f"scene violates the octree invariants: {problem}")
    return store


def read_scene(path) -> OctreeStore:
    return parse_scene(Path(path).read_bytes())


# -- images -------------------------------------------------------------------

def read_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_png(path, image) -> None:
    from PIL import Image

    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)
