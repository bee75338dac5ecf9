"""Binarized multi-resolution hash grid (3D + 2D branches) used as coding context."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError

GRID_MAGIC = b"PGH1"
PRIMES = (1, 2654435761, 805459861)
COST_EPS = 2.0 ** -16
_PLANES = ((0, 1), (0, 2), (1, 2))


def geometric_resolutions(lo: int, hi: int, n: int) -> tuple[int, ...]:
    if n == 1:
        return (lo,)
    growth = math.exp(math.log(hi / lo) / (n - 1))
    return tuple(int(round(lo * growth ** i)) for i in range(n))


@dataclass(frozen=True)
class HashGridConfig:
    resolutions_3d: tuple[int, ...] = field(default_factory=lambda: geometric_resolutions(16, 512, 12))
    resolutions_2d: tuple[int, ...] = field(default_factory=lambda: geometric_resolutions(128, 1024, 4))
    feature_dim: int = 4
    log2_table_size: int = 13

    def __post_init__(self):
        if not 1 <= self.log2_table_size <= 24:
            raise ValueError("log2_table_size must be in [1, 24]")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if any(r < 1 for r in self.resolutions_3d + self.resolutions_2d):
            raise ValueError("resolutions must be positive")

    @property
    def num_levels(self) -> int:
        return len(self.resolutions_3d) + len(self.resolutions_2d)

    @property
    def table_size(self) -> int:
        return 1 << self.log2_table_size

    @property
    def output_dim(self) -> int:
        return self.num_levels * self.feature_dim


class HashGrid:
    def __init__(self, cfg: HashGridConfig, tables):
        tables = np.asarray(tables, dtype=np.int8)
        if tables.shape != (cfg.num_levels, cfg.table_size, cfg.feature_dim):
            raise ValueError(f"table shape {tables.shape} does not match config")
        if not np.all((tables == 1) | (tables == -1)):
            raise ValueError("hash-grid entries must be -1 or +1")
        self.cfg = cfg
        self.tables = tables
        self.tables.flags.writeable = False

    @classmethod
    def random(cls, cfg: HashGridConfig | None = None, seed: int = 0) -> "HashGrid":
        cfg = cfg or HashGridConfig()
        rng = np.random.default_rng(seed)
        bits = rng.integers(0, 2, size=(cfg.num_levels, cfg.table_size, cfg.feature_dim))
        return cls(cfg, 2 * bits - 1)

    @classmethod
    def constant(cls, cfg: HashGridConfig | None = None, value: int = 1) -> "HashGrid":
        cfg = cfg or HashGridConfig()
        return cls(cfg, np.full((cfg.num_levels, cfg.table_size, cfg.feature_dim), value))

    def __eq__(self, other):
        return (isinstance(other, HashGrid) and self.cfg == other.cfg
                and np.array_equal(self.tables, other.tables))

    @property
    def num_entries(self) -> int:
        return self.tables.size

    def query(self, positions) -> np.ndarray:
        """Context features for normalized positions in [0, 1]^3.

        Accepts one position (3,) or a batch (N, 3); returns (output_dim,) or
        (N, output_dim) respectively.
        """
        pos = np.asarray(positions, dtype=np.float64)
        single = pos.ndim == 1
        pos = pos.reshape(-1, 3)
        if not np.all((pos >= 0.0) & (pos <= 1.0)):
            raise ValueError("hash-grid query position outside the unit cube")
        feats = []
        n3 = len(self.cfg.resolutions_3d)
        for i, res in enumerate(self.cfg.resolutions_3d):
            feats.append(_interp(self.tables[i], pos * res, PRIMES))
        for j, res in enumerate(self.cfg.resolutions_2d):
            table = self.tables[n3 + j]
            acc = 0.0
            for a, b in _PLANES:
                acc = acc + _interp(table, pos[:, (a, b)] * res, PRIMES[:2])
            feats.append(acc / 3.0)
        out = np.concatenate(feats, axis=1)
        return out[0] if single else out


def _interp(table: np.ndarray, x: np.ndarray, primes) -> np.ndarray:
    """Multilinear interpolation of hashed corner entries; x is in grid units."""
    base = np.floor(x)
    frac = x - base
    base = base.astype(np.uint64)
    mask = np.uint64(table.shape[0] - 1)
    dim = x.shape[1]
    out = np.zeros((x.shape[0], table.shape[1]))
    for corner in range(1 << dim):
        h = np.zeros(x.shape[0], dtype=np.uint64)
        w = np.ones(x.shape[0])
        for d in range(dim):
            bit = (corner >> d) & 1
            h ^= (base[:, d] + np.uint64(bit)) * np.uint64(primes[d])
            w = w * (frac[:, d] if bit else 1.0 - frac[:, d])
        out += w[:, None] * table[h & mask]
    return out


def root_parent_context(dim: int = 64) -> np.ndarray:
    """Parent context of a root anchor: all zeros."""
    return np.zeros(dim)


def hash_bit_cost(grid: HashGrid) -> float:
    """Bernoulli cross-entropy estimate (bits) of storing the binary tables."""
    m_plus = int(np.count_nonzero(grid.tables == 1))
    m_minus = grid.num_entries - m_plus
    f_plus = min(max(m_plus / (m_plus + m_minus), COST_EPS), 1.0 - COST_EPS)
    return m_plus * -math.log2(f_plus) + m_minus * -math.log2(1.0 - f_plus)


def serialize(grid: HashGrid) -> bytes:
    cfg = grid.cfg
    head = struct.pack("<4sBBBB", GRID_MAGIC, len(cfg.resolutions_3d), len(cfg.resolutions_2d),
                       cfg.feature_dim, cfg.log2_table_size)
    res = struct.pack(f"<{cfg.num_levels}I", *(cfg.resolutions_3d + cfg.resolutions_2d))
    bits = np.packbits((grid.tables > 0).ravel(), bitorder="big")
    return head + res + bits.tobytes()


def serialized_size(cfg: HashGridConfig) -> int:
    return 8 + 4 * cfg.num_levels + (cfg.num_levels * cfg.table_size * cfg.feature_dim + 7) // 8


def deserialize(data: bytes, offset: int = 0) -> tuple[HashGrid, int]:
    """Parse a grid block; returns the grid and the offset just past it."""
    if len(data) - offset < 8 or data[offset:offset + 4] != GRID_MAGIC:
        raise FormatError("bad hash-grid magic")
    n3, n2, fdim, log2t = struct.unpack_from("<BBBB", data, offset + 4)
    n = n3 + n2
    if len(data) - offset < 8 + 4 * n:
        raise FormatError("truncated hash-grid block")
    res = struct.unpack_from(f"<{n}I", data, offset + 8)
    try:
        cfg = HashGridConfig(tuple(res[:n3]), tuple(res[n3:]), fdim, log2t)
    except ValueError as e:
        raise FormatError(f"invalid hash-grid config: {e}") from None
    end = offset + serialized_size(cfg)
    if len(data) < end:
        raise FormatError("truncated hash-grid block")
    m = cfg.num_levels * cfg.table_size * cfg.feature_dim
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8, count=end - offset - 8 - 4 * n,
                                       offset=offset + 8 + 4 * n), bitorder="big")[:m]
    tables = (2 * bits.astype(np.int8) - 1).reshape(cfg.num_levels, cfg.table_size, cfg.feature_dim)
    return HashGrid(cfg, tables), end


def save(grid: HashGrid, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(grid))


def load(path) -> HashGrid:
    with open(path, "rb") as fh:
        data = fh.read()
    grid, end = deserialize(data)
    if end != len(data):
        raise FormatError("trailing bytes after hash-grid block")
    return grid
