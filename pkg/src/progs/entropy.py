"""Context-conditioned Gaussian prior with adaptive quantization.

Symbols are coded against tables derived from the bin-integral probability
of a Gaussian.  A table covers a window of ``2R + 1`` symbols around the
predicted mean plus one escape symbol; an escaped value follows as two raw
bytes, so every int16 symbol stays decodable.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import FormatError, SymbolRangeError
from .rangecoder import TOTAL, CdfTable, RangeDecoder, RangeEncoder, cdf_quantize
from .scene import OctreeConfig

SIGMA_MIN = 1e-4
P_MIN = 2.0 ** -16
SYMBOL_MIN, SYMBOL_MAX = -32768, 32767
WEIGHTS_MAGIC = b"PGW1"

# upper bounds on the directly coded window around the predicted mean
WINDOW_SIGMAS = 8.0
MAX_RADIUS = 4095


@dataclass
class EntropyParams:
    mu: np.ndarray
    sigma: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        self.q = np.asarray(self.q, dtype=np.float64)
        if not (self.mu.shape == self.sigma.shape == self.q.shape):
            raise ValueError("mu, sigma and q must share one shape")
        if not (np.all(self.sigma > 0) and np.all(self.q > 0)):
            raise ValueError("sigma and q must be positive")


@dataclass
class MlpWeights:
    """Two one-hidden-layer ReLU networks: distribution (mu, sigma) and quantization step."""
    d_w1: np.ndarray
    d_b1: np.ndarray
    d_w2: np.ndarray
    d_b2: np.ndarray
    q_w1: np.ndarray
    q_b1: np.ndarray
    q_w2: np.ndarray
    q_b2: np.ndarray

    _ORDER = ("d_w1", "d_b1", "d_w2", "d_b2", "q_w1", "q_b1", "q_w2", "q_b2")

    def __post_init__(self):
        for name in self._ORDER:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float32))
        i, h, c = self.in_dim, self.hidden, self.channels
        expected = {"d_w1": (i, h), "d_b1": (h,), "d_w2": (h, 2 * c), "d_b2": (2 * c,),
                    "q_w1": (i, h), "q_b1": (h,), "q_w2": (h, c), "q_b2": (c,)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def in_dim(self) -> int:
        return self.d_w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.d_w1.shape[1]

    @property
    def channels(self) -> int:
        return self.q_b2.shape[0]

    @classmethod
    def random(cls, in_dim: int = 128, hidden: int = 128, channels: int = 68, seed: int = 0):
        rng = np.random.default_rng(seed)

        def layer(n_in, n_out):
            return rng.normal(0.0, 1.0 / math.sqrt(n_in), (n_in, n_out)), rng.normal(0.0, 0.1, n_out)

        d1, db1 = layer(in_dim, hidden)
        d2, db2 = layer(hidden, 2 * channels)
        q1, qb1 = layer(in_dim, hidden)
        q2, qb2 = layer(hidden, channels)
        return cls(d1, db1, d2, db2, q1, qb1, q2, qb2)

    @classmethod
    def seeded(cls, cfg: OctreeConfig, in_dim: int = 128, hidden: int = 128, seed: int = 0,
               sigma_steps: float = 4.0):
        """Untrained starting point whose priors are usable out of the box.

        Output layers are scaled down and biased so that ``q`` starts near the
        base step and ``sigma`` near ``sigma_steps`` base steps per channel.
        """
        w = cls.random(in_dim, hidden, cfg.num_channels, seed)
        C = cfg.num_channels
        # steps are stored as float32 everywhere; seed from the stored value
        target = sigma_steps * cfg.q0_vector().astype(np.float32).astype(np.float64)
        d_b2 = np.concatenate([np.zeros(C), np.log(np.expm1(target))])
        return cls(w.d_w1, w.d_b1, w.d_w2 * 0.01, d_b2, w.q_w1, w.q_b1, w.q_w2 * 0.01,
                   np.zeros(C))

    @classmethod
    def zeros(cls, in_dim: int = 128, hidden: int = 128, channels: int = 68):
        z = np.zeros
        return cls(z((in_dim, hidden)), z(hidden), z((hidden, 2 * channels)), z(2 * channels),
                   z((in_dim, hidden)), z(hidden), z((hidden, channels)), z(channels))

    def __eq__(self, other):
        return isinstance(other, MlpWeights) and all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in self._ORDER)


def serialize_weights(w: MlpWeights) -> bytes:
    parts = [struct.pack("<4sHHH", WEIGHTS_MAGIC, w.in_dim, w.hidden, w.channels)]
    parts += [getattr(w, n).astype("<f4").tobytes() for n in MlpWeights._ORDER]
    return b"".join(parts)


def weights_size(in_dim: int, hidden: int, channels: int) -> int:
    n = 2 * (in_dim * hidden + hidden) + hidden * 3 * channels + 3 * channels
    return 10 + 4 * n


def deserialize_weights(data: bytes, offset: int = 0) -> tuple[MlpWeights, int]:
    if len(data) - offset < 10 or data[offset:offset + 4] != WEIGHTS_MAGIC:
        raise FormatError("bad MLP weights magic")
    i, h, c = struct.unpack_from("<HHH", data, offset + 4)
    end = offset + weights_size(i, h, c)
    if len(data) < end:
        raise FormatError("truncated MLP weights block")
    shapes = [(i, h), (h,), (h, 2 * c), (2 * c,), (i, h), (h,), (h, c), (c,)]
    pos, arrays = offset + 10, []
    for shape in shapes:
        n = int(np.prod(shape))
        arrays.append(np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(shape))
        pos += 4 * n
    return MlpWeights(*arrays), end


def save_weights(w: MlpWeights, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_weights(w))


def load_weights(path) -> MlpWeights:
    with open(path, "rb") as fh:
        data = fh.read()
    w, end = deserialize_weights(data)
    if end != len(data):
        raise FormatError("trailing bytes after MLP weights block")
    return w


def softplus(x):
    return np.logaddexp(0.0, x)


def _mlp(x, w1, b1, w2, b2):
    hidden = np.maximum(x @ w1.astype(np.float64) + b1, 0.0)
    return hidden @ w2.astype(np.float64) + b2


def predict_params(w: MlpWeights, h, h_parent, cfg: OctreeConfig) -> EntropyParams:
    """Per-channel (mu, sigma, q) from an anchor's context and its parent's context."""
    x = np.concatenate([np.asarray(h, dtype=np.float64), np.asarray(h_parent, dtype=np.float64)],
                       axis=-1)
    C = cfg.num_channels
    if x.shape[-1] != w.in_dim or w.channels != C:
        raise ValueError(f"context width {x.shape[-1]} / channels {C} do not match weights "
                         f"({w.in_dim} in, {w.channels} channels)")
    d = _mlp(x, w.d_w1, w.d_b1, w.d_w2, w.d_b2)
    raw_q = _mlp(x, w.q_w1, w.q_b1, w.q_w2, w.q_b2)
    mu = d[..., :C]
    sigma = softplus(d[..., C:]) + SIGMA_MIN
    q = cfg.q0_vector() * (1.0 + np.tanh(raw_q))
    # tanh saturates to -1 in float64 for large negative inputs
    q = np.maximum(q, np.finfo(np.float64).tiny)
    return EntropyParams(mu, sigma, q)


def _round_half_up(x):
    return np.floor(x + 0.5)


TIE_ULPS = 4


def quantize(attrs, q) -> np.ndarray:
    """Integer symbols ``round(A / q)`` (ties toward +inf), checked against int16.

    A ratio within a few ulps of a half-integer counts as a tie, so decimal
    halves such as 0.3 / 0.2 (1.4999999999999998 in binary) round up.
    """
    r = np.asarray(attrs, dtype=np.float64) / np.asarray(q, dtype=np.float64)
    slack = TIE_ULPS * np.finfo(np.float64).eps * np.maximum(np.abs(r), 1.0)
    k = _round_half_up(r + slack)
    if k.size and (k.min() < SYMBOL_MIN or k.max() > SYMBOL_MAX):
        raise SymbolRangeError(
            f"quantized symbol {int(k.min() if k.min() < SYMBOL_MIN else k.max())} "
            f"outside [{SYMBOL_MIN}, {SYMBOL_MAX}]")
    return k.astype(np.int64)


def dequantize(k, q) -> np.ndarray:
    return np.asarray(k, dtype=np.float64) * np.asarray(q, dtype=np.float64)


def _bin_mass(za, zb):
    # evaluate in the lower tail to avoid cancellation near 1
    za, zb = np.asarray(za), np.asarray(zb)
    return np.where(za > 0, ndtr(-za) - ndtr(-zb), ndtr(zb) - ndtr(za))


def symbol_probability(k, mu, sigma, q, floor: bool = True):
    """Gaussian mass of the quantization bin of symbol ``k``."""
    k = np.asarray(k, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    centre = k * q
    p = _bin_mass((centre - q / 2 - mu) / sigma, (centre + q / 2 - mu) / sigma)
    return np.maximum(p, P_MIN) if floor else p


def entropy_bits(symbols, params: EntropyParams) -> float:
    """Model cost in bits, summed over every anchor and channel."""
    p = symbol_probability(symbols, params.mu, params.sigma, params.q)
    return float(-np.log2(p).sum())


def normalized_rate(total_bits: float, n_anchors: int, cfg: OctreeConfig) -> float:
    if n_anchors <= 0:
        raise ValueError("normalized rate needs at least one anchor")
    return total_bits / (n_anchors * cfg.num_channels)


def fit_static_prior(attrs, cfg: OctreeConfig) -> EntropyParams:
    """Per-channel sample mean and std (floored) of one level; q is the base step."""
    a = np.asarray(attrs, dtype=np.float64).reshape(-1, cfg.num_channels)
    if len(a) == 0:
        return EntropyParams(np.zeros(cfg.num_channels), np.ones(cfg.num_channels), cfg.q0_vector())
    return EntropyParams(a.mean(axis=0), np.maximum(a.std(axis=0), SIGMA_MIN), cfg.q0_vector())


# -- coding ------------------------------------------------------------------

def symbol_window(mu, sigma, q):
    """Inclusive symbol window ``(lo, hi)`` coded directly; anything outside escapes.

    The window reaches one standard deviation past the point where a bin's
    mass drops below 2**-16 (beyond it a symbol costs about as much inline as
    escaped), capped at WINDOW_SIGMAS and MAX_RADIUS bins.
    """
    mu, sigma, q = (np.asarray(a, dtype=np.float64) for a in (mu, sigma, q))
    peak = q / (sigma * math.sqrt(2.0 * math.pi)) * 2.0 ** 16
    reach = np.minimum(np.sqrt(2.0 * np.log(np.maximum(peak, 1.0))) + 1.0, WINDOW_SIGMAS)
    centre = np.clip(np.floor(mu / q + 0.5), SYMBOL_MIN, SYMBOL_MAX)
    radius = np.clip(np.ceil(reach * sigma / q), 1, MAX_RADIUS)
    lo = np.maximum(centre - radius, SYMBOL_MIN).astype(np.int64)
    hi = np.minimum(centre + radius, SYMBOL_MAX).astype(np.int64)
    return lo, hi


def coding_table(mu: float, sigma: float, q: float) -> tuple[int, CdfTable]:
    """Lowest in-window symbol and the table (window symbols, then escape)."""
    lo, hi = (int(v) for v in symbol_window(mu, sigma, q))
    ks = np.arange(lo, hi + 1, dtype=np.float64)
    p = symbol_probability(ks, mu, sigma, q, floor=False)
    escape = max(1.0 - float(p.sum()), 0.0)
    return lo, cdf_quantize(np.append(p, escape))


def build_tables(mu, sigma, q) -> tuple[np.ndarray, list[CdfTable]]:
    """Vectorised :func:`coding_table` over flat parameter arrays.

    Returns the lowest window symbol per entry and one table per entry;
    identical parameter triples share a table object.
    """
    triples = np.stack([np.ravel(mu), np.ravel(sigma), np.ravel(q)], axis=1).astype(np.float64)
    if len(triples) == 0:
        return np.zeros(0, dtype=np.int64), []
    uniq, inverse = np.unique(triples, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    m, sd, qq = uniq[:, 0], uniq[:, 1], uniq[:, 2]
    lo, hi = symbol_window(m, sd, qq)
    sizes = hi - lo + 2  # window plus escape
    los, tables = [], []
    start = 0
    # bound the temporary arrays
    budget = 1 << 21
    while start < len(uniq):
        stop = start + 1
        total = sizes[start]
        while stop < len(uniq) and total + sizes[stop] <= budget:
            total += sizes[stop]
            stop += 1
        tables.extend(_table_batch(lo[start:stop], sizes[start:stop], m[start:stop],
                                   sd[start:stop], qq[start:stop]))
        start = stop
    per_entry = [tables[i] for i in inverse.tolist()]
    return lo[inverse], per_entry


def _table_batch(lo, sizes, mu, sigma, q) -> list[CdfTable]:
    n_sym = sizes - 1
    seg = np.repeat(np.arange(len(lo)), n_sym)
    first = np.concatenate([[0], np.cumsum(n_sym)[:-1]])
    ks = lo[seg] + (np.arange(n_sym.sum()) - first[seg])
    p = symbol_probability(ks.astype(np.float64), mu[seg], sigma[seg], q[seg], floor=False)
    window_mass = np.add.reduceat(p, first)
    escape = np.maximum(1.0 - window_mass, 0.0)
    # interleave: each segment's window followed by its escape entry
    probs = np.empty(int(sizes.sum()))
    ends = np.cumsum(sizes) - 1
    mask = np.ones(len(probs), dtype=bool)
    mask[ends] = False
    probs[mask] = p
    probs[ends] = escape
    starts = ends - sizes + 1
    sums = np.add.reduceat(probs, starts)
    owner = np.repeat(np.arange(len(lo)), sizes)
    freq = np.maximum(np.rint(probs / sums[owner] * TOTAL).astype(np.int64), 1)
    excess = np.add.reduceat(freq, starts) - TOTAL
    # largest count per segment, first occurrence on ties
    seg_max = np.maximum.reduceat(freq, starts)
    at_max = np.flatnonzero(freq == seg_max[owner])
    largest = at_max[np.searchsorted(owner[at_max], np.arange(len(lo)))]
    fits = excess <= freq[largest] - 1
    freq[largest[fits]] -= excess[fits]
    out = []
    cum = np.cumsum(freq)
    base = np.concatenate([[0], cum[ends[:-1]]])
    cum_list = cum.tolist()
    for i in range(len(lo)):
        if fits[i]:
            seg_cum = cum_list[starts[i]:ends[i] + 1]
            b = int(base[i])
            out.append(CdfTable._trusted(tuple([0] + [c - b for c in seg_cum])))
        else:
            out.append(cdf_quantize(probs[starts[i]:ends[i] + 1]))
    return out


class GaussianCoder:
    """Codes int16 symbols under per-symbol Gaussian priors."""

    def encode(self, enc: RangeEncoder, symbols, params: EntropyParams) -> None:
        shape = np.shape(symbols)
        ks = np.asarray(symbols).ravel()
        if ks.size and (ks.min() < SYMBOL_MIN or ks.max() > SYMBOL_MAX):
            raise SymbolRangeError("symbol outside int16 range")
        los, tables = build_tables(*(np.broadcast_to(a, shape) for a in
                                     (params.mu, params.sigma, params.q)))
        for k, lo, table in zip(ks.tolist(), los.tolist(), tables):
            n = table.num_symbols - 1
            if lo <= k < lo + n:
                enc.encode_symbol(table, k - lo)
            else:
                enc.encode_symbol(table, n)
                raw = k - SYMBOL_MIN
                enc.encode_byte(raw >> 8)
                enc.encode_byte(raw & 0xFF)

    def decode(self, dec: RangeDecoder, params: EntropyParams) -> np.ndarray:
        los, tables = build_tables(params.mu, params.sigma, params.q)
        out = []
        for lo, table in zip(los.tolist(), tables):
            s = dec.decode_symbol(table)
            if s < table.num_symbols - 1:
                out.append(lo + s)
            else:
                hi = dec.decode_byte()
                out.append(((hi << 8) | dec.decode_byte()) + SYMBOL_MIN)
        return np.array(out, dtype=np.int64).reshape(params.mu.shape)
