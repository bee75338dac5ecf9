"""Integer range coder with 16-bit frequency tables.

The encoder keeps a 33-bit ``low`` with byte-wise carry propagation and a
32-bit ``range`` renormalised whenever it drops below 2**24 (the LZMA
construction).  All arithmetic is on Python integers, so output is
bit-identical on every platform.
"""
from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

PRECISION = 16
TOTAL = 1 << PRECISION
_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF


@dataclass(frozen=True)
class CdfTable:
    """Cumulative counts ``cdf[0] = 0 < cdf[1] < ... < cdf[n] = 2**16``."""
    cdf: tuple[int, ...]

    def __post_init__(self):
        c = np.asarray(self.cdf)
        if c.ndim != 1 or len(c) < 2 or c[0] != 0 or c[-1] != TOTAL:
            raise ValueError("cdf must start at 0 and end at 2**16")
        if np.any(np.diff(c) <= 0):
            raise ValueError("every symbol needs a frequency of at least 1")

    @classmethod
    def _trusted(cls, cdf: tuple) -> "CdfTable":
        # skips validation for tables built by cdf_quantize
        table = object.__new__(cls)
        object.__setattr__(table, "cdf", cdf)
        return table

    @property
    def num_symbols(self) -> int:
        return len(self.cdf) - 1

    def freq(self, s: int) -> int:
        return self.cdf[s + 1] - self.cdf[s]

    def frequencies(self) -> list[int]:
        return [b - a for a, b in zip(self.cdf, self.cdf[1:])]


def quantize_frequencies(probs) -> np.ndarray:
    """Scale probabilities to integer counts summing to exactly 2**16, each >= 1.

    Counts are rounded, zeros raised to one, and the surplus (or deficit)
    taken from (given to) the largest counts.
    """
    p = np.asarray(probs, dtype=np.float64)
    n = p.size
    if n == 0 or n > TOTAL:
        raise ValueError(f"alphabet size must be in [1, {TOTAL}], got {n}")
    if not np.all(np.isfinite(p)) or (p < 0).any() or p.sum() <= 0:
        raise ValueError("probabilities must be finite, non-negative and not all zero")
    freq = np.maximum(np.rint(p / p.sum() * TOTAL).astype(np.int64), 1)
    excess = int(freq.sum()) - TOTAL
    if excess < 0:
        freq[int(np.argmax(freq))] -= excess
    elif excess > 0:
        # largest first; stable so ties go to the lowest symbol
        for i in np.argsort(-freq, kind="stable"):
            take = min(excess, int(freq[i]) - 1)
            freq[i] -= take
            excess -= take
            if excess == 0:
                break
    return freq


def cdf_quantize(probs) -> CdfTable:
    freq = quantize_frequencies(probs)
    return CdfTable._trusted(tuple([0] + np.cumsum(freq).tolist()))


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK32
        self._cache = 0
        self._cache_size = 1
        self._out = bytearray()

    def encode(self, start: int, size: int) -> None:
        """Narrow the interval to ``[start, start + size)`` out of 2**16."""
        r = self.range >> PRECISION
        self.low += start * r
        self.range = size * r
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def encode_symbol(self, table: CdfTable, s: int) -> None:
        c = table.cdf
        self.encode(c[s], c[s + 1] - c[s])

    def encode_byte(self, b: int) -> None:
        self.encode(b << 8, 256)

    def _shift_low(self) -> None:
        low = self.low
        if low < 0xFF000000 or low >= 0x100000000:
            carry = low >> 32
            temp = self._cache
            out = self._out
            while True:
                out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self._cache_size -= 1
                if self._cache_size == 0:
                    break
            self._cache = (low >> 24) & 0xFF
        self._cache_size += 1
        self.low = (low << 8) & _MASK32

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        # the first byte is the zero initial cache; the decoder implies it
        return bytes(self._out[1:])


class RangeDecoder:
    def __init__(self, data: bytes):
        self._data = data
        if len(data) < 4:
            raise FormatError("range-coded payload shorter than 4 bytes")
        self.code = int.from_bytes(data[:4], "big")
        self.range = _MASK32
        self._pos = 4
        self._r = 0

    def _next_byte(self) -> int:
        pos = self._pos
        if pos >= len(self._data):
            raise FormatError("range-coded payload is truncated")
        self._pos = pos + 1
        return self._data[pos]

    def target(self) -> int:
        self._r = self.range >> PRECISION
        v = self.code // self._r
        return v if v < TOTAL else TOTAL - 1

    def consume(self, start: int, size: int) -> None:
        r = self._r
        self.code -= start * r
        self.range = size * r
        while self.range < _TOP:
            self.code = ((self.code << 8) | self._next_byte()) & _MASK32
            self.range <<= 8

    def decode_symbol(self, table: CdfTable) -> int:
        c = table.cdf
        s = bisect_right(c, self.target()) - 1
        self.consume(c[s], c[s + 1] - c[s])
        return s

    def decode_byte(self) -> int:
        b = self.target() >> 8
        self.consume(b << 8, 256)
        return b

    @property
    def bytes_consumed(self) -> int:
        return self._pos


def encode(symbols, tables) -> bytes:
    """Code ``symbols[i]`` with ``tables[i]``."""
    enc = RangeEncoder()
    for s, t in zip(symbols, tables, strict=True):
        if not 0 <= s < t.num_symbols:
            raise ValueError(f"symbol {s} outside alphabet of size {t.num_symbols}")
        enc.encode_symbol(t, s)
    return enc.finish()


def decode(data: bytes, tables) -> list[int]:
    dec = RangeDecoder(data)
    return [dec.decode_symbol(t) for t in tables]
