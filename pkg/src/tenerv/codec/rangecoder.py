"""Static-model range coder for bounded integer sequences.

Carry-less 32-bit range coder with byte-wise renormalization (Subbotin style);
the symbol model is a histogram scaled to a total of at most 2**16 and is sent
in front of the coded bytes.

Payload layout::

    varint  offset of the smallest used symbol from ``lo`` (absent when empty)
    varint  span = largest - smallest + 1   (0 for an empty sequence)
    span x  frequency: one byte < 255, or 255 followed by varint(freq - 255)
    bytes   range-coded symbols (omitted when only one symbol is used)
"""
from __future__ import annotations

import bisect
from typing import Sequence

import numpy as np

TOP = 1 << 24
BOT = 1 << 16
MASK = 0xFFFFFFFF
MAX_TOTAL = 1 << 16


class EntropyDataError(ValueError):
    """Symbol outside the declared alphabet."""


class StreamError(ValueError):
    """Truncated or corrupt payload."""


def write_varint(out: bytearray, value: int) -> None:
    if value < 0:
        raise ValueError("varint must be non-negative")
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return


def read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    value = shift = 0
    while True:
        if pos >= len(buf):
            raise StreamError(f"truncated varint at byte {pos}")
        byte = buf[pos]
        pos += 1
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return value, pos
        shift += 7
        if shift > 63:
            raise StreamError(f"varint too long at byte {pos}")


def scaled_frequencies(counts: np.ndarray) -> list[int]:
    """Scale histogram counts to a total <= 2**16, keeping every used symbol >= 1."""
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    if total <= MAX_TOTAL:
        return [int(c) for c in counts]
    used = int(np.count_nonzero(counts))
    budget = MAX_TOTAL - used
    return [0 if c == 0 else max(1, int(c) * budget // total) for c in counts]


class _Encoder:
    def __init__(self):
        self.low = 0
        self.range = MASK
        self.out = bytearray()

    def encode(self, cum: int, freq: int, total: int) -> None:
        r = self.range // total
        self.low += cum * r
        self.range = freq * r
        low, rng, out = self.low, self.range, self.out
        while True:
            if (low ^ (low + rng)) >= TOP:
                if rng >= BOT:
                    break
                rng = -low & (BOT - 1)
            out.append(low >> 24)
            low = (low << 8) & MASK
            rng = (rng << 8) & MASK
        self.low, self.range = low, rng

    def finish(self) -> bytes:
        for _ in range(4):
            self.out.append(self.low >> 24)
            self.low = (self.low << 8) & MASK
        return bytes(self.out)


class _Decoder:
    def __init__(self, buf: bytes, pos: int):
        self.buf = buf
        self.pos = pos
        self.low = 0
        self.range = MASK
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._byte()

    def _byte(self) -> int:
        if self.pos >= len(self.buf):
            raise StreamError(f"payload truncated at byte {self.pos}")
        b = self.buf[self.pos]
        self.pos += 1
        return b

    def target(self, total: int) -> int:
        self.r = self.range // total
        value = (self.code - self.low) // self.r
        if value >= total:
            raise StreamError(f"corrupt payload near byte {self.pos}")
        return value

    def consume(self, cum: int, freq: int) -> None:
        self.low += cum * self.r
        self.range = freq * self.r
        while True:
            if (self.low ^ (self.low + self.range)) >= TOP:
                if self.range >= BOT:
                    break
                self.range = -self.low & (BOT - 1)
            self.code = ((self.code << 8) & MASK) | self._byte()
            self.low = (self.low << 8) & MASK
            self.range = (self.range << 8) & MASK


def entropy_encode(symbols: Sequence[int] | np.ndarray, lo: int, hi: int) -> bytes:
    """Losslessly code ``symbols`` drawn from ``[lo, hi]``."""
    sym = np.asarray(symbols, dtype=np.int64).reshape(-1)
    out = bytearray()
    if sym.size == 0:
        write_varint(out, 0)
        write_varint(out, 0)
        return bytes(out)
    smin, smax = int(sym.min()), int(sym.max())
    if smin < lo or smax > hi:
        raise EntropyDataError(f"symbols span [{smin}, {smax}] outside alphabet [{lo}, {hi}]")
    span = smax - smin + 1
    freqs = scaled_frequencies(np.bincount(sym - smin, minlength=span))
    write_varint(out, smin - lo)
    write_varint(out, span)
    for f in freqs:
        if f < 255:
            out.append(f)
        else:
            out.append(255)
            write_varint(out, f - 255)
    if sum(1 for f in freqs if f) == 1:
        return bytes(out)
    cums = [0] * span
    acc = 0
    for i, f in enumerate(freqs):
        cums[i] = acc
        acc += f
    total = acc
    enc = _Encoder()
    for s in (sym - smin).tolist():
        enc.encode(cums[s], freqs[s], total)
    return bytes(out) + enc.finish()


def entropy_decode(payload: bytes, count: int, lo: int, hi: int) -> np.ndarray:
    """Inverse of :func:`entropy_encode`; ``count`` symbols are expected."""
    offset, pos = read_varint(payload, 0)
    span, pos = read_varint(payload, pos)
    if span == 0:
        if count:
            raise StreamError(f"empty model but {count} symbols expected")
        if pos != len(payload):
            raise StreamError(f"trailing bytes after byte {pos}")
        return np.zeros(0, dtype=np.int64)
    smin = lo + offset
    if smin + span - 1 > hi:
        raise StreamError(f"model span exceeds alphabet [{lo}, {hi}]")
    freqs = []
    for _ in range(span):
        if pos >= len(payload):
            raise StreamError(f"model truncated at byte {pos}")
        f = payload[pos]
        pos += 1
        if f == 255:
            extra, pos = read_varint(payload, pos)
            f += extra
        freqs.append(f)
    total = sum(freqs)
    if total == 0 or total > MAX_TOTAL:
        raise StreamError(f"invalid model total {total}")
    used = [i for i, f in enumerate(freqs) if f]
    if len(used) == 1:
        if pos != len(payload):
            raise StreamError(f"trailing bytes after byte {pos}")
        return np.full(count, smin + used[0], dtype=np.int64)
    cums = []
    acc = 0
    for f in freqs:
        cums.append(acc)
        acc += f
    dec = _Decoder(payload, pos)
    out = np.empty(count, dtype=np.int64)
    for n in range(count):
        v = dec.target(total)
        s = bisect.bisect_right(cums, v) - 1
        while freqs[s] == 0:
            s -= 1
        dec.consume(cums[s], freqs[s])
        out[n] = s
    if dec.pos != len(payload):
        raise StreamError(f"trailing bytes after byte {dec.pos}")
    return out + smin
