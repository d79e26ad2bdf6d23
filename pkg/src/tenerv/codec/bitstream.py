"""Self-describing ``.tnrv`` container.

All integers little-endian, fixed width::

    4s   magic b"TNRV"
    u16  version
    u16  flags  (1 GoP grids, 2 shared depthwise, 4 frozen window, 8 GAM active, 16 float64)
    u32  T, u32 H, u32 W
    u16  window, u16 depthwise kernel size
    u16  N blocks, N x u16 upsample factor, (N+1) x u32 channel width
    u16  L levels, L x (u16 temporal stride, u16 channel share)
    u32  B boundaries, B x u32 boundary
    u32  tensor count, then per tensor:
         u16 name length, name (utf-8), u8 ndim, ndim x u32 dim,
         u8 bits, f32 scale, u32 payload length, payload
    u32  CRC-32 of every preceding byte

``bits == 32`` marks an unquantized checkpoint record whose payload is raw
little-endian float32 (or float64 with the float64 flag); otherwise the payload
is the range-coded integer sequence of :mod:`tenerv.codec.rangecoder`.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from ..gop import GopPartition
from ..model import ModelConfig, TeNeRV
from .quant import dequantize, qmax_for, quantize, QuantizedTensor
from .rangecoder import StreamError, entropy_decode, entropy_encode

MAGIC = b"TNRV"
VERSION = 1
RAW_BITS = 32

FLAG_GOP_GRIDS = 1
FLAG_SHARED_DW = 2
FLAG_FROZEN_WINDOW = 4
FLAG_GAM_ACTIVE = 8
FLAG_FLOAT64 = 16


class FormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnsupportedVersionError(FormatError):
    pass


def _header(model: TeNeRV) -> bytes:
    cfg = model.config
    flags = 0
    flags |= FLAG_GOP_GRIDS if cfg.gop_grids else 0
    flags |= FLAG_SHARED_DW if cfg.shared_depthwise else 0
    flags |= FLAG_FROZEN_WINDOW if cfg.freeze_window else 0
    flags |= FLAG_GAM_ACTIVE if model.gam_active else 0
    flags |= FLAG_FLOAT64 if np.dtype(cfg.dtype) == np.float64 else 0
    out = bytearray(MAGIC)
    out += struct.pack("<HH", VERSION, flags)
    out += struct.pack("<III", cfg.frames, cfg.height, cfg.width)
    out += struct.pack("<HH", cfg.window, cfg.kernel_size)
    out += struct.pack("<H", len(cfg.factors))
    out += struct.pack(f"<{len(cfg.factors)}H", *cfg.factors)
    out += struct.pack(f"<{len(cfg.channels)}I", *cfg.channels)
    out += struct.pack("<H", len(cfg.grid_strides))
    for s, c in zip(cfg.grid_strides, cfg.grid_split):
        out += struct.pack("<HH", s, c)
    bounds = model.partition.boundaries if model.partition is not None else ()
    out += struct.pack("<I", len(bounds))
    out += struct.pack(f"<{len(bounds)}I", *bounds)
    return bytes(out)


def _record(name: str, shape: tuple[int, ...], bits: int, scale: float, payload: bytes) -> bytes:
    raw = name.encode("utf-8")
    out = bytearray(struct.pack("<H", len(raw)) + raw)
    out += struct.pack("<B", len(shape)) + struct.pack(f"<{len(shape)}I", *shape)
    out += struct.pack("<Bf", bits, scale)
    out += struct.pack("<I", len(payload)) + payload
    return bytes(out)


def quantize_model(model: TeNeRV, bits: int) -> list[QuantizedTensor]:
    return [quantize(t, bits, name) for name, t in model.named_parameters().items()]


def serialize(model: TeNeRV, bits: int = 8) -> bytes:
    """Encode every learnable tensor of ``model``; ``bits=32`` writes raw floats."""
    out = bytearray(_header(model))
    named = model.named_parameters()
    out += struct.pack("<I", len(named))
    if bits == RAW_BITS:
        for name, t in named.items():
            payload = np.ascontiguousarray(t.data).astype(t.dtype.newbyteorder("<")).tobytes()
            out += _record(name, t.shape, RAW_BITS, 1.0, payload)
    else:
        qmax = qmax_for(bits)
        for q in quantize_model(model, bits):
            payload = entropy_encode(q.values.reshape(-1), -qmax, qmax)
            out += _record(q.name, q.shape, bits, q.scale, payload)
    out += struct.pack("<I", zlib.crc32(out) & 0xFFFFFFFF)
    return bytes(out)


class _Reader:
    def __init__(self, buf: bytes, end: int):
        self.buf = buf
        self.end = end
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > self.end:
            raise FormatError("unexpected end of header", self.pos)
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals

    def raw(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise FormatError(f"record of {n} bytes overruns stream", self.pos)
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out


def deserialize(data: bytes) -> TeNeRV:
    """Rebuild a model from a container; parameters hold dequantized values."""
    data = bytes(data)
    if len(data) < 10 or data[:4] != MAGIC:
        raise FormatError("bad magic, not a TNRV stream", 0)
    (version,) = struct.unpack_from("<H", data, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}, expected {VERSION}", 4)
    end = len(data) - 4
    (stored_crc,) = struct.unpack_from("<I", data, end)
    if zlib.crc32(data[:end]) & 0xFFFFFFFF != stored_crc:
        raise FormatError("CRC-32 mismatch", end)
    rd = _Reader(data, end)
    rd.pos = 6
    (flags,) = rd.take("<H")
    T, H, W = rd.take("<III")
    window, ksize = rd.take("<HH")
    (n_blocks,) = rd.take("<H")
    factors = rd.take(f"<{n_blocks}H")
    channels = rd.take(f"<{n_blocks + 1}I")
    (n_levels,) = rd.take("<H")
    strides, split = [], []
    for _ in range(n_levels):
        s, c = rd.take("<HH")
        strides.append(s)
        split.append(c)
    (n_bounds,) = rd.take("<I")
    bounds = rd.take(f"<{n_bounds}I")
    dtype = np.float64 if flags & FLAG_FLOAT64 else np.float32
    try:
        cfg = ModelConfig(
            frames=T,
            height=H,
            width=W,
            channels=tuple(channels),
            factors=tuple(factors),
            kernel_size=ksize,
            window=window,
            grid_strides=tuple(strides),
            grid_split=tuple(split),
            gop_grids=bool(flags & FLAG_GOP_GRIDS),
            shared_depthwise=bool(flags & FLAG_SHARED_DW),
            freeze_window=bool(flags & FLAG_FROZEN_WINDOW),
            dtype=np.dtype(dtype).name,
        )
    except ValueError as exc:
        raise FormatError(f"invalid architecture: {exc}", 6) from exc
    model = TeNeRV(cfg, seed=0)
    if flags & FLAG_GAM_ACTIVE:
        try:
            model.activate_gam(GopPartition(tuple(bounds), T))
        except ValueError as exc:
            raise FormatError(f"invalid partition: {exc}", rd.pos) from exc
    expected = model.named_parameters()
    (n_tensors,) = rd.take("<I")
    if n_tensors != len(expected):
        raise FormatError(f"{n_tensors} tensors, architecture needs {len(expected)}", rd.pos)
    for want_name, target in expected.items():
        start = rd.pos
        (name_len,) = rd.take("<H")
        name = rd.raw(name_len).decode("utf-8", errors="replace")
        (ndim,) = rd.take("<B")
        shape = rd.take(f"<{ndim}I")
        bits, scale = rd.take("<Bf")
        (plen,) = rd.take("<I")
        payload = rd.raw(plen)
        if name != want_name or tuple(shape) != target.shape:
            raise FormatError(f"record {name}{shape} != expected {want_name}{target.shape}", start)
        count = int(np.prod(shape, dtype=np.int64))
        if bits == RAW_BITS:
            arr = np.frombuffer(payload, dtype=np.dtype(dtype).newbyteorder("<"))
            if arr.size != count:
                raise FormatError(f"raw record {name} holds {arr.size} values, needs {count}", start)
            value = arr.astype(dtype).reshape(shape)
        elif 2 <= bits <= 16:
            qmax = qmax_for(bits)
            try:
                ints = entropy_decode(payload, count, -qmax, qmax)
            except StreamError as exc:
                raise FormatError(f"payload of {name}: {exc}", start) from exc
            q = QuantizedTensor(name, tuple(shape), float(scale), ints.astype(np.int32).reshape(shape), bits)
            value = dequantize(q, dtype)
        else:
            raise FormatError(f"unsupported bit width {bits} for {name}", start)
        model.set_parameter(name, value)
    if rd.pos != end:
        raise FormatError("trailing bytes before checksum", rd.pos)
    return model


def quantized_copy(model: TeNeRV, bits: int) -> TeNeRV:
    """The model the decoder will see: every parameter quantized and dequantized."""
    return deserialize(serialize(model, bits))


def bits_per_pixel(stream: bytes, frames: int, height: int, width: int) -> float:
    return len(stream) * 8 / (frames * height * width)


def save(model: TeNeRV, path: str | Path, bits: int = 8) -> bytes:
    blob = serialize(model, bits)
    Path(path).write_bytes(blob)
    return blob


def load(path: str | Path) -> TeNeRV:
    return deserialize(Path(path).read_bytes())
