"""Symmetric per-tensor uniform quantization and its straight-through fake form."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensor import Tensor, straight_through


class QuantizationError(ValueError):
    pass


@dataclass
class QuantizedTensor:
    name: str
    shape: tuple[int, ...]
    scale: float  # exactly representable as float32
    values: np.ndarray  # int32, in [-qmax, qmax]
    bits: int

    @property
    def qmax(self) -> int:
        return qmax_for(self.bits)


def qmax_for(bits: int) -> int:
    return (1 << (bits - 1)) - 1


def _check_bits(bits: int) -> None:
    if not 2 <= bits <= 16:
        raise QuantizationError(f"bit width must be in [2, 16], got {bits}")


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _fixed_point_scale(max_abs: float, qmax: int, dtype: np.dtype) -> np.float32:
    # Prefer a float32 scale that re-quantization of the dequantized tensor maps back
    # onto itself, so fake-quantization is idempotent and re-encoding is byte-stable.
    s = np.float32(max_abs / qmax)
    for cand in (s, np.nextafter(s, np.float32(np.inf)), np.nextafter(s, np.float32(0))):
        top = np.asarray(qmax * np.float64(cand)).astype(dtype)
        if np.float32(np.float64(top) / qmax) == cand:
            return cand
    return s


def quantize(t: Tensor | np.ndarray, bits: int, name: str = "") -> QuantizedTensor:
    """Symmetric uniform quantization, ``scale = max|t| / (2^(bits-1) - 1)``."""
    _check_bits(bits)
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    if not np.all(np.isfinite(data)):
        raise QuantizationError(f"tensor {name or '<unnamed>'} contains non-finite values")
    qmax = qmax_for(bits)
    x = data.astype(np.float64)
    max_abs = float(np.max(np.abs(x))) if x.size else 0.0
    if max_abs == 0.0:
        return QuantizedTensor(name, data.shape, 1.0, np.zeros(data.shape, np.int32), bits)
    scale = _fixed_point_scale(max_abs, qmax, data.dtype)
    q = np.clip(round_half_away(x / np.float64(scale)), -qmax, qmax).astype(np.int32)
    return QuantizedTensor(name, data.shape, float(scale), q, bits)


def dequantize(q: QuantizedTensor, dtype=np.float32) -> np.ndarray:
    return (q.values.astype(np.float64) * np.float64(np.float32(q.scale))).astype(dtype)


def fake_quantize(t: Tensor, bits: int) -> Tensor:
    """Quantize-dequantize in the forward pass, identity gradient in the backward pass."""
    value = dequantize(quantize(t, bits), t.dtype)
    return straight_through(t, value)
