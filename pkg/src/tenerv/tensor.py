"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Operations on tensors that require
gradients record a parent list and a backward closure; :meth:`Tensor.backward`
walks the recorded graph in reverse topological order.
"""
from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.special import erf

_GRAD_ENABLED = True

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class DimensionError(ValueError):
    """Raised when tensor shapes do not agree."""


class UsageError(RuntimeError):
    """Raised when the autodiff API is misused."""


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # arithmetic -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other, self.dtype)))

    def __rsub__(self, other):
        return add(_lift(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_lift(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return tmean(self, axis, keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    # autodiff -------------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf."""
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise UsageError("backward() on a tensor that does not require grad")
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _lift(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# elementwise ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, a.dtype)
    sa, sb = a.shape, b.shape
    return _result(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, a.dtype)
    ad, bd = a.data, b.data
    return _result(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, a.dtype)
    ad, bd = a.data, b.data
    out = ad / bd
    return _result(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
    )


def power(a: Tensor, exponent: float) -> Tensor:
    ad = a.data
    return _result(
        ad**exponent, (a,), lambda g: (g * exponent * ad ** (exponent - 1),)
    )


def tabs(a: Tensor) -> Tensor:
    ad = a.data
    return _result(np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data >= lo) & (a.data <= hi)
    return _result(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the erf-based normal CDF."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _SQRT1_2))

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _result((x * cdf).astype(x.dtype, copy=False), (a,), backward)


# reductions and shape ops --------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = tsum(a, axis, keepdims)
    count = a.size // max(out.size, 1)
    return out * (1.0 / count)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def getitem(a: Tensor, index) -> Tensor:
    shape, dtype = a.shape, a.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return _result(a.data[index], (a,), backward)


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather slices of ``a`` along ``axis``; repeated indices accumulate grads."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[axis]):
        raise IndexError(f"take index out of range for axis {axis} of size {a.shape[axis]}")
    shape, dtype = a.shape, a.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (full,)

    return _result(np.take(a.data, idx, axis=axis), (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _result(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    n = len(tensors)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _result(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D (or batched) matrix product."""
    ad, bd = a.data, b.data
    if ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {ad.shape} @ {bd.shape}")

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return (_unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape))

    return _result(ad @ bd, (a, b), backward)


# convolutions and resampling ----------------------------------------------


def conv2d_pointwise(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """1x1 convolution: ``out[b,o] = bias[o] + sum_c weight[o,c] * x[b,c]``."""
    if x.ndim != 4:
        raise DimensionError(f"input must be [B,C,H,W], got {x.shape}")
    if weight.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise DimensionError(
            f"weight axis 1 ({weight.shape}) must match input channel axis 1 ({x.shape[1]})"
        )
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"bias shape {bias.shape} must be ({weight.shape[0]},)")
    B, C, H, W = x.shape
    O = weight.shape[0]
    xf = x.data.reshape(B, C, H * W)
    wd = weight.data
    out = np.matmul(wd, xf)
    if bias is not None:
        out += bias.data[:, None]

    def backward(g):
        gf = g.reshape(B, O, H * W)
        gx = np.matmul(wd.T, gf).reshape(B, C, H, W)
        gw = np.einsum("bop,bcp->oc", gf, xf)
        gb = gf.sum(axis=(0, 2))
        return (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out.reshape(B, O, H, W), parents, backward)


def conv2d_depthwise(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-channel k x k cross-correlation, stride 1, zero same-padding.

    ``kernel`` is ``[C,k,k]`` (shared by the batch) or ``[B,C,k,k]`` (one kernel
    set per sample); ``bias`` is ``[C]`` or ``[B,C]`` correspondingly.
    """
    if x.ndim != 4:
        raise DimensionError(f"input must be [B,C,H,W], got {x.shape}")
    B, C, H, W = x.shape
    kd = kernel.data
    per_sample = kd.ndim == 4
    if kd.shape[-1] != kd.shape[-2]:
        raise DimensionError(f"kernel must be square, got {kd.shape}")
    k = kd.shape[-1]
    if k % 2 == 0:
        raise ValueError(f"depthwise kernel size must be odd, got {k}")
    if kd.shape[-3] != C or (per_sample and kd.shape[0] != B):
        raise DimensionError(f"kernel {kd.shape} does not match input {x.shape} (axes 0-1)")
    pad = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    kb = kd if per_sample else kd[None]
    out = np.zeros_like(x.data)
    for dy in range(k):
        for dx in range(k):
            out += kb[:, :, dy, dx, None, None] * xp[:, :, dy : dy + H, dx : dx + W]
    if bias is not None:
        bd = bias.data if per_sample else bias.data[None]
        out += bd[:, :, None, None]

    def backward(g):
        gxp = np.zeros_like(xp)
        gk = np.empty((B, C, k, k), dtype=kd.dtype)
        for dy in range(k):
            for dx in range(k):
                gxp[:, :, dy : dy + H, dx : dx + W] += kb[:, :, dy, dx, None, None] * g
                gk[:, :, dy, dx] = np.einsum(
                    "bchw,bchw->bc", g, xp[:, :, dy : dy + H, dx : dx + W]
                )
        gx = gxp[:, :, pad : pad + H, pad : pad + W]
        gb = g.sum(axis=(2, 3))
        if not per_sample:
            gk = gk.sum(axis=0)
            gb = gb.sum(axis=0)
        return (gx, gk, gb)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _result(out, parents, backward)


def _c2s(a: np.ndarray, r: int) -> np.ndarray:
    B, Cr, H, W = a.shape
    C = Cr // (r * r)
    return a.reshape(B, C, r, r, H, W).transpose(0, 1, 4, 2, 5, 3).reshape(B, C, H * r, W * r)


def _s2c(a: np.ndarray, r: int) -> np.ndarray:
    B, C, Hr, Wr = a.shape
    H, W = Hr // r, Wr // r
    return a.reshape(B, C, H, r, W, r).transpose(0, 1, 3, 5, 2, 4).reshape(B, C * r * r, H, W)


def channel_to_space(x: Tensor, r: int) -> Tensor:
    """Sub-pixel rearrangement ``[B,C*r*r,H,W] -> [B,C,H*r,W*r]``."""
    if r < 1:
        raise ValueError(f"upscale factor must be positive, got {r}")
    if x.ndim != 4 or x.shape[1] % (r * r):
        raise DimensionError(f"channel axis 1 of {x.shape} not divisible by r^2={r * r}")
    return _result(_c2s(x.data, r), (x,), lambda g: (_s2c(g, r),))


def space_to_channel(x: Tensor, r: int) -> Tensor:
    """Inverse of :func:`channel_to_space`."""
    if x.ndim != 4 or x.shape[2] % r or x.shape[3] % r:
        raise DimensionError(f"spatial axes 2-3 of {x.shape} not divisible by r={r}")
    return _result(_s2c(x.data, r), (x,), lambda g: (_c2s(g, r),))


def filter_valid(x: Tensor, taps: np.ndarray) -> Tensor:
    """Separable 'valid' correlation of the last two axes with a 1-D kernel."""
    n = len(taps)
    xd = x.data
    H, W = xd.shape[-2:]
    if H < n or W < n:
        raise DimensionError(f"spatial size {(H, W)} smaller than filter length {n}")
    Ho, Wo = H - n + 1, W - n + 1
    taps = taps.astype(xd.dtype)
    rows = sum(taps[i] * xd[..., i : i + Ho, :] for i in range(n))
    out = sum(taps[j] * rows[..., :, j : j + Wo] for j in range(n))

    def backward(g):
        grows = np.zeros(xd.shape[:-2] + (Ho, W), dtype=xd.dtype)
        for j in range(n):
            grows[..., :, j : j + Wo] += taps[j] * g
        gx = np.zeros_like(xd)
        for i in range(n):
            gx[..., i : i + Ho, :] += taps[i] * grows
        return (gx,)

    return _result(out, (x,), backward)


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2 over the last two axes (odd edges cropped)."""
    xd = x.data
    H, W = xd.shape[-2:]
    Ho, Wo = H // 2, W // 2
    lead = xd.shape[:-2]
    crop = xd[..., : Ho * 2, : Wo * 2]
    out = crop.reshape(lead + (Ho, 2, Wo, 2)).mean(axis=(-3, -1))

    def backward(g):
        gx = np.zeros_like(xd)
        spread = np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1) * 0.25
        gx[..., : Ho * 2, : Wo * 2] = spread
        return (gx,)

    return _result(out.astype(xd.dtype, copy=False), (x,), backward)


def straight_through(x: Tensor, value: np.ndarray) -> Tensor:
    """Forward ``value``, backward identity to ``x`` (straight-through estimator)."""
    if value.shape != x.shape:
        raise DimensionError(f"straight-through value {value.shape} != input {x.shape}")
    return _result(value, (x,), lambda g: (g,))


def clamped_pow(a: Tensor, exponent: float) -> Tensor:
    """``max(a, 0) ** exponent`` with zero gradient where ``a <= 0``."""
    ad = a.data
    pos = ad > 0
    base = np.where(pos, ad, 0).astype(ad.dtype)
    safe = np.where(pos, ad, 1).astype(ad.dtype)

    def backward(g):
        return (np.where(pos, g * exponent * safe ** (exponent - 1), 0).astype(ad.dtype),)

    return _result(base**exponent, (a,), backward)
