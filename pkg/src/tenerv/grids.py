"""Hierarchical temporal embedding: multi-resolution base grids, sliding-window
fusion of adjacent base grids, and per-GoP additive grids.

All frame indices are 0-based. A video of ``T`` frames with fusion window ``l``
owns base grids spanning ``T + l - 1`` positions, so every window
``t .. t + l - 1`` is defined without clamping.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as tt
from .tensor import Tensor


def level_length(expanded_length: int, stride: int) -> int:
    """Number of stored entries so that positions ``0 .. (E-1)/stride`` are covered."""
    return math.ceil((expanded_length - 1) / stride) + 1


@dataclass
class BaseGridSet:
    strides: tuple[int, ...]
    grids: list[Tensor]
    expanded_length: int

    @classmethod
    def create(
        cls,
        frames: int,
        window: int,
        channels: Sequence[int],
        strides: Sequence[int],
        spatial: tuple[int, int],
        rng: np.random.Generator,
        dtype=np.float32,
        init_range: float = 1e-2,
    ) -> BaseGridSet:
        if len(channels) != len(strides):
            raise ValueError("one channel count per temporal level required")
        E = frames + window - 1
        grids = []
        for c, s in zip(channels, strides):
            shape = (level_length(E, s), c) + tuple(spatial)
            grids.append(
                Tensor(rng.uniform(-init_range, init_range, shape).astype(dtype), requires_grad=True)
            )
        return cls(tuple(strides), grids, E)

    @property
    def channels(self) -> int:
        return sum(g.shape[1] for g in self.grids)

    @property
    def spatial(self) -> tuple[int, int]:
        return self.grids[0].shape[2:]

    def interp_matrix(self, level: int, indices: np.ndarray) -> np.ndarray:
        """Rows of linear-interpolation weights over stored entries of one level."""
        s = self.strides[level]
        n_entries = self.grids[level].shape[0]
        A = np.zeros((len(indices), n_entries), dtype=self.grids[level].dtype)
        for row, i in enumerate(indices):
            lo, rem = divmod(int(i), s)
            if rem == 0:
                A[row, lo] = 1.0
            else:
                frac = rem / s
                A[row, lo] = 1.0 - frac
                A[row, lo + 1] = frac
        return A


def base_lookup_many(grids: BaseGridSet, indices: Sequence[int]) -> Tensor:
    """Base embeddings for several expanded indices, ``[n, C_total, H0, W0]``."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= grids.expanded_length):
        raise IndexError(
            f"base index out of range [0, {grids.expanded_length - 1}]: {idx.min()}..{idx.max()}"
        )
    parts = []
    for level, g in enumerate(grids.grids):
        A = Tensor(grids.interp_matrix(level, idx))
        flat = g.reshape(g.shape[0], -1)
        parts.append(tt.matmul(A, flat).reshape((len(idx),) + g.shape[1:]))
    return parts[0] if len(parts) == 1 else tt.concat(parts, axis=1)


def base_lookup(grids: BaseGridSet, i: int) -> Tensor:
    """Base embedding at expanded index ``i``, ``[C_total, H0, W0]``."""
    out = base_lookup_many(grids, [i])
    return out.reshape(out.shape[1:])


@dataclass
class WindowWeights:
    weights: Tensor  # [T, l]
    frozen: bool = False

    @classmethod
    def one_hot(cls, frames: int, window: int, dtype=np.float32, frozen: bool = False):
        w = np.zeros((frames, window), dtype=dtype)
        w[:, 0] = 1.0
        return cls(Tensor(w, requires_grad=not frozen), frozen)

    @property
    def size(self) -> int:
        return self.weights.shape[1]


def fuse_window_many(grids: BaseGridSet, w: WindowWeights, ts: Sequence[int]) -> Tensor:
    """Fused temporal embeddings ``sum_i w[t,i] * base(t+i)`` for frames ``ts``."""
    ts = np.asarray(ts, dtype=np.int64).reshape(-1)
    T, l = w.weights.shape
    if ts.size and (ts.min() < 0 or ts.max() >= T):
        raise IndexError(f"frame index out of range [0, {T - 1}]")
    if grids.expanded_length != T + l - 1:
        raise ValueError(
            f"base grids span {grids.expanded_length} positions, window needs {T + l - 1}"
        )
    n = len(ts)
    idx = (ts[:, None] + np.arange(l)[None, :]).reshape(-1)
    base = base_lookup_many(grids, idx)
    C, H, W = base.shape[1:]
    if l == 1:
        coeff = tt.take(w.weights, ts, axis=0).reshape(n, 1, 1, 1)
        return base * coeff
    stacked = base.reshape(n, l, C * H * W)
    coeff = tt.take(w.weights, ts, axis=0).reshape(n, 1, l)
    return tt.matmul(coeff, stacked).reshape(n, C, H, W)


def fuse_window(grids: BaseGridSet, w: WindowWeights, t: int) -> Tensor:
    out = fuse_window_many(grids, w, [t])
    return out.reshape(out.shape[1:])


@dataclass
class GoPGridSet:
    grids: Tensor | None = None  # [K, C, H0, W0]
    active: bool = False

    @property
    def count(self) -> int:
        return 0 if self.grids is None else self.grids.shape[0]

    def activate(self, count: int, shape: tuple[int, int, int], dtype=np.float32) -> None:
        self.grids = Tensor(np.zeros((count,) + tuple(shape), dtype=dtype), requires_grad=True)
        self.active = True


def fuse_gop_many(x_tem: Tensor, gop: GoPGridSet, ks: Sequence[int]) -> Tensor:
    """Add each frame's GoP grid to its fused temporal embedding (no-op when inactive)."""
    if not gop.active or gop.grids is None:
        return x_tem
    ks = np.asarray(ks, dtype=np.int64).reshape(-1)
    if ks.size and (ks.min() < 0 or ks.max() >= gop.count):
        raise IndexError(f"GoP index out of range [0, {gop.count - 1}]")
    if x_tem.shape[1:] != gop.grids.shape[1:]:
        raise tt.DimensionError(f"GoP grid {gop.grids.shape[1:]} != embedding {x_tem.shape[1:]}")
    return x_tem + tt.take(gop.grids, ks, axis=0)


def fuse_gop(x_tem: Tensor, gop: GoPGridSet, k: int) -> Tensor:
    x = x_tem.reshape((1,) + x_tem.shape)
    out = fuse_gop_many(x, gop, [k])
    return out.reshape(out.shape[1:])


def flatten_embedding(x: Tensor | np.ndarray) -> np.ndarray:
    """Row-major flattening of a ``[C, H, W]`` embedding."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    return data.reshape(-1).copy()


@dataclass
class TemporalGrids:
    """The full temporal embedding stack owned by one model."""

    base: BaseGridSet
    window: WindowWeights
    gop: GoPGridSet = field(default_factory=GoPGridSet)

    @property
    def frames(self) -> int:
        return self.window.weights.shape[0]

    def embed(self, ts: Sequence[int], ks: Sequence[int] | None = None) -> Tensor:
        x = fuse_window_many(self.base, self.window, ts)
        if ks is not None:
            x = fuse_gop_many(x, self.gop, ks)
        return x

    def temporal_embeddings(self) -> np.ndarray:
        """Fused temporal embeddings for every frame, flattened, ``[T, D]``."""
        with tt.no_grad():
            x = fuse_window_many(self.base, self.window, range(self.frames))
        return x.data.reshape(self.frames, -1).copy()
