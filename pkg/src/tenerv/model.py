"""The TeNeRV network.

A frame index is embedded by :class:`~tenerv.grids.TemporalGrids`, then upsampled
by a cascade of blocks::

    expand (1x1, shared) -> channel_to_space(r) -> GELU
      -> depthwise k x k (one kernel set per GoP) -> GELU -> project (1x1, shared)

and mapped to RGB by a shared 1x1 head. Before GAM activation every block owns
one depthwise slice and the GoP grids are absent; :meth:`TeNeRV.activate_gam`
duplicates the slice once per GoP and adds zero GoP grids, which leaves the
function unchanged.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from . import tensor as tt
from .gop import GopPartition
from .codec.quant import fake_quantize
from .grids import (
    BaseGridSet,
    GoPGridSet,
    TemporalGrids,
    WindowWeights,
    fuse_gop_many,
    fuse_window_many,
)
from .tensor import Tensor, UsageError


@dataclass(frozen=True)
class ModelConfig:
    frames: int
    height: int
    width: int
    channels: tuple[int, ...] = (32, 48, 24, 12)
    factors: tuple[int, ...] = (4, 2, 2)
    kernel_size: int = 3
    window: int = 3
    grid_strides: tuple[int, ...] = (1, 4)
    grid_split: tuple[int, ...] = (3, 1)
    gop_grids: bool = True
    shared_depthwise: bool = False
    freeze_window: bool = False
    dtype: str = "float32"
    grid_init: float = 1e-2

    def __post_init__(self):
        if len(self.channels) != len(self.factors) + 1:
            raise ValueError("channels must list the embedding width plus one width per block")
        if self.kernel_size % 2 == 0:
            raise ValueError(f"depthwise kernel size must be odd, got {self.kernel_size}")
        up = self.upsample
        if self.height % up or self.width % up:
            raise ValueError(f"frame {self.height}x{self.width} not divisible by upsampling {up}")
        if self.frames < 2:
            raise ValueError("at least two frames required")
        if self.window < 1:
            raise ValueError("window must be positive")

    @property
    def upsample(self) -> int:
        return math.prod(self.factors)

    @property
    def grid_size(self) -> tuple[int, int]:
        return self.height // self.upsample, self.width // self.upsample

    @property
    def grid_channels(self) -> tuple[int, ...]:
        total = self.channels[0]
        parts = [total * s // sum(self.grid_split) for s in self.grid_split]
        parts[0] += total - sum(parts)
        return tuple(parts)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        d = dict(d)
        for key in ("channels", "factors", "grid_strides", "grid_split"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def widened(self, multiplier: float) -> ModelConfig:
        chans = tuple(max(1, round(c * multiplier)) for c in self.channels)
        return replace(self, channels=chans)


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


@dataclass
class TeNeRVBlock:
    factor: int
    expand_weight: Tensor
    expand_bias: Tensor
    depthwise_kernels: Tensor  # [S, C, k, k]
    depthwise_bias: Tensor  # [S, C]
    project_weight: Tensor
    project_bias: Tensor

    @classmethod
    def create(cls, cin: int, cout: int, factor: int, k: int, rng, dtype) -> TeNeRVBlock:
        r2 = factor * factor
        return cls(
            factor=factor,
            expand_weight=_kaiming_uniform(rng, (cout * r2, cin), cin, dtype),
            expand_bias=_zeros((cout * r2,), dtype),
            depthwise_kernels=_kaiming_uniform(rng, (1, cout, k, k), k * k, dtype),
            depthwise_bias=_zeros((1, cout), dtype),
            project_weight=_kaiming_uniform(rng, (cout, cout), cout, dtype),
            project_bias=_zeros((cout,), dtype),
        )

    @property
    def slices(self) -> int:
        return self.depthwise_kernels.shape[0]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [
            ("expand.weight", self.expand_weight),
            ("expand.bias", self.expand_bias),
            ("depthwise.weight", self.depthwise_kernels),
            ("depthwise.bias", self.depthwise_bias),
            ("project.weight", self.project_weight),
            ("project.bias", self.project_bias),
        ]


def block_forward(block: TeNeRVBlock, x: Tensor, k, params: dict | None = None) -> Tensor:
    """Run one block on ``x`` ``[B,Cin,H,W]``; ``k`` is a GoP index or one per sample.

    ``params`` optionally substitutes (e.g. fake-quantized) tensors by attribute name.
    """
    p = params or {}
    get = lambda name: p.get(name, getattr(block, name))  # noqa: E731
    ks = np.broadcast_to(np.asarray(k, dtype=np.int64), (x.shape[0],))
    if ks.size and (ks.min() < 0 or ks.max() >= block.slices):
        raise IndexError(f"GoP index {ks.max()} beyond {block.slices} active depthwise slices")
    h = tt.conv2d_pointwise(x, get("expand_weight"), get("expand_bias"))
    h = tt.gelu(tt.channel_to_space(h, block.factor))
    dw_k = get("depthwise_kernels")
    dw_b = get("depthwise_bias")
    if block.slices == 1:
        h = tt.conv2d_depthwise(h, dw_k.reshape(dw_k.shape[1:]), dw_b.reshape(dw_b.shape[1:]))
    else:
        h = tt.conv2d_depthwise(h, tt.take(dw_k, ks), tt.take(dw_b, ks))
    h = tt.gelu(h)
    return tt.conv2d_pointwise(h, get("project_weight"), get("project_bias"))


class TeNeRV:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        dtype = np.dtype(config.dtype)
        rng = np.random.default_rng(seed)
        base = BaseGridSet.create(
            config.frames,
            config.window,
            config.grid_channels,
            config.grid_strides,
            config.grid_size,
            rng,
            dtype,
            config.grid_init,
        )
        self.grids = TemporalGrids(
            base,
            WindowWeights.one_hot(config.frames, config.window, dtype, frozen=config.freeze_window),
            GoPGridSet(),
        )
        ch = config.channels
        self.blocks = [
            TeNeRVBlock.create(ch[i], ch[i + 1], r, config.kernel_size, rng, dtype)
            for i, r in enumerate(config.factors)
        ]
        self.head_weight = _kaiming_uniform(rng, (3, ch[-1]), ch[-1], dtype)
        self.head_bias = _zeros((3,), dtype)
        self.partition: GopPartition | None = None
        self.gam_active = False
        self.quant_bits: int | None = None

    # parameters ---------------------------------------------------------

    def named_parameters(self) -> "OrderedDict[str, Tensor]":
        out: OrderedDict[str, Tensor] = OrderedDict()
        for i, g in enumerate(self.grids.base.grids):
            out[f"grid.{i}"] = g
        out["window"] = self.grids.window.weights
        if self.grids.gop.grids is not None:
            out["gop_grids"] = self.grids.gop.grids
        for i, b in enumerate(self.blocks):
            for name, t in b.named_parameters():
                out[f"block{i}.{name}"] = t
        out["head.weight"] = self.head_weight
        out["head.bias"] = self.head_bias
        return out

    def trainable_parameters(self) -> list[Tensor]:
        return [
            t
            for name, t in self.named_parameters().items()
            if not (name == "window" and self.grids.window.frozen)
        ]

    def set_parameter(self, name: str, value: np.ndarray) -> None:
        target = self.named_parameters()[name]
        if target.shape != value.shape:
            raise tt.DimensionError(f"{name}: shape {value.shape} != {target.shape}")
        target.data = np.ascontiguousarray(value, dtype=target.dtype)

    def param_report(self) -> dict[str, int]:
        groups = {"base_grids": 0, "window": 0, "gop_grids": 0, "depthwise": 0, "pointwise": 0, "head": 0}
        for name, t in self.named_parameters().items():
            if name.startswith("grid."):
                groups["base_grids"] += t.size
            elif name == "window":
                groups["window"] += t.size
            elif name == "gop_grids":
                groups["gop_grids"] += t.size
            elif ".depthwise." in name:
                groups["depthwise"] += t.size
            elif name.startswith("head."):
                groups["head"] += t.size
            else:
                groups["pointwise"] += t.size
        groups["total"] = sum(groups.values())
        return groups

    def num_parameters(self) -> int:
        return self.param_report()["total"]

    # GoP-adaptive modulation -------------------------------------------------

    def activate_gam(self, partition: GopPartition) -> None:
        if self.gam_active:
            raise UsageError("GoP-adaptive modulation is already active")
        if partition.frames != self.config.frames:
            raise ValueError(f"partition covers {partition.frames} frames, model {self.config.frames}")
        K = partition.count
        if not self.config.shared_depthwise:
            for b in self.blocks:
                b.depthwise_kernels = Tensor(
                    np.repeat(b.depthwise_kernels.data, K, axis=0), requires_grad=True
                )
                b.depthwise_bias = Tensor(np.repeat(b.depthwise_bias.data, K, axis=0), requires_grad=True)
        if self.config.gop_grids:
            C = self.grids.base.channels
            self.grids.gop.activate(K, (C,) + tuple(self.config.grid_size), np.dtype(self.config.dtype))
        self.partition = partition
        self.gam_active = True

    def gop_indices(self, ts: Sequence[int]) -> np.ndarray:
        if self.partition is None:
            return np.zeros(len(ts), dtype=np.int64)
        return np.array([self.partition.gop_of(int(t)) for t in ts], dtype=np.int64)

    # forward -----------------------------------------------------------------

    def _effective(self) -> dict[str, Tensor]:
        named = self.named_parameters()
        if self.quant_bits is None:
            return named
        return OrderedDict((n, fake_quantize(t, self.quant_bits)) for n, t in named.items())

    def forward(self, ts: Iterable[int], clamp: bool = False) -> Tensor:
        """Frames ``ts`` as ``[n,3,H,W]``; ``clamp`` restricts to [0,1] for evaluation."""
        ts = np.asarray(list(ts), dtype=np.int64)
        if ts.size and (ts.min() < 0 or ts.max() >= self.config.frames):
            raise IndexError(f"frame index outside [0, {self.config.frames - 1}]")
        P = self._effective()
        ks = self.gop_indices(ts)
        n_grids = len(self.grids.base.grids)
        base = BaseGridSet(self.grids.base.strides, [P[f"grid.{i}"] for i in range(n_grids)],
                           self.grids.base.expanded_length)
        window = WindowWeights(P["window"], self.grids.window.frozen)
        x = fuse_window_many(base, window, ts)
        if self.grids.gop.active and "gop_grids" in P:
            x = fuse_gop_many(x, GoPGridSet(P["gop_grids"], True), ks)
        for i, b in enumerate(self.blocks):
            sub = {
                "expand_weight": P[f"block{i}.expand.weight"],
                "expand_bias": P[f"block{i}.expand.bias"],
                "depthwise_kernels": P[f"block{i}.depthwise.weight"],
                "depthwise_bias": P[f"block{i}.depthwise.bias"],
                "project_weight": P[f"block{i}.project.weight"],
                "project_bias": P[f"block{i}.project.bias"],
            }
            x = block_forward(b, x, ks if b.slices > 1 else 0, sub)
        out = tt.conv2d_pointwise(x, P["head.weight"], P["head.bias"])
        if clamp:
            out = tt.clamp(out, 0.0, 1.0)
        return out

    def model_forward(self, t: int, clamp: bool = False) -> Tensor:
        out = self.forward([t], clamp)
        return out.reshape(out.shape[1:])

    def render(self, batch: int = 8) -> np.ndarray:
        """All frames, clamped, ``[T,3,H,W]``."""
        T = self.config.frames
        with tt.no_grad():
            parts = [self.forward(range(s, min(s + batch, T)), clamp=True).data for s in range(0, T, batch)]
        return np.concatenate(parts, axis=0)

    def temporal_embeddings(self) -> np.ndarray:
        return self.grids.temporal_embeddings()


def count_parameters(config: ModelConfig, gops: int) -> int:
    """Parameter count of ``config`` after GAM activation with ``gops`` GoPs."""
    m = TeNeRV(config, seed=0)
    T = config.frames
    step = max(1, T // gops)
    b = tuple(range(step, step * gops, step))[: gops - 1]
    m.activate_gam(GopPartition(b, T))
    return m.num_parameters()


def match_budget(config: ModelConfig, target: int, gops: int) -> ModelConfig:
    """Widen ``config`` so its parameter count is as close to ``target`` as possible."""
    best, best_gap = config, abs(count_parameters(config, gops) - target)
    for step in range(1, 81):
        cand = config.widened(1.0 + 0.01 * step)
        gap = abs(count_parameters(cand, gops) - target)
        if gap < best_gap:
            best, best_gap = cand, gap
    return best
