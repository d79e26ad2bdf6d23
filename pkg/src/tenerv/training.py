"""Per-video training: holistic pretraining, GoP-adaptive training, and QAT.

The whole pipeline is deterministic for a given seed: frame order comes from a
seeded generator and every reduction runs in a fixed order on one thread.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import metrics
from .codec import bitstream
from .gop import (
    GopPartition,
    default_gop_count,
    divergence,
    fixed_length_partition,
    partition,
    uniform_partition,
)
from .model import ModelConfig, TeNeRV
from .optim import Adam
from .tensor import Tensor
from .video import from_uint8, to_uint8

log = logging.getLogger(__name__)

VARIANTS = ("full", "V1", "V2", "V3", "V4", "V5")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    total_epochs: int = 330
    pretrain_epochs: int = 30
    qat_epochs: int = 30
    lr: float = 1e-2
    warmup_epochs: float = 1.0
    qat_lr: float = 5e-4
    alpha: float = 0.7
    batch_size: int = 1
    seed: int = 1
    bits: int = 8
    msssim_scales: int = 3
    # ablations
    disable_iff: bool = False
    disable_gop_grids: bool = False
    shared_depthwise: bool = False
    fixed_gop_length: Optional[int] = None
    uniform_gop: bool = False
    # partitioning
    gop_count: Optional[int] = None
    min_gop_length: int = 4
    target_gop_length: int = 8
    # architecture
    channels: tuple = (32, 48, 24, 12)
    factors: tuple = (4, 2, 2)
    kernel_size: int = 3
    window: int = 3
    grid_strides: tuple = (1, 4)
    grid_split: tuple = (3, 1)
    dtype: str = "float32"

    def __post_init__(self):
        self.channels = tuple(self.channels)
        self.factors = tuple(self.factors)
        self.grid_strides = tuple(self.grid_strides)
        self.grid_split = tuple(self.grid_split)

    @property
    def adaptive_epochs(self) -> int:
        return self.total_epochs - self.pretrain_epochs - self.qat_epochs

    @property
    def partition_mode(self) -> str:
        if self.fixed_gop_length is not None:
            return "fixed"
        if self.uniform_gop:
            return "uniform"
        return "content"

    def validate(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if min(self.pretrain_epochs, self.qat_epochs, self.adaptive_epochs) < 0:
            raise ConfigError(
                f"stage epochs {self.pretrain_epochs}/{self.adaptive_epochs}/{self.qat_epochs} "
                f"do not fit total {self.total_epochs}"
            )
        if self.fixed_gop_length is not None and self.uniform_gop:
            raise ConfigError("fixed_gop_length and uniform_gop are mutually exclusive")
        if self.qat_epochs and self.bits < 2:
            raise ConfigError(f"QAT needs at least 2 bits, got {self.bits}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")

    def model_config(self, frames: int, height: int, width: int) -> ModelConfig:
        return ModelConfig(
            frames=frames,
            height=height,
            width=width,
            channels=self.channels,
            factors=self.factors,
            kernel_size=self.kernel_size,
            window=1 if self.disable_iff else self.window,
            grid_strides=self.grid_strides,
            grid_split=self.grid_split,
            gop_grids=not self.disable_gop_grids,
            shared_depthwise=self.shared_depthwise,
            freeze_window=self.disable_iff,
            dtype=self.dtype,
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> TrainConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))


def variant_config(cfg: TrainConfig, variant: str) -> TrainConfig:
    """Ablation variants: V1 no window fusion, V2 no GoP grids, V3 one shared
    depthwise kernel set, V4 fixed-length GoPs, V5 length-only uniform GoPs."""
    base = replace(
        cfg,
        disable_iff=False,
        disable_gop_grids=False,
        shared_depthwise=False,
        fixed_gop_length=None,
        uniform_gop=False,
    )
    if variant == "full":
        return base
    if variant == "V1":
        return replace(base, disable_iff=True)
    if variant == "V2":
        return replace(base, disable_gop_grids=True)
    if variant == "V3":
        return replace(base, shared_depthwise=True)
    if variant == "V4":
        return replace(base, fixed_gop_length=cfg.target_gop_length)
    if variant == "V5":
        return replace(base, uniform_gop=True)
    raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


# losses ----------------------------------------------------------------------


def hybrid_loss(pred: Tensor, target, alpha: float, scales: int = 3) -> Tensor:
    """``alpha * (1 - MS-SSIM) + (1 - alpha) * L1``."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=pred.dtype))
    l1 = metrics.l1_loss(pred, target)
    if alpha == 0.0:
        return l1
    ssim = metrics.ms_ssim(pred, target, scales)
    if alpha == 1.0:
        return 1.0 - ssim
    return (1.0 - ssim) * alpha + l1 * (1.0 - alpha)


# schedule --------------------------------------------------------------------


def lr_at(progress: float, total: float, peak: float, warmup: float) -> float:
    """Linear warmup over ``warmup`` epochs, then cosine decay to zero at ``total``."""
    if total <= 0:
        return peak
    if warmup > 0 and progress < warmup:
        return peak * (progress + 1e-3) / warmup
    span = max(total - warmup, 1e-9)
    frac = min(max((progress - warmup) / span, 0.0), 1.0)
    return 0.5 * peak * (1.0 + math.cos(math.pi * frac))


# state -----------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    stage: str
    lr: float
    loss: float
    psnr: float
    seconds: float


@dataclass
class Trainer:
    """Owns a model, its video, its optimizer, and the training history."""

    model: TeNeRV
    video: np.ndarray  # [T,3,H,W] float in [0,1]
    cfg: TrainConfig
    history: list[EpochRecord] = field(default_factory=list)
    optimizer: Adam | None = None
    rng: np.random.Generator | None = None
    clock: Callable[[], float] = time.perf_counter
    elapsed: float = 0.0
    eval_every_epoch: bool = True

    def __post_init__(self):
        self.cfg.validate()
        self.target = self.video.astype(np.dtype(self.model.config.dtype))
        if self.rng is None:
            self.rng = np.random.default_rng(self.cfg.seed)
        if self.optimizer is None:
            self._rebuild_optimizer()

    # optimizer bookkeeping -------------------------------------------------

    def _rebuild_optimizer(self, carry: dict | None = None) -> None:
        named = self.model.named_parameters()
        trainable = {id(t) for t in self.model.trainable_parameters()}
        params = [t for t in named.values() if id(t) in trainable]
        names = [n for n, t in named.items() if id(t) in trainable]
        opt = Adam(params, lr=self.cfg.lr)
        if carry:
            opt.state.step = carry["step"]
            for i, (name, p) in enumerate(zip(names, params)):
                if name not in carry["m"]:
                    continue
                m, v = carry["m"][name], carry["v"][name]
                if m.shape != p.shape:
                    reps = p.shape[0] // m.shape[0]
                    m, v = np.repeat(m, reps, axis=0), np.repeat(v, reps, axis=0)
                opt.state.m[i], opt.state.v[i] = m.copy(), v.copy()
        self.optimizer = opt
        self._names = names

    def _optimizer_snapshot(self) -> dict:
        st = self.optimizer.state
        return {
            "step": st.step,
            "m": dict(zip(self._names, st.m)),
            "v": dict(zip(self._names, st.v)),
        }

    # core loop ---------------------------------------------------------------

    def evaluate(self) -> float:
        return metrics.video_psnr(self.model.render(), self.video)

    def _run_epochs(self, epochs: int, stage: str, loss_fn, lr_fn) -> None:
        T = self.model.config.frames
        bs = self.cfg.batch_size
        steps = math.ceil(T / bs)
        for e in range(epochs):
            start = self.clock()
            order = self.rng.permutation(T)
            losses = []
            for s in range(steps):
                batch = np.sort(order[s * bs : (s + 1) * bs])
                self.optimizer.lr = lr_fn(e + s / steps)
                pred = self.model.forward(batch)
                loss = loss_fn(pred, self.target[batch])
                self.optimizer.zero_grad()
                loss.backward()
                self.optimizer.step()
                losses.append(loss.item())
            self.elapsed += self.clock() - start
            score = self.evaluate() if self.eval_every_epoch else float("nan")
            rec = EpochRecord(len(self.history), stage, self.optimizer.lr, float(np.mean(losses)), score, self.elapsed)
            self.history.append(rec)
            log.debug("epoch %d %s loss %.5f psnr %.2f", rec.epoch, stage, rec.loss, rec.psnr)

    def _schedule(self, offset: int):
        total = self.cfg.pretrain_epochs + self.cfg.adaptive_epochs
        return lambda p: lr_at(offset + p, total, self.cfg.lr, self.cfg.warmup_epochs)

    def pretrain(self) -> list[EpochRecord]:
        if self.model.gam_active:
            raise ConfigError("pretraining requires the holistic configuration")
        n0 = len(self.history)
        self._run_epochs(
            self.cfg.pretrain_epochs, "pretrain", metrics.l1_loss, self._schedule(0)
        )
        return self.history[n0:]

    def choose_partition(self) -> GopPartition:
        T = self.model.config.frames
        cfg = self.cfg
        K = cfg.gop_count or default_gop_count(T, cfg.target_gop_length)
        mode = cfg.partition_mode
        if mode == "fixed":
            return fixed_length_partition(T, cfg.fixed_gop_length)
        if mode == "uniform":
            return uniform_partition(T, K)
        D = divergence(self.model.temporal_embeddings())
        return partition(D, K, cfg.min_gop_length)

    def activate(self, p: GopPartition | None = None) -> GopPartition:
        p = p or self.choose_partition()
        carry = self._optimizer_snapshot()
        self.model.activate_gam(p)
        self._rebuild_optimizer(carry)
        return p

    def adaptive_train(self, p: GopPartition | None = None) -> GopPartition:
        if not self.model.gam_active:
            p = self.activate(p)
        cfg = self.cfg
        self._run_epochs(
            cfg.adaptive_epochs,
            "adaptive",
            lambda a, b: hybrid_loss(a, b, cfg.alpha, cfg.msssim_scales),
            self._schedule(cfg.pretrain_epochs),
        )
        return self.model.partition

    def qat_finetune(self, bits: int | None = None) -> None:
        bits = self.cfg.bits if bits is None else bits
        if bits < 2:
            raise ConfigError(f"QAT needs at least 2 bits, got {bits}")
        cfg = self.cfg
        self.model.quant_bits = bits
        epochs = cfg.qat_epochs
        self._run_epochs(
            epochs,
            "qat",
            lambda a, b: hybrid_loss(a, b, cfg.alpha, cfg.msssim_scales),
            lambda p: lr_at(p, epochs, cfg.qat_lr, 0.0),
        )

    def history_csv(self) -> str:
        return history_csv(self.history)


def history_csv(history: list[EpochRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "stage", "lr", "loss", "psnr", "seconds"])
    for r in history:
        w.writerow([r.epoch, r.stage, repr(r.lr), repr(r.loss), repr(r.psnr), repr(r.seconds)])
    return buf.getvalue()


def build_model(video: np.ndarray, cfg: TrainConfig) -> TeNeRV:
    T, _, H, W = video.shape
    return TeNeRV(cfg.model_config(T, H, W), seed=cfg.seed)


def pretrain(model: TeNeRV, video: np.ndarray, cfg: TrainConfig) -> Trainer:
    tr = Trainer(model, video, cfg)
    tr.pretrain()
    return tr


@dataclass
class TrainResult:
    model: TeNeRV
    stream: bytes
    rd: metrics.RDPoint
    psnr: float
    msssim: float
    history: list[EpochRecord]
    partition: GopPartition
    train_seconds: float
    decoded: np.ndarray

    def history_csv(self) -> str:
        return history_csv(self.history)


def compress(model: TeNeRV, video: np.ndarray, bits: int, scales: int = 3) -> tuple[bytes, np.ndarray, metrics.RDPoint, float, float]:
    """Serialize, decode, and score; returns (stream, decoded frames, RD point, PSNR, MS-SSIM).

    Decoded frames are scored as the 8-bit pictures a decoder writes out.
    """
    stream = bitstream.serialize(model, bits)
    decoded = from_uint8(to_uint8(bitstream.deserialize(stream).render()))
    T, _, H, W = video.shape
    score = metrics.video_psnr(decoded, video)
    ssim = float(np.mean([metrics.ms_ssim_value(decoded[t], video[t], scales) for t in range(T)]))
    rate = bitstream.bits_per_pixel(stream, T, H, W)
    return stream, decoded, metrics.RDPoint(rate, score), score, ssim


def train_full(video: np.ndarray, cfg: TrainConfig, trainer_hook: Callable[[Trainer], None] | None = None) -> TrainResult:
    """Pretrain, partition, GoP-adaptive training, QAT, then compress."""
    cfg.validate()
    model = build_model(video, cfg)
    tr = Trainer(model, video, cfg)
    if trainer_hook is not None:
        trainer_hook(tr)
    tr.pretrain()
    part = tr.adaptive_train()
    if cfg.qat_epochs:
        tr.qat_finetune(cfg.bits)
    stream, decoded, rd, score, ssim = compress(model, video, cfg.bits, cfg.msssim_scales)
    return TrainResult(model, stream, rd, score, ssim, tr.history, part, tr.elapsed, decoded)
