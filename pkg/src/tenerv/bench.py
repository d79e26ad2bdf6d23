"""Rate-distortion benchmark harness: ablation variants on the synthetic toy suite."""
from __future__ import annotations

import copy
import csv
import io
import logging
import math
import statistics
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from . import metrics
from .gop import default_gop_count
from .model import count_parameters, match_budget
from .training import VARIANTS, TrainConfig, Trainer, build_model, compress, variant_config
from .video import gen_synthetic

log = logging.getLogger(__name__)

RD_HEADER = ("video", "variant", "seed", "bpp", "psnr", "msssim", "train_seconds")
BD_HEADER = ("variant", "median_bd_rate", "mean_bd_rate", "runs", "undefined")


@dataclass(frozen=True)
class RunResult:
    video: str
    variant: str
    seed: int
    bpp: float
    psnr: float
    msssim: float
    train_seconds: float


def _order(r: RunResult):
    v = VARIANTS.index(r.variant) if r.variant in VARIANTS else len(VARIANTS)
    return (r.video, v, r.variant, r.seed, r.bpp)


def rd_csv(results: Iterable[RunResult]) -> str:
    results = sorted(results, key=_order)
    if not results:
        raise ValueError("rd_csv needs at least one result")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RD_HEADER)
    for r in results:
        w.writerow([r.video, r.variant, r.seed, repr(r.bpp), repr(r.psnr), repr(r.msssim), repr(r.train_seconds)])
    return buf.getvalue()


def parse_rd_csv(text: str) -> list[RunResult]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != RD_HEADER:
        raise ValueError(f"RD CSV must start with header {','.join(RD_HEADER)}")
    out = []
    for row in rows[1:]:
        video, variant, seed, *vals = row
        out.append(RunResult(video, variant, int(seed), *map(float, vals)))
    return out


def gop_count_for(cfg: TrainConfig, frames: int) -> int:
    if cfg.fixed_gop_length is not None:
        return math.ceil(frames / cfg.fixed_gop_length)
    return cfg.gop_count or default_gop_count(frames, cfg.target_gop_length)


def budget_matched(cfg: TrainConfig, variant: str, frames: int, height: int, width: int) -> TrainConfig:
    """Variant config widened so its parameter count matches the full model's."""
    full = variant_config(cfg, "full")
    target = count_parameters(full.model_config(frames, height, width), gop_count_for(full, frames))
    vcfg = variant_config(cfg, variant)
    mcfg = match_budget(vcfg.model_config(frames, height, width), target, gop_count_for(vcfg, frames))
    return replace(vcfg, channels=mcfg.channels)


def run_variant(
    name: str,
    video: np.ndarray,
    cfg: TrainConfig,
    variant: str,
    bit_ladder: Sequence[int],
) -> list[RunResult]:
    """Train one variant once, then QAT-finetune and compress at each bit width."""
    T, _, H, W = video.shape
    vcfg = budget_matched(cfg, variant, T, H, W)
    tr = Trainer(build_model(video, vcfg), video, vcfg, eval_every_epoch=False)
    tr.pretrain()
    tr.adaptive_train()
    base_seconds = tr.elapsed
    results = []
    for bits in bit_ladder:
        branch = copy.deepcopy(tr)  # model and optimizer state stay linked in the copy
        branch.qat_finetune(bits)
        stream, _, rd, score, ssim = compress(branch.model, video, bits, vcfg.msssim_scales)
        results.append(RunResult(name, variant, vcfg.seed, rd.rate, score, ssim, base_seconds + branch.elapsed))
        log.info("%s %s seed %d bits %d: %.4f bpp %.2f dB", name, variant, vcfg.seed, bits, rd.rate, score)
    return results


def run_suite(
    cfg: TrainConfig,
    kinds: Sequence[str],
    seeds: Sequence[int],
    variants: Sequence[str],
    bit_ladder: Sequence[int],
    frames: int = 24,
    height: int = 96,
    width: int = 96,
) -> list[RunResult]:
    results = []
    for kind in kinds:
        for seed in seeds:
            video = gen_synthetic(kind, frames, height, width, seed).frames
            scfg = replace(cfg, seed=seed)
            for variant in variants:
                results += run_variant(kind, video, scfg, variant, bit_ladder)
    return results


def bd_rates(results: Sequence[RunResult], anchor: str = "full") -> dict[str, list[float]]:
    """BD-rate of every non-anchor variant against the anchor, one value per (video, seed).

    Pairs whose quality ranges do not overlap have no BD-rate and yield NaN.
    """
    curves: dict[tuple[str, str, int], list[metrics.RDPoint]] = {}
    for r in results:
        curves.setdefault((r.video, r.variant, r.seed), []).append(metrics.RDPoint(r.bpp, r.psnr))
    out: dict[str, list[float]] = {}
    for (video, variant, seed), pts in sorted(curves.items(), key=lambda kv: kv[0]):
        if variant == anchor:
            continue
        ref = curves.get((video, anchor, seed))
        if ref is None:
            raise ValueError(f"no {anchor} run for {video} seed {seed}")
        try:
            value = metrics.bd_rate(ref, pts)
        except metrics.DisjointCurvesError as exc:
            log.warning("%s %s seed %d: %s", video, variant, seed, exc)
            value = math.nan
        out.setdefault(variant, []).append(value)
    return out


def bd_table(results: Sequence[RunResult], anchor: str = "full") -> list[tuple[str, float, float, int, int]]:
    """Per variant: median and mean BD-rate over the defined pairs, their count, and the undefined count."""
    rates = bd_rates(results, anchor)
    order = sorted(rates, key=lambda v: VARIANTS.index(v) if v in VARIANTS else len(VARIANTS))
    rows = []
    for v in order:
        defined = [x for x in rates[v] if not math.isnan(x)]
        med = statistics.median(defined) if defined else math.nan
        mean = statistics.fmean(defined) if defined else math.nan
        rows.append((v, med, mean, len(defined), len(rates[v]) - len(defined)))
    return rows


def bd_csv(table: Sequence[tuple[str, float, float, int, int]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BD_HEADER)
    for row in table:
        w.writerow([row[0], repr(row[1]), repr(row[2]), row[3], row[4]])
    return buf.getvalue()
