"""Command-line interface: ``tenerv {gen,encode,decode,export-y4m,partition,metrics,bench}``.

Exit codes: 0 success, 1 usage, 2 data or parse error, 3 internal error.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench, metrics
from .codec import bitstream
from .codec.quant import QuantizationError
from .codec.rangecoder import EntropyDataError, StreamError
from .gop import DegenerateInputError, InfeasiblePartitionError, default_gop_count, divergence, partition
from .tensor import DimensionError
from .training import VARIANTS, ConfigError, TrainConfig, train_full
from .video import SYNTHETIC_KINDS, ParseError, gen_synthetic, load_video, write_raw, write_y4m

log = logging.getLogger("tenerv")

EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 1, 2, 3

DATA_ERRORS = (
    ParseError,
    bitstream.FormatError,
    ConfigError,
    QuantizationError,
    EntropyDataError,
    StreamError,
    DegenerateInputError,
    InfeasiblePartitionError,
    metrics.MetricConfigError,
    DimensionError,
    OSError,
    ValueError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_dims(p: argparse.ArgumentParser) -> None:
    p.add_argument("--width", type=int, help="frame width for raw RGB input")
    p.add_argument("--height", type=int, help="frame height for raw RGB input")
    p.add_argument("--max-frames", type=int)


def _write_frames(frames: np.ndarray, out: Path) -> None:
    """``.y4m`` file, single ``.rgb`` file, or a directory of per-frame ``.rgb`` files."""
    if out.suffix == ".y4m":
        write_y4m(out, frames)
    elif out.suffix == ".rgb":
        write_raw(out, frames)
    else:
        out.mkdir(parents=True, exist_ok=True)
        for t, frame in enumerate(frames):
            write_raw(out / f"frame_{t:04d}.rgb", frame[None])


def cmd_gen(args) -> int:
    video = gen_synthetic(args.kind, args.frames, args.height, args.width, args.seed)
    _write_frames(video.frames, Path(args.out))
    return 0


def cmd_encode(args) -> int:
    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    if args.bits is not None:
        cfg.bits = args.bits
    video = load_video(args.input, args.width, args.height, args.max_frames).frames
    res = train_full(video, cfg)
    Path(args.out).write_bytes(res.stream)
    if args.history:
        Path(args.history).write_text(res.history_csv())
    print("bpp,psnr,msssim,bytes,train_seconds")
    print(f"{res.rd.rate!r},{res.psnr!r},{res.msssim!r},{len(res.stream)},{res.train_seconds!r}")
    return 0


def cmd_decode(args) -> int:
    model = bitstream.load(args.input)
    _write_frames(model.render(), Path(args.out))
    return 0


def cmd_export_y4m(args) -> int:
    src = Path(args.input)
    if src.suffix == ".tnrv":
        frames = bitstream.load(src).render()
    else:
        frames = load_video(src, args.width, args.height, args.max_frames).frames
    write_y4m(args.out, frames)
    return 0


def _read_scores(path: str) -> np.ndarray:
    values = []
    for row in csv.reader(io.StringIO(Path(path).read_text())):
        if not row or not row[-1].strip():
            continue
        try:
            values.append(float(row[-1]))
        except ValueError:
            if values:
                raise ParseError(f"non-numeric divergence {row[-1]!r}", 0) from None
            # header line
    return np.asarray(values, dtype=np.float64)


def cmd_partition(args) -> int:
    if (args.scores is None) == (args.checkpoint is None):
        raise UsageError("partition needs exactly one of --scores or --checkpoint")
    if args.scores is not None:
        scores = _read_scores(args.scores)
    else:
        scores = divergence(bitstream.load(args.checkpoint).temporal_embeddings())
    T = scores.size + 1
    K = args.gops or default_gop_count(T, args.target_length)
    p = partition(scores, K, args.min_length)
    print(",".join(str(b) for b in p.boundaries))
    return 0


def cmd_metrics(args) -> int:
    ref = load_video(args.reference, args.width, args.height, args.max_frames).frames
    dist = load_video(args.distorted, args.width, args.height, args.max_frames).frames
    if ref.shape != dist.shape:
        raise DimensionError(f"reference {ref.shape} and distorted {dist.shape} differ")
    psnrs = metrics.frame_psnrs(dist, ref)
    ssims = [metrics.ms_ssim_value(d, r, args.scales) for d, r in zip(dist, ref)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame", "psnr", "msssim"])
    for t, (p, s) in enumerate(zip(psnrs, ssims)):
        w.writerow([t, repr(p), repr(s)])
    w.writerow(["mean", repr(float(np.mean(psnrs))), repr(float(np.mean(ssims)))])
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return 0


def cmd_bench(args) -> int:
    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    if args.epochs is not None:
        pre = max(1, round(args.epochs * cfg.pretrain_epochs / (cfg.total_epochs - cfg.qat_epochs)))
        cfg = replace(cfg, total_epochs=args.epochs + args.qat_epochs, pretrain_epochs=pre,
                      qat_epochs=args.qat_epochs)
    variants = VARIANTS if args.ablation else ("full",)
    if args.variants:
        variants = tuple(args.variants)
    results = bench.run_suite(
        cfg, args.kinds, args.seeds, variants, args.bits, args.frames, args.height, args.width
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "rd.csv").write_text(bench.rd_csv(results))
    if len(variants) > 1:
        table = bench.bd_table(results)
        (out / "bd_rate.csv").write_text(bench.bd_csv(table))
        print(f"{'variant':<8} {'median BD-rate':>15} {'mean BD-rate':>13} runs undefined")
        for variant, med, mean, n, undefined in table:
            print(f"{variant:<8} {med:>14.2f}% {mean:>12.2f}% {n:>4} {undefined:>9}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tenerv", description="Neural video codec with GoP-adaptive modulation.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a synthetic toy video")
    g.add_argument("--kind", choices=SYNTHETIC_KINDS, default="moving-square")
    g.add_argument("--frames", type=int, default=24)
    g.add_argument("--height", type=int, default=96)
    g.add_argument("--width", type=int, default=96)
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--out", required=True, help=".y4m, .rgb, or a directory")
    g.set_defaults(func=cmd_gen)

    e = sub.add_parser("encode", help="train on a video and write a .tnrv bitstream")
    e.add_argument("--input", required=True)
    e.add_argument("--config", help="flat JSON of training settings")
    e.add_argument("--bits", type=int)
    e.add_argument("--out", required=True)
    e.add_argument("--history", help="per-epoch CSV log")
    _add_dims(e)
    e.set_defaults(func=cmd_encode)

    d = sub.add_parser("decode", help="render every frame of a .tnrv bitstream")
    d.add_argument("input")
    d.add_argument("--out", required=True, help=".y4m, .rgb, or a directory of .rgb frames")
    d.set_defaults(func=cmd_decode)

    x = sub.add_parser("export-y4m", help="convert a bitstream or raw video to Y4M")
    x.add_argument("input")
    x.add_argument("--out", required=True)
    _add_dims(x)
    x.set_defaults(func=cmd_export_y4m)

    pa = sub.add_parser("partition", help="print GoP boundaries")
    pa.add_argument("--scores", help="CSV whose last column holds divergences for t=1..T-1")
    pa.add_argument("--checkpoint", help=".tnrv file whose embeddings are scored")
    pa.add_argument("--gops", type=int, help="number of GoPs K")
    pa.add_argument("--min-length", type=int, default=4)
    pa.add_argument("--target-length", type=int, default=8)
    pa.set_defaults(func=cmd_partition)

    m = sub.add_parser("metrics", help="per-frame PSNR and MS-SSIM as CSV")
    m.add_argument("--reference", required=True)
    m.add_argument("--distorted", required=True)
    m.add_argument("--scales", type=int, default=3)
    m.add_argument("--out")
    _add_dims(m)
    m.set_defaults(func=cmd_metrics)

    b = sub.add_parser("bench", help="RD benchmark on the synthetic toy suite")
    b.add_argument("--ablation", action="store_true", help="run the full model and V1-V5")
    b.add_argument("--variants", nargs="+", choices=VARIANTS)
    b.add_argument("--config")
    b.add_argument("--kinds", nargs="+", choices=SYNTHETIC_KINDS, default=list(SYNTHETIC_KINDS))
    b.add_argument("--seeds", nargs="+", type=int, default=[1, 2, 3])
    b.add_argument("--bits", nargs="+", type=int, default=[4, 5, 6, 8], help="bit-width ladder")
    b.add_argument("--epochs", type=int, help="pretrain plus adaptive epochs")
    b.add_argument("--qat-epochs", type=int, default=5)
    b.add_argument("--frames", type=int, default=24)
    b.add_argument("--height", type=int, default=96)
    b.add_argument("--width", type=int, default=96)
    b.add_argument("--out-dir", required=True)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"tenerv: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"tenerv: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"tenerv: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
