"""Video ingestion: a YUV4MPEG2 (8-bit 4:2:0) subset, headerless raw RGB, and
deterministic synthetic toy videos."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

Y4M_MAGIC = b"YUV4MPEG2"
SUPPORTED_CHROMA = {"420", "420jpeg", "420paldv", "420mpeg2"}


class ParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


@dataclass
class VideoBuffer:
    frames: np.ndarray  # [T,3,H,W] float32 in [0,1]
    fps: tuple[int, int] = (25, 1)

    @property
    def shape(self) -> tuple[int, int, int]:
        T, _, H, W = self.frames.shape
        return T, H, W


# colour conversion (BT.601 full range) --------------------------------------


def yuv_to_rgb(y: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Full-resolution planes (0..255) to RGB ``[3,H,W]`` in [0,1]."""
    y = y.astype(np.float64)
    cb = u.astype(np.float64) - 128.0
    cr = v.astype(np.float64) - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.clip(np.stack([r, g, b]) / 255.0, 0.0, 1.0)


def rgb_to_yuv420(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """RGB ``[3,H,W]`` in [0,1] to 8-bit Y and 2x2-averaged U, V planes."""
    r, g, b = (rgb.astype(np.float64) * 255.0)
    y = 0.299 * r + 0.587 * g + 0.114 * b
    u = 128.0 + (b - y) / 1.772
    v = 128.0 + (r - y) / 1.402
    H, W = y.shape
    ch, cw = (H + 1) // 2, (W + 1) // 2

    def sub(p):
        padded = np.pad(p, ((0, 2 * ch - H), (0, 2 * cw - W)), mode="edge")
        return padded.reshape(ch, 2, cw, 2).mean(axis=(1, 3))

    to8 = lambda p: np.clip(np.floor(p + 0.5), 0, 255).astype(np.uint8)  # noqa: E731
    return to8(y), to8(sub(u)), to8(sub(v))


# Y4M -------------------------------------------------------------------------


def _parse_header(line: bytes, offset: int) -> dict:
    if not line.startswith(Y4M_MAGIC):
        raise ParseError("missing YUV4MPEG2 signature", offset)
    info = {"C": "420jpeg", "F": (25, 1)}
    pos = offset + len(Y4M_MAGIC)
    for token in line[len(Y4M_MAGIC) :].split(b" "):
        if not token:
            pos += 1
            continue
        tag, value = chr(token[0]), token[1:].decode("ascii", errors="replace")
        try:
            if tag in "WH":
                info[tag] = int(value)
            elif tag == "F":
                num, den = value.split(":")
                info["F"] = (int(num), int(den))
            elif tag == "C":
                info["C"] = value
            # I (interlace), A (aspect), X (comment) are informational
        except ValueError:
            raise ParseError(f"malformed header tag {token!r}", pos) from None
        pos += len(token) + 1
    for tag in "WH":
        if tag not in info or info[tag] <= 0:
            raise ParseError(f"header lacks a positive {tag} tag", offset)
    if info["C"] not in SUPPORTED_CHROMA:
        raise ParseError(f"unsupported colorspace C{info['C']}; only 8-bit 4:2:0", offset)
    return info


def center_crop(frames: np.ndarray, multiple: int) -> np.ndarray:
    """Crop ``[T,3,H,W]`` about the centre to dimensions divisible by ``multiple``."""
    H, W = frames.shape[-2:]
    h, w = H - H % multiple, W - W % multiple
    if h == 0 or w == 0:
        raise ValueError(f"{H}x{W} frame cannot be cropped to a multiple of {multiple}")
    top, left = (H - h) // 2, (W - w) // 2
    return frames[..., top : top + h, left : left + w]


def parse_y4m(data: bytes, max_frames: int | None = None) -> VideoBuffer:
    if max_frames is not None and max_frames < 1:
        raise ValueError(f"max_frames must be >= 1, got {max_frames}")
    nl = data.find(b"\n")
    if nl < 0:
        raise ParseError("unterminated stream header", len(data))
    info = _parse_header(data[:nl], 0)
    W, H = info["W"], info["H"]
    cw, ch = (W + 1) // 2, (H + 1) // 2
    frame_bytes = W * H + 2 * cw * ch
    pos = nl + 1
    frames = []
    while pos < len(data) and (max_frames is None or len(frames) < max_frames):
        if not data.startswith(b"FRAME", pos):
            raise ParseError("expected FRAME marker", pos)
        end = data.find(b"\n", pos)
        if end < 0:
            raise ParseError("unterminated FRAME header", pos)
        pos = end + 1
        if pos + frame_bytes > len(data):
            raise ParseError(
                f"truncated frame {len(frames)}: need {frame_bytes} bytes, have {len(data) - pos}", pos
            )
        buf = np.frombuffer(data, dtype=np.uint8, count=frame_bytes, offset=pos)
        y = buf[: W * H].reshape(H, W)
        u = buf[W * H : W * H + cw * ch].reshape(ch, cw)
        v = buf[W * H + cw * ch :].reshape(ch, cw)
        up = lambda p: np.repeat(np.repeat(p, 2, axis=0), 2, axis=1)[:H, :W]  # noqa: E731
        frames.append(yuv_to_rgb(y, up(u), up(v)).astype(np.float32))
        pos += frame_bytes
    if not frames:
        raise ParseError("stream holds no frames", pos)
    return VideoBuffer(np.stack(frames), info["F"])


def load_y4m(path: str | Path, max_frames: int | None = None, crop: int | None = None) -> VideoBuffer:
    """Read an 8-bit 4:2:0 Y4M file as RGB; optionally centre-crop to a multiple of ``crop``."""
    video = parse_y4m(Path(path).read_bytes(), max_frames)
    if crop:
        video.frames = np.ascontiguousarray(center_crop(video.frames, crop))
    return video


def encode_y4m(video: VideoBuffer | np.ndarray, fps: tuple[int, int] = (25, 1)) -> bytes:
    frames = video.frames if isinstance(video, VideoBuffer) else np.asarray(video)
    if isinstance(video, VideoBuffer):
        fps = video.fps
    T, _, H, W = frames.shape
    out = bytearray(f"YUV4MPEG2 W{W} H{H} F{fps[0]}:{fps[1]} Ip A1:1 C420jpeg\n".encode())
    for t in range(T):
        y, u, v = rgb_to_yuv420(frames[t])
        out += b"FRAME\n" + y.tobytes() + u.tobytes() + v.tobytes()
    return bytes(out)


def write_y4m(path: str | Path, video: VideoBuffer | np.ndarray) -> None:
    Path(path).write_bytes(encode_y4m(video))


# raw RGB -------------------------------------------------------------------


def to_uint8(frames: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(np.asarray(frames, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def from_uint8(frames: np.ndarray) -> np.ndarray:
    return (frames.astype(np.float32) / np.float32(255.0)).astype(np.float32)


def write_raw(path: str | Path, frames: np.ndarray) -> None:
    """Interleaved 8-bit RGB, frames back to back."""
    Path(path).write_bytes(to_uint8(frames).transpose(0, 2, 3, 1).tobytes())


def read_raw(path: str | Path, width: int, height: int) -> VideoBuffer:
    data = Path(path).read_bytes()
    size = width * height * 3
    if not data or len(data) % size:
        raise ParseError(f"raw size {len(data)} is not a multiple of {width}x{height}x3", len(data))
    arr = np.frombuffer(data, dtype=np.uint8).reshape(-1, height, width, 3).transpose(0, 3, 1, 2)
    return VideoBuffer(from_uint8(arr))


def load_video(path: str | Path, width: int | None = None, height: int | None = None,
               max_frames: int | None = None) -> VideoBuffer:
    """Load ``.y4m``, a raw ``.rgb`` file, or a directory of per-frame ``.rgb`` files."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.rgb"))
        if not files:
            raise ParseError(f"no .rgb frames in {path}", 0)
        if width is None or height is None:
            raise ValueError("raw frames need --width and --height")
        frames = np.concatenate([read_raw(f, width, height).frames for f in files])
        video = VideoBuffer(frames)
    elif path.suffix == ".y4m":
        video = load_y4m(path, max_frames)
    else:
        if width is None or height is None:
            raise ValueError("raw video needs --width and --height")
        video = read_raw(path, width, height)
    if max_frames is not None:
        video.frames = video.frames[:max_frames]
    return video


# synthetic videos ------------------------------------------------------------

SYNTHETIC_KINDS = ("moving-square", "two-scene", "noise-pan")


def _background(rng: np.random.Generator, H: int, W: int) -> np.ndarray:
    yy, xx = np.mgrid[0:H, 0:W] / np.array([H, W])[:, None, None]
    c0, c1, c2 = (rng.uniform(0.15, 0.85, 3) for _ in range(3))
    fx, fy = rng.uniform(0.5, 1.5, 2)
    ripple = 0.06 * np.sin(2 * np.pi * (fx * xx + fy * yy))
    bg = c0[:, None, None] + (c1 - c0)[:, None, None] * xx + (c2 - c0)[:, None, None] * yy * 0.5
    return np.clip(bg + ripple, 0.0, 1.0)


def _bounce(start: float, velocity: float, span: int, t: int) -> int:
    if span <= 0:
        return 0
    p = (start + velocity * t) % (2 * span)
    return int(round(p if p <= span else 2 * span - p))


def _moving_square(T: int, H: int, W: int, rng: np.random.Generator) -> np.ndarray:
    bg = _background(rng, H, W)
    s = max(2, min(H, W) // 4)
    cell = max(1, s // 4)
    a, b = rng.uniform(0.0, 1.0, 3), rng.uniform(0.0, 1.0, 3)
    yy, xx = np.mgrid[0:s, 0:s]
    checker = ((yy // cell + xx // cell) % 2).astype(np.float64)
    tex = a[:, None, None] * checker + b[:, None, None] * (1 - checker)
    x0, y0 = rng.uniform(0, W - s), rng.uniform(0, H - s)
    vx = rng.choice([-3.0, -2.0, 2.0, 3.0])
    vy = rng.choice([-2.0, -1.0, 1.0, 2.0])
    frames = np.empty((T, 3, H, W))
    for t in range(T):
        f = bg.copy()
        x, y = _bounce(x0, vx, W - s, t), _bounce(y0, vy, H - s, t)
        f[:, y : y + s, x : x + s] = tex
        frames[t] = f
    return frames


def _noise_pan(T: int, H: int, W: int, rng: np.random.Generator) -> np.ndarray:
    dx, dy = rng.choice([-2, -1, 1, 2]), rng.choice([-1, 1])
    pad = 2 * T + 4
    field = gaussian_filter(rng.random((3, H + pad, W + pad)), sigma=(0, 3.0, 3.0))
    lo, hi = field.min(), field.max()
    field = 0.1 + 0.8 * (field - lo) / (hi - lo)
    oy, ox = pad // 2, pad // 2
    frames = np.empty((T, 3, H, W))
    for t in range(T):
        y, x = oy + dy * t // 2, ox + dx * t
        y, x = min(max(y, 0), pad), min(max(x, 0), pad)
        frames[t] = field[:, y : y + H, x : x + W]
    return frames


def gen_synthetic(kind: str, T: int, H: int, W: int, seed: int = 1) -> VideoBuffer:
    """Deterministic toy videos.

    ``moving-square``: a checkered block bouncing over a smooth background.
    ``two-scene``: moving-square for frames ``< T//2``, then an unrelated noise pan.
    ``noise-pan``: a fixed low-pass noise field translating across the frame.
    """
    if T < 1 or H < 4 or W < 4:
        raise ValueError(f"invalid synthetic dimensions T={T}, H={H}, W={W}")
    rng = np.random.default_rng(seed)
    if kind == "moving-square":
        frames = _moving_square(T, H, W, rng)
    elif kind == "noise-pan":
        frames = _noise_pan(T, H, W, rng)
    elif kind == "two-scene":
        cut = T // 2
        first = _moving_square(cut, H, W, rng)
        second = _noise_pan(T - cut, H, W, np.random.default_rng(seed + 7919))
        frames = np.concatenate([first, second])
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}; choose from {SYNTHETIC_KINDS}")
    return VideoBuffer(frames.astype(np.float32))
