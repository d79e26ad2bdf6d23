import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tenerv import video as V


def gray_y4m(W=4, H=4, frames=1, value=128):
    cw, ch = (W + 1) // 2, (H + 1) // 2
    body = (b"FRAME\n" + bytes([value]) * (W * H + 2 * cw * ch)) * frames
    return f"YUV4MPEG2 W{W} H{H} F25:1 C420jpeg\n".encode() + body


class TestY4M:
    def test_neutral_gray(self):
        v = V.parse_y4m(gray_y4m())
        assert v.frames.shape == (1, 3, 4, 4)
        np.testing.assert_allclose(v.frames, 128 / 255, atol=1e-7)
        assert round(float(v.frames[0, 0, 0, 0]), 3) == 0.502

    def test_header_fields(self):
        v = V.parse_y4m(b"YUV4MPEG2 W2 H2 F30000:1001 Ip A1:1 C420\n" + b"FRAME\n" + bytes(6))
        assert v.fps == (30000, 1001)

    def test_odd_dimensions(self):
        v = V.parse_y4m(gray_y4m(W=5, H=3, frames=2))
        assert v.frames.shape == (2, 3, 3, 5)

    def test_max_frames(self):
        assert V.parse_y4m(gray_y4m(frames=5), max_frames=2).frames.shape[0] == 2
        with pytest.raises(ValueError):
            V.parse_y4m(gray_y4m(), max_frames=0)

    def test_bad_magic(self):
        with pytest.raises(V.ParseError) as exc:
            V.parse_y4m(b"YUV4MPEG3 W4 H4\nFRAME\n")
        assert exc.value.offset == 0

    def test_unsupported_colorspace(self):
        with pytest.raises(V.ParseError, match="colorspace"):
            V.parse_y4m(gray_y4m().replace(b"C420jpeg", b"C444"))

    def test_truncated_frame(self):
        data = gray_y4m(frames=2)
        with pytest.raises(V.ParseError, match="truncated") as exc:
            V.parse_y4m(data[:-3])
        assert exc.value.offset == len(gray_y4m(frames=1)) + len(b"FRAME\n")

    def test_roundtrip_neutral_chroma_exact(self, rng):
        W, H = 8, 6
        y = rng.integers(0, 256, (3, H, W), dtype=np.uint8)
        neutral = bytes([128]) * (2 * 4 * 3)
        body = b"".join(b"FRAME\n" + y[t].tobytes() + neutral for t in range(3))
        src = f"YUV4MPEG2 W{W} H{H} F25:1 C420jpeg\n".encode() + body
        out = V.encode_y4m(V.parse_y4m(src))
        assert out.split(b"\n", 1)[1] == body

    def test_center_crop(self):
        f = np.zeros((2, 3, 10, 13))
        assert V.center_crop(f, 4).shape == (2, 3, 8, 12)

    @settings(max_examples=400, deadline=None)
    @given(st.data())
    def test_fuzz_never_crashes(self, data):
        base = bytearray(gray_y4m(W=4, H=2, frames=2))
        for _ in range(data.draw(st.integers(0, 4))):
            i = data.draw(st.integers(0, len(base) - 1))
            base[i] = data.draw(st.integers(0, 255))
        cut = data.draw(st.integers(0, len(base)))
        blob = bytes(base[:cut])
        try:
            v = V.parse_y4m(blob)
        except V.ParseError:
            return
        T, _, H, W = v.frames.shape
        assert T >= 1 and np.isfinite(v.frames).all()


class TestRaw:
    def test_roundtrip(self, tmp_path, rng):
        frames = V.from_uint8(rng.integers(0, 256, (3, 3, 4, 5), dtype=np.uint8))
        p = tmp_path / "v.rgb"
        V.write_raw(p, frames)
        assert np.array_equal(V.read_raw(p, 5, 4).frames, frames)

    def test_size_mismatch(self, tmp_path):
        p = tmp_path / "v.rgb"
        p.write_bytes(bytes(50))
        with pytest.raises(V.ParseError):
            V.read_raw(p, 5, 4)

    def test_directory(self, tmp_path, rng):
        frames = V.from_uint8(rng.integers(0, 256, (2, 3, 4, 4), dtype=np.uint8))
        for t in range(2):
            V.write_raw(tmp_path / f"{t:04d}.rgb", frames[t : t + 1])
        assert np.array_equal(V.load_video(tmp_path, 4, 4).frames, frames)


class TestSynthetic:
    @pytest.mark.parametrize("kind", V.SYNTHETIC_KINDS)
    def test_deterministic(self, kind):
        a = V.gen_synthetic(kind, 6, 32, 32, seed=4).frames
        b = V.gen_synthetic(kind, 6, 32, 32, seed=4).frames
        assert np.array_equal(a, b)
        assert a.shape == (6, 3, 32, 32) and a.dtype == np.float32
        assert 0.0 <= a.min() and a.max() <= 1.0

    def test_seed_matters(self):
        a = V.gen_synthetic("noise-pan", 4, 32, 32, seed=1).frames
        b = V.gen_synthetic("noise-pan", 4, 32, 32, seed=2).frames
        assert not np.array_equal(a, b)

    def test_moving_square_moves(self):
        f = V.gen_synthetic("moving-square", 24, 96, 96, seed=1).frames
        assert all(not np.array_equal(f[t], f[t + 1]) for t in range(23))

    def test_two_scene_cut(self):
        f = V.gen_synthetic("two-scene", 16, 32, 32, seed=1).frames.astype(np.float64)
        diffs = [np.abs(f[t + 1] - f[t]).mean() for t in range(15)]
        assert int(np.argmax(diffs)) + 1 == 8

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown"):
            V.gen_synthetic("fireworks", 4, 32, 32)
