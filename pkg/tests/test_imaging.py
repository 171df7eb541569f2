import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aerialsr.imaging import (
    ImageBuffer,
    ImageFormatError,
    decode_pnm,
    encode_pnm,
    load_image,
    psnr,
    resample_bicubic,
    resample_bicubic_float,
    save_image,
)
from conftest import gaussian_scene


def _keys(t, a=-0.5):
    t = abs(t)
    if t <= 1:
        return (a + 2) * t ** 3 - (a + 3) * t ** 2 + 1
    if t < 2:
        return a * t ** 3 - 5 * a * t ** 2 + 8 * a * t - 4 * a
    return 0.0


def _oracle_axis(line, dst):
    """Scalar reference: one output sample at a time, explicit clamp-to-edge."""
    src = len(line)
    scale = src / dst
    stretch = max(scale, 1.0)
    out = []
    for i in range(dst):
        c = (i + 0.5) * scale - 0.5
        lo, hi = math.floor(c - 2 * stretch), math.ceil(c + 2 * stretch)
        num = den = 0.0
        for k in range(lo, hi + 1):
            w = _keys((k - c) / stretch)
            num += w * line[min(max(k, 0), src - 1)]
            den += w
        out.append(num / den)
    return out


def oracle_resample(values, tw, th):
    h, w, c = values.shape
    tmp = np.array([[_oracle_axis(values[y, :, ch], tw) for ch in range(c)] for y in range(h)])
    tmp = tmp.transpose(0, 2, 1)  # (h, tw, c)
    out = np.array([[_oracle_axis(tmp[:, x, ch], th) for ch in range(c)] for x in range(tw)])
    return out.transpose(2, 0, 1)  # (th, tw, c)


class TestImageBuffer:
    def test_gray_input_gets_channel_axis(self):
        img = ImageBuffer(np.zeros((4, 5), dtype=np.uint8))
        assert img.shape == (4, 5, 1)
        assert (img.width, img.height, img.channels) == (5, 4, 1)

    def test_rejects_bad_channels_and_empty(self):
        with pytest.raises(ValueError):
            ImageBuffer(np.zeros((4, 4, 2), dtype=np.uint8))
        with pytest.raises(ValueError):
            ImageBuffer(np.zeros((0, 4, 3), dtype=np.uint8))

    def test_data_is_read_only(self):
        img = ImageBuffer(np.zeros((2, 2, 3), dtype=np.uint8))
        with pytest.raises(ValueError):
            img.data[0, 0, 0] = 1

    def test_quantization_rounds_half_away_and_clamps(self):
        vals = np.array([[[0.5 / 255, 1.5 / 255, 2.49 / 255]], [[-0.2, 1.3, 254.5 / 255]]])
        q = ImageBuffer.from_float(vals).data
        assert q.tolist() == [[[1, 2, 2]], [[0, 255, 255]]]


class TestResample:
    def test_shape(self):
        img = ImageBuffer(np.zeros((512, 512, 3), dtype=np.uint8))
        assert resample_bicubic(img, 256, 256).shape == (256, 256, 3)

    @pytest.mark.parametrize("bad", [(0, 4), (4, -1)])
    def test_bad_target(self, bad):
        img = ImageBuffer(np.zeros((4, 4, 3), dtype=np.uint8))
        with pytest.raises(ValueError):
            resample_bicubic(img, *bad)

    @given(st.integers(0, 255), st.integers(1, 40), st.integers(1, 40), st.integers(1, 40),
           st.integers(1, 40))
    @settings(max_examples=60, deadline=None)
    def test_constant_stays_constant(self, v, w, h, tw, th):
        img = ImageBuffer(np.full((h, w, 3), v, dtype=np.uint8))
        out = resample_bicubic(img, tw, th)
        assert out.shape == (th, tw, 3)
        assert np.all(out.data == v)

    def test_linear_ramp_downsample(self):
        # interior samples follow the ramp; the outer two columns see the clamped edge
        w = 64
        ramp = (np.arange(w) * 3 + 20).astype(np.uint8)
        img = ImageBuffer(np.tile(ramp[None, :, None], (8, 1, 3)))
        out = resample_bicubic(img, w // 2, 8).data[:, :, 0].astype(float)
        xs = (np.arange(w // 2) + 0.5) * 2 - 0.5
        expected = 20 + 3 * xs
        assert np.all(np.abs(out[:, 2:-2] - expected[2:-2]) <= 1.0)

    def test_linear_ramp_upsample_exact_inside(self):
        w = 32
        ramp = np.linspace(0.1, 0.9, w)
        vals = np.tile(ramp[None, :, None], (4, 1, 1))
        out = resample_bicubic_float(vals, 2 * w, 4)[0, :, 0]
        xs = (np.arange(2 * w) + 0.5) / 2 - 0.5
        expected = 0.1 + 0.8 * xs / (w - 1)
        np.testing.assert_allclose(out[4:-4], expected[4:-4], atol=1e-12)

    @pytest.mark.parametrize("src,dst", [((9, 13), (5, 7)), ((8, 8), (16, 16)), ((12, 7), (3, 20)),
                                         ((16, 16), (2, 2))])
    def test_matches_scalar_oracle(self, src, dst):
        vals = np.random.default_rng(5).random(src + (3,))
        got = resample_bicubic_float(vals, dst[1], dst[0])
        np.testing.assert_allclose(got, oracle_resample(vals, dst[1], dst[0]), atol=1e-12)

    @given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_same_size_is_identity(self, w, h, seed):
        data = np.random.default_rng(seed).integers(0, 256, (h, w, 3), dtype=np.uint8)
        img = ImageBuffer(data)
        out = resample_bicubic(img, w, h)
        assert np.max(np.abs(out.data.astype(int) - data.astype(int))) <= 1

    def test_deterministic(self, rng):
        img = ImageBuffer(rng.integers(0, 256, (30, 40, 3), dtype=np.uint8))
        assert resample_bicubic(img, 17, 23) == resample_bicubic(img, 17, 23)

    @pytest.mark.parametrize("f", [2, 4])
    def test_down_up_smooth_psnr(self, f):
        img = gaussian_scene(128, 128, sigma=10.0)
        low = resample_bicubic(img, 128 // f, 128 // f)
        assert psnr(resample_bicubic(low, 128, 128), img) > 30.0


class TestPsnr:
    def test_identical_is_inf(self, rng):
        img = ImageBuffer(rng.integers(0, 256, (8, 8, 3), dtype=np.uint8))
        assert psnr(img, img) == math.inf

    def test_black_vs_white_is_zero(self):
        a = ImageBuffer(np.zeros((4, 4, 3), dtype=np.uint8))
        b = ImageBuffer(np.full((4, 4, 3), 255, dtype=np.uint8))
        assert psnr(a, b) == pytest.approx(0.0, abs=1e-12)

    def test_unit_offset(self, rng):
        a = ImageBuffer(rng.integers(0, 255, (16, 16, 3), dtype=np.uint8))
        b = ImageBuffer(a.data + 1)
        assert abs(psnr(a, b) - 48.1308) < 1e-3
        assert psnr(a, b) == pytest.approx(48.130803608679, abs=1e-9)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            psnr(ImageBuffer(np.zeros((4, 4, 3), np.uint8)), ImageBuffer(np.zeros((4, 5, 3), np.uint8)))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_symmetric(self, seed):
        r = np.random.default_rng(seed)
        a = ImageBuffer(r.integers(0, 256, (6, 7, 3), dtype=np.uint8))
        b = ImageBuffer(r.integers(0, 256, (6, 7, 3), dtype=np.uint8))
        assert psnr(a, b) == psnr(b, a)


class TestPnm:
    @given(st.integers(1, 12), st.integers(1, 12), st.sampled_from([1, 3]), st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_round_trip(self, w, h, c, seed):
        img = ImageBuffer(np.random.default_rng(seed).integers(0, 256, (h, w, c), dtype=np.uint8))
        assert decode_pnm(encode_pnm(img)) == img

    def test_file_round_trip(self, tmp_path, rng):
        img = ImageBuffer(rng.integers(0, 256, (5, 9, 3), dtype=np.uint8))
        save_image(img, tmp_path / "a.ppm")
        assert load_image(tmp_path / "a.ppm") == img

    def test_header_orientation(self, tmp_path):
        img = ImageBuffer(np.zeros((3000, 4000, 3), dtype=np.uint8))
        save_image(img, tmp_path / "big.ppm")
        assert (tmp_path / "big.ppm").read_bytes().startswith(b"P6\n4000 3000\n255\n")
        back = load_image(tmp_path / "big.ppm")
        assert (back.width, back.height) == (4000, 3000)

    def test_header_with_comment(self):
        raw = b"P5\n# made by hand\n2 1\n255\n\x07\x09"
        assert decode_pnm(raw).data[:, :, 0].tolist() == [[7, 9]]

    def test_truncated(self, rng):
        raw = encode_pnm(ImageBuffer(rng.integers(0, 256, (4, 4, 3), dtype=np.uint8)))
        with pytest.raises(ImageFormatError):
            decode_pnm(raw[:-5])

    @pytest.mark.parametrize("raw", [b"P3\n1 1\n255\n0 0 0\n", b"P6\n1 1\n65535\n\x00" * 1, b"P6\n1\n",
                                     b"", b"P6\nx 1\n255\n"])
    def test_unsupported_or_malformed(self, raw):
        with pytest.raises(ImageFormatError):
            decode_pnm(raw)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_image(tmp_path / "nope.ppm")
