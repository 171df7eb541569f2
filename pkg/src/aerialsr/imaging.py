"""Image buffers, bicubic resampling, PSNR and PNM file I/O."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy import sparse

MAX_VALUE = 255


class ImageFormatError(ValueError):
    """Raised for unreadable, truncated or unsupported image files."""


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """An 8-bit image stored as a read-only ``(height, width, channels)`` array."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"expected (H, W, 1|3) samples, got shape {arr.shape}")
        if arr.shape[0] <= 0 or arr.shape[1] <= 0:
            raise ValueError("image dimensions must be positive")
        if arr.dtype != np.uint8:
            raise TypeError(f"ImageBuffer stores uint8 samples, got {arr.dtype}")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def to_float(self) -> np.ndarray:
        """Samples promoted to float64 in [0, 1]."""
        return self.data.astype(np.float64) / MAX_VALUE

    @classmethod
    def from_float(cls, values: np.ndarray) -> "ImageBuffer":
        """Quantize real samples in [0, 1] to 8 bits.

        Rounds half away from zero, then clamps to [0, 255].
        """
        scaled = np.asarray(values, dtype=np.float64) * MAX_VALUE
        if not np.all(np.isfinite(scaled)):
            raise ValueError("cannot quantize non-finite samples")
        q = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
        return cls(np.clip(q, 0, MAX_VALUE).astype(np.uint8))

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.data, other.data))

    __hash__ = None


def _keys_kernel(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    t2 = t * t
    t3 = t2 * t
    near = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    far = a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def _axis_weights(src_len: int, dst_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Tap indices and normalized weights mapping ``src_len`` samples onto ``dst_len``.

    Pixel centres are aligned (``x_src = (i + 0.5) * scale - 0.5``). When
    shrinking, the kernel is widened by the scale so the result is low-pass
    filtered rather than aliased.
    """
    scale = src_len / dst_len
    stretch = max(scale, 1.0)
    support = 2.0 * stretch
    centres = (np.arange(dst_len, dtype=np.float64) + 0.5) * scale - 0.5
    first = np.floor(centres - support).astype(np.int64) + 1
    taps = int(math.ceil(2 * support)) + 1
    idx = first[:, None] + np.arange(taps)[None, :]
    weights = _keys_kernel((idx - centres[:, None]) / stretch)
    weights /= weights.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, src_len - 1)
    return idx, weights


def _resample_axis(values: np.ndarray, dst_len: int, axis: int) -> np.ndarray:
    src_len = values.shape[axis]
    if src_len == dst_len:
        return values
    idx, weights = _axis_weights(src_len, dst_len)
    rows = np.repeat(np.arange(dst_len), idx.shape[1])
    # clamped taps repeat a column; the sparse constructor sums them
    op = sparse.csr_matrix((weights.ravel(), (rows, idx.ravel())), shape=(dst_len, src_len))
    moved = np.moveaxis(values, axis, 0)
    out = op @ moved.reshape(src_len, -1)
    return np.moveaxis(out.reshape((dst_len,) + moved.shape[1:]), 0, axis)


def resample_bicubic_float(values: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    """Separable cubic-convolution resampling of an ``(H, W, C)`` real array."""
    if target_w <= 0 or target_h <= 0:
        raise ValueError(f"target dimensions must be positive, got {target_w}x{target_h}")
    values = np.asarray(values, dtype=np.float64)
    out = _resample_axis(values, int(target_w), axis=1)
    return _resample_axis(out, int(target_h), axis=0)


def resample_bicubic(src: ImageBuffer, target_w: int, target_h: int) -> ImageBuffer:
    """Resize ``src`` to ``target_w`` x ``target_h`` with the Keys (a = -0.5) kernel.

    Edges are extended by clamping. Computation happens in real values and
    the result is requantized to 8 bits.
    """
    out = resample_bicubic_float(src.to_float(), target_w, target_h)
    return ImageBuffer.from_float(out)


def psnr(a: ImageBuffer, b: ImageBuffer) -> float:
    """Peak signal-to-noise ratio in dB over all samples and channels (MAX = 255)."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(MAX_VALUE**2 / mse)


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("truncated header")
    return buf[start:pos], pos


def decode_pnm(buf: bytes) -> ImageBuffer:
    """Decode binary PGM (P5) or PPM (P6) bytes with maxval 255."""
    if len(buf) < 2:
        raise ImageFormatError("file too short for a PNM header")
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"unsupported magic {magic!r}; expected P5 or P6")
    pos = 2
    fields = []
    try:
        for _ in range(3):
            tok, pos = _read_token(buf, pos)
            fields.append(int(tok))
    except ValueError as exc:
        raise ImageFormatError(f"malformed header: {exc}") from None
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"invalid dimensions {width}x{height}")
    if maxval != MAX_VALUE:
        raise ImageFormatError(f"unsupported bit depth (maxval {maxval}); only 8-bit is supported")
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise ImageFormatError("truncated header")
    pos += 1
    channels = 1 if magic == b"P5" else 3
    expected = width * height * channels
    payload = buf[pos : pos + expected]
    if len(payload) != expected:
        raise ImageFormatError(f"truncated pixel data: {len(payload)} of {expected} bytes")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return ImageBuffer(arr.copy())


def encode_pnm(img: ImageBuffer) -> bytes:
    magic = b"P5" if img.channels == 1 else b"P6"
    header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
    return header + img.data.tobytes()


def load_image(path) -> ImageBuffer:
    with open(os.fspath(path), "rb") as fh:
        return decode_pnm(fh.read())


def save_image(img: ImageBuffer, path) -> None:
    """Write ``img`` as binary PNM: P5 for one channel, P6 for three."""
    with open(os.fspath(path), "wb") as fh:
        fh.write(encode_pnm(img))


def to_gray(values: np.ndarray) -> np.ndarray:
    """Channel mean of an ``(H, W, C)`` array."""
    return np.asarray(values, dtype=np.float64).mean(axis=2)
