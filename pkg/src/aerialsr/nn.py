"""Small numpy building blocks shared by the toy SR network and the toy detector.

Feature maps are ``(H, W, C)`` float64 arrays. Every reduction runs in a
fixed order so forward passes are reproducible bit-for-bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


class WeightShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values in {where}")
    return x


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softmax_rows(x):
    x = np.asarray(x, dtype=np.float64)
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None, stride: int = 1) -> np.ndarray:
    """Zero-padded 'same' convolution (cross-correlation).

    x: (H, W, Cin); w: (k, k, Cin, Cout) with odd k; b: (Cout,).
    With ``stride > 1`` the output keeps every ``stride``-th position.
    """
    k = w.shape[0]
    if w.ndim != 4 or w.shape[1] != k or k % 2 == 0:
        raise WeightShapeError(f"expected (k, k, Cin, Cout) kernel with odd k, got {w.shape}")
    if w.shape[2] != x.shape[2]:
        raise WeightShapeError(f"kernel expects {w.shape[2]} input channels, got {x.shape[2]}")
    h, wd, _ = x.shape
    p = k // 2
    xp = np.pad(x, ((p, p), (p, p), (0, 0))) if p else x
    oh = -(-h // stride)
    ow = -(-wd // stride)
    out = np.zeros((oh, ow, w.shape[3]), dtype=np.float64)
    for dy in range(k):
        for dx in range(k):
            patch = xp[dy:dy + h:stride, dx:dx + wd:stride, :]
            out += patch @ w[dy, dx]
    if b is not None:
        out += b
    return out


def conv3d_single(vol: np.ndarray, kernel: np.ndarray, bias: float = 0.0) -> np.ndarray:
    """Single-filter 3x3x3 'same' convolution over an (H, W, C) volume."""
    if kernel.shape != (3, 3, 3):
        raise WeightShapeError(f"expected a (3, 3, 3) kernel, got {kernel.shape}")
    h, w, c = vol.shape
    vp = np.pad(vol, 1)
    out = np.full(vol.shape, float(bias), dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            for dc in range(3):
                kv = kernel[dy, dx, dc]
                if kv != 0.0:
                    out += kv * vp[dy:dy + h, dx:dx + w, dc:dc + c]
    return out


def he_normal(rng: np.random.Generator, shape, fan_in: int, gain: float = 1.0) -> np.ndarray:
    return rng.standard_normal(shape) * (gain * np.sqrt(2.0 / fan_in))


# -- weight files -----------------------------------------------------------
#
# A weights set is a flat little-endian float32 blob (<stem>.bin) described by
# a JSON manifest (<stem>.json): {"format": ..., "tensors": [{"name", "shape",
# "offset"}]} with offsets counted in elements.

WEIGHTS_FORMAT = "aerialsr-weights/1"


def save_weights(path, weights: dict[str, np.ndarray]) -> Path:
    """Write ``weights`` next to ``path``; returns the manifest path."""
    path = Path(path)
    manifest_path = path.with_suffix(".json")
    blob_path = path.with_suffix(".bin")
    tensors, chunks, offset = [], [], 0
    for name in sorted(weights):
        arr = np.asarray(weights[name], dtype="<f4")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.ravel())
        offset += arr.size
    flat = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f4")
    blob_path.write_bytes(flat.astype("<f4").tobytes())
    manifest = {"format": WEIGHTS_FORMAT, "blob": blob_path.name, "count": offset,
                "tensors": tensors}
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest_path


def load_weights(path) -> dict[str, np.ndarray]:
    """Read a weights set written by :func:`save_weights` (manifest or blob path)."""
    manifest_path = Path(path).with_suffix(".json")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("format") != WEIGHTS_FORMAT:
        raise WeightShapeError(f"{manifest_path}: unknown weights format {manifest.get('format')!r}")
    flat = np.frombuffer((manifest_path.parent / manifest["blob"]).read_bytes(), dtype="<f4")
    if flat.size != manifest["count"]:
        raise WeightShapeError(f"{manifest_path}: blob has {flat.size} values, "
                               f"manifest declares {manifest['count']}")
    out = {}
    for t in manifest["tensors"]:
        n = int(np.prod(t["shape"], dtype=np.int64))
        out[t["name"]] = flat[t["offset"]:t["offset"] + n].reshape(t["shape"]).astype(np.float64)
    return out


def check_shapes(weights: dict[str, np.ndarray], expected: dict[str, tuple]) -> None:
    problems = []
    for name, shape in expected.items():
        if name not in weights:
            problems.append(f"missing {name}")
        elif tuple(np.shape(weights[name])) != tuple(shape):
            problems.append(f"{name}: expected {tuple(shape)}, got {tuple(np.shape(weights[name]))}")
    extra = sorted(set(weights) - set(expected))
    if extra:
        problems.append(f"unexpected tensors {extra}")
    if problems:
        raise WeightShapeError("; ".join(problems))
