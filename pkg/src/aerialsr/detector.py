"""Altitude-augmented toy detector, blob-oracle detector and the GSD scale prior."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np
from scipy import ndimage

from .boxes import Detection
from .imaging import ImageBuffer
from .nn import check_finite, check_shapes, conv2d, he_normal, relu, sigmoid

DEFAULT_ANCHOR = (25.0, 23.0)  # mean SAVMAP box, width x height


@dataclass(frozen=True)
class CameraModel:
    focal_length: float  # metres
    pixel_pitch: float  # metres per pixel on the sensor

    def __post_init__(self):
        if not (self.focal_length > 0 and self.pixel_pitch > 0):
            raise ValueError("focal_length and pixel_pitch must be positive")


@dataclass(frozen=True)
class DetectorConfig:
    input_size: int = 512
    pyramid_strides: tuple[int, ...] = (8, 16, 32)
    # widths, altitude scaling and the fused pyramid level are local choices
    head_channels: int = 16
    fc_hidden: int = 64
    conf_threshold: float = 0.1
    altitude_normalizer: float = 1000.0
    anchor: tuple[float, float] = DEFAULT_ANCHOR
    seed: int = 0

    def __post_init__(self):
        if self.input_size <= 0 or self.input_size % 32:
            raise ValueError(f"input_size must be a positive multiple of 32, got {self.input_size}")
        if tuple(self.pyramid_strides) != (8, 16, 32):
            raise ValueError("the toy backbone produces strides (8, 16, 32) only")
        if not 0.0 <= self.conf_threshold <= 1.0:
            raise ValueError("conf_threshold must be in [0, 1]")
        if self.altitude_normalizer <= 0:
            raise ValueError("altitude_normalizer must be positive (1 feeds raw metres)")
        object.__setattr__(self, "pyramid_strides", tuple(self.pyramid_strides))
        object.__setattr__(self, "anchor", tuple(float(a) for a in self.anchor))

    @property
    def fused_length(self) -> int:
        side = self.input_size // 32
        return side * side * self.head_channels


@dataclass(frozen=True)
class TrainingConfig:
    """Reference training regimen, recorded in reports only; nothing here trains."""

    sr: MappingProxyType = field(default_factory=lambda: MappingProxyType({
        "optimizer": "Adam", "lr": 1e-4, "lr_decay": 0.5, "beta1": 0.9, "beta2": 0.999,
        "eps": 1e-8, "weight_decay": 1e-4, "epochs": 50}))
    det: MappingProxyType = field(default_factory=lambda: MappingProxyType({
        "optimizer": "SGD", "lr": 1e-4, "weight_decay": 1e-3, "momentum": 0.9, "epochs": 1000}))

    def as_dict(self):
        return {"sr": dict(self.sr), "det": dict(self.det)}


TRAINING = TrainingConfig()


# -- toy backbone -------------------------------------------------------------

_STEM = (("stem0", 3, 8), ("stem1", 8, 16))


def weight_shapes(cfg: DetectorConfig) -> dict[str, tuple]:
    hc = cfg.head_channels
    shapes = {}
    for name, cin, cout in _STEM:
        shapes[f"{name}.w"] = (3, 3, cin, cout)
        shapes[f"{name}.b"] = (cout,)
    cin = _STEM[-1][2]
    for s in cfg.pyramid_strides:
        shapes[f"level{s}.down.w"] = (3, 3, cin, hc)
        shapes[f"level{s}.down.b"] = (hc,)
        shapes[f"level{s}.res.w"] = (3, 3, hc, hc)
        shapes[f"level{s}.res.b"] = (hc,)
        cin = hc
    L = cfg.fused_length
    shapes["fc1.w"] = (cfg.fc_hidden, L + 1)
    shapes["fc1.b"] = (cfg.fc_hidden,)
    shapes["fc2.w"] = (L, cfg.fc_hidden)
    shapes["fc2.b"] = (L,)
    shapes["head.w"] = (1, 1, hc, 5)
    shapes["head.b"] = (5,)
    return shapes


def init_detector_weights(cfg: DetectorConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    weights = {}
    for name, shape in weight_shapes(cfg).items():
        if name.endswith(".b"):
            weights[name] = np.zeros(shape)
        elif name.startswith("fc"):
            weights[name] = he_normal(rng, shape, shape[1])
        else:
            weights[name] = he_normal(rng, shape, int(np.prod(shape[:-1])))
    # the altitude enters as one scalar among thousands of features; give its
    # column unit scale so it is not drowned out at init
    weights["fc1.w"][:, -1] = rng.standard_normal(cfg.fc_hidden)
    return weights


def backbone_pyramid(patch, cfg: DetectorConfig, weights) -> list[np.ndarray]:
    """Feature maps at strides 8, 16 and 32 from a strided conv stack.

    Each level is a stride-2 conv followed by a conv-ReLU residual tap.
    """
    x = patch.to_float() if isinstance(patch, ImageBuffer) else np.asarray(patch, dtype=np.float64)
    n = cfg.input_size
    if x.shape != (n, n, 3):
        raise ValueError(f"backbone expects a {n}x{n}x3 patch, got {x.shape}")
    for name, _, _ in _STEM:
        x = relu(conv2d(x, weights[f"{name}.w"], weights[f"{name}.b"], stride=2))
    maps = []
    for s in cfg.pyramid_strides:
        x = relu(conv2d(x, weights[f"level{s}.down.w"], weights[f"level{s}.down.b"], stride=2))
        x = x + relu(conv2d(x, weights[f"level{s}.res.w"], weights[f"level{s}.res.b"]))
        maps.append(x)
    return maps


def altitude_feature_vector(feat: np.ndarray, altitude: float, cfg: DetectorConfig) -> np.ndarray:
    """Flattened features with the (normalized) altitude appended as the last element."""
    if not math.isfinite(altitude):
        raise ValueError(f"altitude must be finite, got {altitude}")
    if altitude <= 0:
        raise ValueError(f"altitude must be positive, got {altitude}")
    a = np.float64(np.float32(altitude)) / cfg.altitude_normalizer
    flat = np.asarray(feat, dtype=np.float64).ravel()
    return np.concatenate([flat, [a]])


def altitude_fuse(feat: np.ndarray, altitude: float, cfg: DetectorConfig, weights) -> np.ndarray:
    """Append altitude to the flattened map, apply FC-ReLU-FC, reshape back."""
    vec = altitude_feature_vector(feat, altitude, cfg)
    w1, b1, w2, b2 = weights["fc1.w"], weights["fc1.b"], weights["fc2.w"], weights["fc2.b"]
    if w1.shape[1] != vec.size or w2.shape[0] != vec.size - 1:
        raise ValueError(f"fusion weights {w1.shape}/{w2.shape} do not fit a feature of length {vec.size - 1}")
    hidden = relu(w1 @ vec + b1)
    out = w2 @ hidden + b2
    return check_finite(out, "altitude fusion").reshape(np.shape(feat))


def decode_detections(head: np.ndarray, cfg: DetectorConfig, grid_stride: int,
                      image_size: int | None = None) -> list[Detection]:
    """Single-anchor grid decode of ``(Hc, Wc, 5)`` logits ``(tx, ty, tw, th, tconf)``.

    Boxes are clamped to ``[0, image_size]``; only cells with confidence at or
    above ``cfg.conf_threshold`` are emitted, in row-major cell order.
    """
    head = np.asarray(head, dtype=np.float64)
    if head.ndim != 3 or head.shape[2] != 5:
        raise ValueError(f"decode expects 5 channels per cell, got shape {head.shape}")
    hc, wc, _ = head.shape
    if image_size is None:
        image_size = max(hc, wc) * grid_stride
    gy, gx = np.mgrid[0:hc, 0:wc]
    cx = (gx + sigmoid(head[..., 0])) * grid_stride
    cy = (gy + sigmoid(head[..., 1])) * grid_stride
    bw = cfg.anchor[0] * np.exp(head[..., 2])
    bh = cfg.anchor[1] * np.exp(head[..., 3])
    conf = sigmoid(head[..., 4])
    x0 = np.clip(cx - bw / 2, 0, image_size)
    x1 = np.clip(cx + bw / 2, 0, image_size)
    y0 = np.clip(cy - bh / 2, 0, image_size)
    y1 = np.clip(cy + bh / 2, 0, image_size)
    keep = (conf >= cfg.conf_threshold) & (x1 > x0) & (y1 > y0)
    return [Detection(float(x0[i, j]), float(y0[i, j]), float(x1[i, j]), float(y1[i, j]),
                      float(conf[i, j]))
            for i, j in zip(*np.nonzero(keep))]


class ToyDetector:
    """Backbone -> optional altitude fusion on the stride-32 map -> 1x1 head -> decode."""

    def __init__(self, cfg: DetectorConfig | None = None, weights=None):
        self.cfg = cfg or DetectorConfig()
        self.weights = weights if weights is not None else init_detector_weights(self.cfg)
        check_shapes(self.weights, weight_shapes(self.cfg))

    def head_logits(self, patch, altitude: float | None = None) -> np.ndarray:
        top = backbone_pyramid(patch, self.cfg, self.weights)[-1]
        if altitude is not None:
            top = altitude_fuse(top, altitude, self.cfg, self.weights)
        return conv2d(top, self.weights["head.w"], self.weights["head.b"])

    def detect(self, patch, altitude: float | None = None) -> list[Detection]:
        head = self.head_logits(patch, altitude)
        return decode_detections(head, self.cfg, 32, self.cfg.input_size)


# -- fusion gradient check ------------------------------------------------------


@dataclass(frozen=True)
class GradCheckResult:
    max_relative_error: float
    loss: float
    altitude_grad: float
    errors: dict

    def __float__(self):
        return self.max_relative_error


def fusion_loss_and_grads(feat_vec, altitude, weights, normalizer=1000.0):
    """Loss ``sum(fc2_out ** 2)`` and analytic gradients of the fusion MLP.

    Gradients are returned for ``fc1.w``, ``fc1.b``, ``fc2.w``, ``fc2.b`` and
    the raw altitude (metres).
    """
    x = np.concatenate([np.asarray(feat_vec, dtype=np.float64), [altitude / normalizer]])
    w1, b1, w2, b2 = weights["fc1.w"], weights["fc1.b"], weights["fc2.w"], weights["fc2.b"]
    z = w1 @ x + b1
    h = np.maximum(z, 0.0)
    y = w2 @ h + b2
    loss = float(y @ y)
    dy = 2.0 * y
    dh = w2.T @ dy
    dz = dh * (z > 0)
    dx = w1.T @ dz
    grads = {
        "fc1.w": np.outer(dz, x),
        "fc1.b": dz,
        "fc2.w": np.outer(dy, h),
        "fc2.b": dy,
        "altitude": np.array([dx[-1] / normalizer]),
    }
    return loss, grads


def fc_gradient_check(seed: int = 0, weights=None, length: int = 12, hidden: int = 8,
                      step: float = 1e-4, altitude: float = 1496.68,
                      normalizer: float = 1000.0) -> GradCheckResult:
    """Compare analytic fusion gradients with central finite differences.

    Relative error per entry is ``|a - n| / max(|a|, |n|)``, taken as 0 when
    both vanish.
    """
    rng = np.random.default_rng(seed)
    feat = rng.standard_normal(length)
    if weights is None:
        weights = {
            "fc1.w": rng.standard_normal((hidden, length + 1)) * 0.5,
            "fc1.b": rng.standard_normal(hidden) * 0.1,
            "fc2.w": rng.standard_normal((length, hidden)) * 0.5,
            "fc2.b": rng.standard_normal(length) * 0.1,
        }
    weights = {k: np.array(v, dtype=np.float64) for k, v in weights.items()}
    loss, grads = fusion_loss_and_grads(feat, altitude, weights, normalizer)

    def numeric(name, idx):
        if name == "altitude":
            hi = fusion_loss_and_grads(feat, altitude + step, weights, normalizer)[0]
            lo = fusion_loss_and_grads(feat, altitude - step, weights, normalizer)[0]
        else:
            arr = weights[name]
            orig = arr[idx]
            arr[idx] = orig + step
            hi = fusion_loss_and_grads(feat, altitude, weights, normalizer)[0]
            arr[idx] = orig - step
            lo = fusion_loss_and_grads(feat, altitude, weights, normalizer)[0]
            arr[idx] = orig
        return (hi - lo) / (2.0 * step)

    errors = {}
    for name, g in grads.items():
        worst = 0.0
        for idx in np.ndindex(g.shape):
            a = float(g[idx])
            n = numeric(name, idx if name != "altitude" else None)
            denom = max(abs(a), abs(n))
            if denom > 0:
                worst = max(worst, abs(a - n) / denom)
        errors[name] = worst
    return GradCheckResult(max(errors.values()), loss, float(grads["altitude"][0]), errors)


# -- scale prior --------------------------------------------------------------


def gsd(altitude: float, cam: CameraModel) -> float:
    """Ground sampling distance in metres per pixel."""
    if not (altitude > 0 and cam.focal_length > 0 and cam.pixel_pitch > 0):
        raise ValueError("altitude, focal length and pixel pitch must all be positive")
    return altitude * cam.pixel_pitch / cam.focal_length


def expected_extent_px(altitude: float, cam: CameraModel, animal_extent: float) -> float:
    return animal_extent / gsd(altitude, cam)


def scale_prior_filter(dets, altitude: float, cam: CameraModel, animal_extent: float = 2.0,
                       band: tuple[float, float] = (0.25, 4.0)) -> list[Detection]:
    """Keep detections whose larger side lies in ``[k_lo * e, k_hi * e]``.

    ``e`` is the animal's expected size in pixels at this altitude.
    """
    k_lo, k_hi = band
    if not (0 < k_lo < k_hi):
        raise ValueError(f"band must satisfy 0 < k_lo < k_hi, got {band}")
    if animal_extent <= 0:
        raise ValueError("animal_extent must be positive")
    e = expected_extent_px(altitude, cam, animal_extent)
    lo, hi = k_lo * e, k_hi * e
    return [d for d in dets if lo <= max(d.width, d.height) <= hi]


# -- blob oracle --------------------------------------------------------------

_EIGHT = np.ones((3, 3), dtype=bool)


def blob_oracle_detect(patch, threshold: float = 0.5, min_area: int = 1) -> list[Detection]:
    """Detect bright blobs: 8-connected components of ``gray > threshold``.

    Grayscale is the channel mean. Components smaller than ``min_area``
    pixels are dropped; each survivor yields its bounding box with the
    component's mean intensity as confidence.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    values = patch.to_float() if isinstance(patch, ImageBuffer) else np.asarray(patch, dtype=np.float64)
    gray = values.mean(axis=2) if values.ndim == 3 else values
    labels, n = ndimage.label(gray > threshold, structure=_EIGHT)
    if n == 0:
        return []
    flat = labels.ravel()
    areas = np.bincount(flat, minlength=n + 1)
    sums = np.bincount(flat, weights=gray.ravel(), minlength=n + 1)
    out = []
    for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None or areas[lab] < min_area:
            continue
        conf = min(max(sums[lab] / areas[lab], 0.0), 1.0)
        out.append(Detection(float(sl[1].start), float(sl[0].start),
                             float(sl[1].stop), float(sl[0].stop), float(conf)))
    return out
