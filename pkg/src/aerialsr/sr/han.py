"""Toy-scale holistic attention network (HAN) forward pass in numpy.

Pipeline: shallow conv -> residual groups -> layer attention over the group
outputs -> 1x1 fusion conv -> channel-spatial attention -> long skip ->
pixel-shuffle upsampling -> tail conv.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..imaging import ImageBuffer
from ..nn import (
    NonFiniteError,
    check_finite,
    check_shapes,
    conv2d,
    conv3d_single,
    he_normal,
    relu,
    sigmoid,
    softmax_rows,
)

SR_SCALES = (2, 4, 8)
_GATE_LO = np.finfo(np.float64).tiny
_GATE_HI = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class HanConfig:
    channels: int = 8
    groups: int = 2
    blocks_per_group: int = 2
    scale: int = 2
    lam_alpha: float = 0.0
    csam_beta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.channels < 1 or self.groups < 1 or self.blocks_per_group < 1:
            raise ValueError("channels, groups and blocks_per_group must be >= 1")
        if self.scale not in SR_SCALES:
            raise ValueError(f"scale must be one of {SR_SCALES}, got {self.scale}")


def layer_attention(features: np.ndarray, alpha: float, return_weights: bool = False):
    """Layer attention over ``(N, H, W, C)`` stacked feature maps.

    Each layer is flattened, the N x N Gram matrix of the flattened layers is
    row-softmaxed, and layer i becomes ``alpha * sum_j a_ij * layer_j + layer_i``.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 4 or features.shape[0] < 1:
        raise ValueError(f"expected (N, H, W, C) features with N >= 1, got {features.shape}")
    check_finite(features, "layer attention input")
    n = features.shape[0]
    flat = features.reshape(n, -1)
    gram = flat @ flat.T
    attn = softmax_rows(gram)
    mixed = (attn @ flat).reshape(features.shape)
    out = alpha * mixed + features
    check_finite(out, "layer attention output")
    if return_weights:
        return out, attn
    return out


def channel_spatial_attention(features: np.ndarray, beta: float, kernel: np.ndarray,
                              bias: float = 0.0, return_map: bool = False):
    """Gate ``(H, W, C)`` features with ``sigmoid(conv3d(features))``.

    The feature map is treated as a single-channel volume; the 3x3x3 kernel
    is zero-padded ('same'). Output is ``beta * (gate * features) + features``.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3 or features.shape[2] < 1:
        raise ValueError(f"expected (H, W, C) features, got {features.shape}")
    check_finite(features, "channel-spatial attention input")
    gate = sigmoid(conv3d_single(features, np.asarray(kernel, dtype=np.float64), bias))
    # float64 sigmoid rounds to exactly 0 or 1 for large logits; keep the gate open
    gate = np.clip(gate, _GATE_LO, _GATE_HI)
    out = beta * (gate * features) + features
    check_finite(out, "channel-spatial attention output")
    if return_map:
        return out, gate
    return out


def pixel_shuffle(features: np.ndarray, r: int) -> np.ndarray:
    """Rearrange ``(H, W, C*r*r)`` into ``(r*H, r*W, C)``.

    Channel ``c*r*r + i*r + j`` of cell ``(y, x)`` lands at ``(y*r + i, x*r + j)``
    of output channel ``c``.
    """
    h, w, cr2 = features.shape
    if r < 1 or cr2 % (r * r):
        raise ValueError(f"channel count {cr2} not divisible by r^2 = {r * r}")
    c = cr2 // (r * r)
    t = features.reshape(h, w, c, r, r)
    return t.transpose(0, 3, 1, 4, 2).reshape(h * r, w * r, c)


def weight_shapes(cfg: HanConfig) -> dict[str, tuple]:
    c = cfg.channels
    shapes = {"shallow.w": (3, 3, 3, c), "shallow.b": (c,)}
    for g in range(cfg.groups):
        for b in range(cfg.blocks_per_group):
            for k in (1, 2):
                shapes[f"group{g}.block{b}.conv{k}.w"] = (3, 3, c, c)
                shapes[f"group{g}.block{b}.conv{k}.b"] = (c,)
    shapes["fuse.w"] = (1, 1, cfg.groups * c, c)
    shapes["fuse.b"] = (c,)
    shapes["csam.w"] = (3, 3, 3)
    shapes["csam.b"] = (1,)
    for s in range(_up_stages(cfg.scale)):
        shapes[f"up{s}.w"] = (3, 3, c, 4 * c)
        shapes[f"up{s}.b"] = (4 * c,)
    shapes["tail.w"] = (3, 3, c, 3)
    shapes["tail.b"] = (3,)
    return shapes


def _up_stages(scale: int) -> int:
    return int(scale).bit_length() - 1


def init_han_weights(cfg: HanConfig) -> dict[str, np.ndarray]:
    """Seeded He-normal weights, small residual branches, zero biases."""
    rng = np.random.default_rng(cfg.seed)
    weights = {}
    for name, shape in weight_shapes(cfg).items():
        if name.endswith(".b"):
            weights[name] = np.zeros(shape)
        elif name == "csam.w":
            weights[name] = rng.standard_normal(shape) * 0.2
        else:
            fan_in = int(np.prod(shape[:-1]))
            gain = 0.1 if ".block" in name else 1.0
            weights[name] = he_normal(rng, shape, fan_in, gain)
    return weights


def han_forward_float(patch, cfg: HanConfig, weights: dict[str, np.ndarray],
                      attention: bool = True) -> np.ndarray:
    """Real-valued ``(r*h, r*w, 3)`` output for a 3-channel patch.

    ``attention=False`` removes LAM and CSAM from the graph entirely, the
    reference against which the zero-scale identity is checked.
    """
    x = patch.to_float() if isinstance(patch, ImageBuffer) else np.asarray(patch, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != 3:
        raise ValueError(f"han_forward expects a 3-channel patch, got shape {x.shape}")
    check_shapes(weights, weight_shapes(cfg))
    wt = weights

    shallow = conv2d(x, wt["shallow.w"], wt["shallow.b"])
    feat = shallow
    group_outputs = []
    for g in range(cfg.groups):
        group_in = feat
        for b in range(cfg.blocks_per_group):
            p = f"group{g}.block{b}"
            y = relu(conv2d(feat, wt[f"{p}.conv1.w"], wt[f"{p}.conv1.b"]))
            y = conv2d(y, wt[f"{p}.conv2.w"], wt[f"{p}.conv2.b"])
            feat = feat + y
        feat = feat + group_in
        group_outputs.append(feat)
    check_finite(feat, "residual groups")

    stacked = np.stack(group_outputs)
    if attention:
        stacked = layer_attention(stacked, cfg.lam_alpha)
    merged = np.concatenate(list(stacked), axis=2)
    fused = conv2d(merged, wt["fuse.w"], wt["fuse.b"])
    if attention:
        fused = channel_spatial_attention(fused, cfg.csam_beta, wt["csam.w"], float(wt["csam.b"][0]))

    body = fused + shallow
    for s in range(_up_stages(cfg.scale)):
        body = pixel_shuffle(conv2d(body, wt[f"up{s}.w"], wt[f"up{s}.b"]), 2)
    out = conv2d(body, wt["tail.w"], wt["tail.b"])
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("non-finite values in reconstruction output")
    return out


def han_forward(patch: ImageBuffer, cfg: HanConfig, weights: dict[str, np.ndarray] | None = None,
                attention: bool = True) -> ImageBuffer:
    """Super-resolve ``patch`` by ``cfg.scale``; weights default to the seeded init."""
    if weights is None:
        weights = init_han_weights(cfg)
    return ImageBuffer.from_float(np.clip(han_forward_float(patch, cfg, weights, attention), 0.0, 1.0))
