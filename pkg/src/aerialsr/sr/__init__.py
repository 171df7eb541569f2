"""Super-resolution backends: bicubic, toy HAN, and external subprocess adapters."""

from ..imaging import ImageBuffer, resample_bicubic
from .han import (
    SR_SCALES,
    HanConfig,
    channel_spatial_attention,
    han_forward,
    han_forward_float,
    init_han_weights,
    layer_attention,
    pixel_shuffle,
)


def upscale_bicubic(patch: ImageBuffer, r: int) -> ImageBuffer:
    if r not in SR_SCALES:
        raise ValueError(f"scale must be one of {SR_SCALES}, got {r}")
    return resample_bicubic(patch, r * patch.width, r * patch.height)


from .adapter import (  # noqa: E402
    AdapterConfig,
    AdapterError,
    bicubic_adapter_config,
    external_upscale,
    external_upscale_image,
)

__all__ = [
    "SR_SCALES", "HanConfig", "AdapterConfig", "AdapterError", "bicubic_adapter_config",
    "channel_spatial_attention", "external_upscale", "external_upscale_image", "han_forward",
    "han_forward_float", "init_han_weights", "layer_attention", "pixel_shuffle", "upscale_bicubic",
]
