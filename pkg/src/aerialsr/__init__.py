"""Aerial animal detection harness: tiling, resolution simulation, super-resolution,
altitude-aware detection and mAP evaluation."""

from .boxes import Detection, GroundTruthBox, chebyshev, iou
from .imaging import ImageBuffer, load_image, psnr, resample_bicubic, save_image

__version__ = "0.1.0"

__all__ = [
    "Detection", "GroundTruthBox", "ImageBuffer", "chebyshev", "iou", "load_image", "psnr",
    "resample_bicubic", "save_image",
]
