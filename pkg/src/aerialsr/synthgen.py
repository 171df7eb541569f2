"""Deterministic synthetic aerial scenes with exact ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .boxes import GroundTruthBox
from .datasets import Frame, save_manifest, write_altitudes, write_annotations_boxes
from .detector import CameraModel, gsd
from .imaging import ImageBuffer, resample_bicubic, save_image

DEFAULT_CAMERA = CameraModel(focal_length=0.05, pixel_pitch=5e-6)
DEGRADE_FACTORS = (2, 4, 8)

_GROUND_TINT = np.array([1.12, 1.0, 0.88])
_ANIMAL_TINT = np.array([0.97, 1.0, 1.03])
_SUPERSAMPLE = 4
_ATTEMPTS_PER_ANIMAL = 500


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    frame_w: int = 512
    frame_h: int = 512
    altitude: float = 800.0
    camera: CameraModel = DEFAULT_CAMERA
    n_animals: int = 5
    animal_extent: float = 2.0
    animal_contrast: float = 0.5
    texture_amplitude: float = 0.06
    correlation_length: float = 4.0
    background_level: float = 0.35
    min_separation: int = 4
    seed: int = 0
    frame_id: str = "scene"

    def __post_init__(self):
        if self.frame_w <= 0 or self.frame_h <= 0:
            raise ValueError("frame dimensions must be positive")
        if self.n_animals < 0:
            raise ValueError("n_animals must be >= 0")
        if not 0.0 < self.animal_contrast <= 1.0:
            raise ValueError("animal_contrast must lie in (0, 1]")
        if self.min_separation < 0:
            raise ValueError("min_separation must be >= 0")
        if self.n_animals and self.nominal_extent_px * 1.2 + 2 > min(self.frame_w, self.frame_h):
            raise ValueError(f"animals of ~{self.nominal_extent_px:.1f} px do not fit a "
                             f"{self.frame_w}x{self.frame_h} frame")

    @property
    def nominal_extent_px(self) -> float:
        return self.animal_extent / gsd(self.altitude, self.camera)


@dataclass(frozen=True)
class Scene:
    frame_id: str
    image: ImageBuffer
    boxes: tuple[GroundTruthBox, ...]
    altitude: float
    camera: CameraModel


def _background(cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    noise = rng.standard_normal((cfg.frame_h, cfg.frame_w))
    if cfg.correlation_length > 0:
        noise = ndimage.gaussian_filter(noise, cfg.correlation_length, mode="reflect")
    std = noise.std()
    if std > 0:
        noise /= std
    return cfg.background_level + cfg.texture_amplitude * noise


def _gap(a, b) -> float:
    """Pixels between two boxes along the more separated axis; negative if they overlap."""
    return max(a[0] - b[2], b[0] - a[2], a[1] - b[3], b[1] - a[3])


def _ellipse_coverage(cx, cy, rx, ry, box):
    """Fraction of each pixel of ``box`` inside the ellipse, by supersampling."""
    x0, y0, x1, y1 = box
    offs = (np.arange(_SUPERSAMPLE) + 0.5) / _SUPERSAMPLE
    xs = (np.arange(x0, x1)[:, None] + offs[None, :]).ravel()
    ys = (np.arange(y0, y1)[:, None] + offs[None, :]).ravel()
    inside = ((xs[None, :] - cx) / rx) ** 2 + ((ys[:, None] - cy) / ry) ** 2 <= 1.0
    h, w = y1 - y0, x1 - x0
    return inside.reshape(h, _SUPERSAMPLE, w, _SUPERSAMPLE).mean(axis=(1, 3))


def generate_scene(cfg: SceneConfig) -> Scene:
    """Render a textured background with ``cfg.n_animals`` bright elliptical animals.

    Each animal's height is the altitude-implied pixel extent and its width
    that extent times an aspect drawn from [0.8, 1.2]. The GT box is the
    ellipse's tight integer bounding box. Placement is by rejection sampling
    with a bounded number of attempts.
    """
    rng = np.random.default_rng(cfg.seed)
    gray = _background(cfg, rng)
    e = cfg.nominal_extent_px
    level = cfg.background_level + cfg.animal_contrast * (1.0 - cfg.background_level)

    boxes: list[tuple[int, int, int, int]] = []
    ellipses = []
    attempts = 0
    while len(boxes) < cfg.n_animals:
        attempts += 1
        if attempts > _ATTEMPTS_PER_ANIMAL * max(cfg.n_animals, 1):
            raise PlacementError(f"placed only {len(boxes)} of {cfg.n_animals} animals after "
                                 f"{attempts - 1} attempts (min_separation={cfg.min_separation})")
        aspect = rng.uniform(0.8, 1.2)
        rx, ry = e * aspect / 2.0, e / 2.0
        cx = rng.uniform(rx, cfg.frame_w - rx)
        cy = rng.uniform(ry, cfg.frame_h - ry)
        box = (max(math.floor(cx - rx), 0), max(math.floor(cy - ry), 0),
               min(math.ceil(cx + rx), cfg.frame_w), min(math.ceil(cy + ry), cfg.frame_h))
        if any(_gap(box, b) < cfg.min_separation for b in boxes):
            continue
        boxes.append(box)
        ellipses.append((cx, cy, rx, ry))

    rgb = gray[:, :, None] * _GROUND_TINT
    for (cx, cy, rx, ry), box in zip(ellipses, boxes):
        x0, y0, x1, y1 = box
        alpha = _ellipse_coverage(cx, cy, rx, ry, box)[:, :, None]
        region = rgb[y0:y1, x0:x1]
        rgb[y0:y1, x0:x1] = (1.0 - alpha) * region + alpha * (level * _ANIMAL_TINT)

    image = ImageBuffer.from_float(np.clip(rgb, 0.0, 1.0))
    gts = tuple(GroundTruthBox(cfg.frame_id, *b) for b in boxes)
    return Scene(cfg.frame_id, image, gts, cfg.altitude, cfg.camera)


def degrade_frame(frame: ImageBuffer, factor: int) -> ImageBuffer:
    """Bicubic downsample by ``factor``; ground truth stays in original pixels."""
    if factor not in DEGRADE_FACTORS:
        raise ValueError(f"factor must be one of {DEGRADE_FACTORS}, got {factor}")
    if frame.width < factor or frame.height < factor:
        raise ValueError(f"{frame.width}x{frame.height} frame is smaller than factor {factor}")
    return resample_bicubic(frame, frame.width // factor, frame.height // factor)


# -- presets ------------------------------------------------------------------

PRESETS = {
    # ~25 px animals at 800 m with the default camera (17-50 px across the
    # altitude range), faint against animal-scale ground clutter
    "savmap": dict(frame_w=4000, frame_h=3000, altitude=800.0, altitude_jitter=0.5,
                   density=20.0, animal_contrast=0.3, texture_amplitude=0.07,
                   correlation_length=10.0, min_separation=4),
    # ~100 px elephants (altitude 200 m)
    "aed": dict(frame_w=4000, frame_h=3000, altitude=200.0, altitude_jitter=0.2,
                density=4.0, animal_contrast=0.5, texture_amplitude=0.07,
                correlation_length=6.0, min_separation=8),
}


def preset_configs(name: str, n_frames: int, seed: int = 0, frame_w: int | None = None,
                   frame_h: int | None = None, **overrides) -> list[SceneConfig]:
    """Per-frame configs for a named preset.

    Altitude varies per frame by up to ``altitude_jitter`` (relative); the
    animal count follows ``density`` animals per megapixel.
    """
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    p = {**PRESETS[name], **overrides}
    w = frame_w or p["frame_w"]
    h = frame_h or p["frame_h"]
    n_animals = p.get("n_animals", max(1, round(p["density"] * w * h / 1e6)))
    rng = np.random.default_rng(seed)
    configs = []
    for i in range(n_frames):
        jitter = rng.uniform(-p["altitude_jitter"], p["altitude_jitter"])
        frame_seed = int(rng.integers(0, 2**31 - 1))
        configs.append(SceneConfig(
            frame_w=w, frame_h=h, altitude=round(p["altitude"] * (1.0 + jitter), 2),
            camera=p.get("camera", DEFAULT_CAMERA), n_animals=n_animals,
            animal_extent=p.get("animal_extent", 2.0), animal_contrast=p["animal_contrast"],
            texture_amplitude=p["texture_amplitude"], correlation_length=p["correlation_length"],
            background_level=p.get("background_level", 0.35),
            min_separation=p["min_separation"], seed=frame_seed, frame_id=f"{name}_{i:04d}"))
    return configs


def write_dataset(out_dir, configs, image_dir: str = "images") -> Path:
    """Render scenes and write images, GT CSV, altitude CSV and a manifest.

    Returns the manifest path.
    """
    out = Path(out_dir)
    (out / image_dir).mkdir(parents=True, exist_ok=True)
    frames, boxes = [], []
    for cfg in configs:
        scene = generate_scene(cfg)
        img_path = out / image_dir / f"{scene.frame_id}.ppm"
        save_image(scene.image, img_path)
        frames.append(Frame(scene.frame_id, str(img_path), scene.altitude,
                            scene.image.width, scene.image.height, scene.camera))
        boxes.extend(scene.boxes)
    write_annotations_boxes(out / "boxes.csv", boxes)
    write_altitudes(out / "altitude.csv", frames)
    manifest = out / "manifest.json"
    save_manifest(manifest, frames, {"annotations": {"path": "boxes.csv", "format": "boxes"}})
    return manifest


def with_seed(cfg: SceneConfig, seed: int) -> SceneConfig:
    return replace(cfg, seed=seed)
