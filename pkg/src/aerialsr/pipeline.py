"""End-to-end runs: tile -> degrade -> super-resolve -> detect -> remap -> merge -> prior -> evaluate."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .datasets import load_dataset, split_dataset
from .detector import (
    TRAINING,
    CameraModel,
    DetectorConfig,
    ToyDetector,
    blob_oracle_detect,
    scale_prior_filter,
)
from .imaging import load_image
from .metrics import DEFAULT_SWEEP, evaluate_both
from .nn import load_weights
from .sr import (
    SR_SCALES,
    AdapterConfig,
    HanConfig,
    external_upscale_image,
    han_forward,
    init_han_weights,
    upscale_bicubic,
)
from .synthgen import DEGRADE_FACTORS, degrade_frame
from .tiling import extract_tile, merge_frame_detections, plan_tiles, remap_detections

log = logging.getLogger(__name__)

SR_BACKENDS = ("none", "bicubic", "toy-han", "external")
DETECTORS = ("blob-oracle", "toy-net")
ABORT_FRACTION = 0.10


class ConfigError(ValueError):
    pass


class PipelineFailure(RuntimeError):
    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class PipelineConfig:
    manifest: str
    tile_size: int = 512
    overlap: int = 0
    degrade_factor: int = 1
    sr_backend: str = "none"
    sr_scale: int | None = None
    adapter: dict | None = None
    han: dict = field(default_factory=dict)
    detector: str = "blob-oracle"
    blob: dict = field(default_factory=lambda: {"threshold": 0.5, "min_area": 4})
    toy_net: dict = field(default_factory=dict)
    use_altitude_fusion: bool = False
    scale_prior: dict = field(default_factory=lambda: {"enabled": False})
    nms_iou: float = 0.5
    eval: dict = field(default_factory=lambda: {
        "iou_threshold": 0.3, "chebyshev_threshold": 200.0, "conf_threshold": 0.1,
        "sweep": list(DEFAULT_SWEEP)})
    subset: dict | None = None
    label: str | None = None
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown pipeline config keys: {unknown}")
        if "manifest" not in d:
            raise ConfigError("pipeline config needs a 'manifest' path")
        d = dict(d)
        defaults = cls(manifest="")
        for section in ("blob", "eval"):
            if section in d:
                if not isinstance(d[section], dict):
                    raise ConfigError(f"'{section}' must be a JSON object")
                d[section] = {**getattr(defaults, section), **d[section]}
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        """Read a JSON config; relative paths inside it resolve against its folder."""
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        return cls.from_dict(doc).resolved(Path(path).parent)

    def resolved(self, base_dir) -> "PipelineConfig":
        """Copy with the manifest and weight paths made absolute against ``base_dir``."""
        base = Path(base_dir).resolve()

        def fix(p):
            return os.path.normpath(base / p) if p is not None and not Path(p).is_absolute() else p

        d = asdict(self)
        d["manifest"] = fix(d["manifest"])
        for section in ("han", "toy_net"):
            if "weights" in d[section]:
                d[section]["weights"] = fix(d[section]["weights"])
        return PipelineConfig(**d)

    def check_paths(self) -> None:
        """Referenced files must exist before any frame is processed."""
        paths = [("manifest", self.manifest), ("han.weights", self.han.get("weights")),
                 ("toy_net.weights", self.toy_net.get("weights"))]
        for name, p in paths:
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"{name} not found: {p}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sr_scale"] = self.effective_sr_scale
        return d

    @property
    def effective_sr_scale(self) -> int:
        if self.sr_backend == "none":
            return 1
        return int(self.sr_scale) if self.sr_scale else self.degrade_factor

    @property
    def operating_size(self) -> int:
        return self.tile_size // self.degrade_factor * self.effective_sr_scale

    def validate(self) -> None:
        ints = {"tile_size": self.tile_size, "overlap": self.overlap,
                "degrade_factor": self.degrade_factor, "seed": self.seed}
        for name, v in ints.items():
            if not isinstance(v, int) or isinstance(v, bool):
                raise ConfigError(f"{name} must be an integer, got {v!r}")
        if self.tile_size <= 0 or not 0 <= self.overlap < self.tile_size:
            raise ConfigError("need tile_size > 0 and 0 <= overlap < tile_size")
        for name in ("han", "blob", "toy_net", "scale_prior", "eval"):
            if not isinstance(getattr(self, name), dict):
                raise ConfigError(f"'{name}' must be a JSON object")
        if self.degrade_factor != 1 and self.degrade_factor not in DEGRADE_FACTORS:
            raise ConfigError(f"degrade_factor must be 1 or one of {DEGRADE_FACTORS}")
        if self.sr_backend not in SR_BACKENDS:
            raise ConfigError(f"sr_backend must be one of {SR_BACKENDS}")
        if self.detector not in DETECTORS:
            raise ConfigError(f"detector must be one of {DETECTORS}")
        if self.sr_backend != "none":
            if self.degrade_factor == 1 and not self.sr_scale:
                raise ConfigError("super-resolution needs degrade_factor > 1 or an explicit sr_scale")
            if self.effective_sr_scale not in SR_SCALES:
                raise ConfigError(f"sr_scale must be one of {SR_SCALES}")
        if self.sr_backend == "external" and not (self.adapter and self.adapter.get("command")):
            raise ConfigError("external SR backend requires adapter.command")
        if self.tile_size % self.degrade_factor:
            raise ConfigError("tile_size must be divisible by degrade_factor")
        if self.detector == "toy-net":
            size = self.toy_net.get("input_size", self.operating_size)
            if size != self.operating_size:
                raise ConfigError(f"toy-net input_size {size} does not match the operating "
                                  f"patch size {self.operating_size}")
        if self.use_altitude_fusion and self.detector != "toy-net":
            raise ConfigError("altitude fusion is part of the toy-net detector")
        if self.scale_prior.get("enabled"):
            for key in ("animal_extent",):
                if key not in self.scale_prior:
                    raise ConfigError(f"scale_prior.{key} is required when the prior is enabled")
        if not 0.0 <= self.nms_iou <= 1.0:
            raise ConfigError("nms_iou must lie in [0, 1]")

    def method_label(self) -> str:
        if self.label:
            return self.label
        parts = ["Blob oracle" if self.detector == "blob-oracle" else "Baseline"]
        parts.append({"none": "", "bicubic": "+ Bicubic", "toy-han": "+ HAN SR (toy)",
                      "external": "+ External SR"}[self.sr_backend])
        if self.use_altitude_fusion:
            parts.append("+ Altitude-augmented")
        if self.scale_prior.get("enabled"):
            parts.append("+ Scale prior")
        return " ".join(p for p in parts if p)

    def operational_resolution(self) -> str:
        low = self.tile_size // self.degrade_factor
        if self.sr_backend == "none":
            return f"{low}×{low}"
        high = self.operating_size
        return f"{low}×{low} → {high}×{high}"


class FrameProcessor:
    """Per-frame work; built once per run and shared read-only by worker threads."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.scale = cfg.effective_sr_scale
        if cfg.sr_backend == "toy-han":
            han = dict(cfg.han)
            weights_path = han.pop("weights", None)
            han.setdefault("seed", cfg.seed)
            self.han_cfg = HanConfig(scale=self.scale, **han)
            self.han_weights = load_weights(weights_path) if weights_path else init_han_weights(self.han_cfg)
        if cfg.sr_backend == "external":
            a = dict(cfg.adapter)
            self.adapter = AdapterConfig(command=tuple(a.pop("command")), **a)
        if cfg.detector == "toy-net":
            net = dict(cfg.toy_net)
            weights_path = net.pop("weights", None)
            net.setdefault("input_size", cfg.operating_size)
            net.setdefault("seed", cfg.seed)
            det_cfg = DetectorConfig(**net)
            self.toy = ToyDetector(det_cfg, load_weights(weights_path) if weights_path else None)
        prior = cfg.scale_prior
        self.prior_camera = None
        if prior.get("enabled") and "focal_length" in prior:
            self.prior_camera = CameraModel(prior["focal_length"], prior["pixel_pitch"])

    def super_resolve(self, patch):
        backend = self.cfg.sr_backend
        if backend == "none":
            return patch
        if backend == "bicubic":
            return upscale_bicubic(patch, self.scale)
        if backend == "toy-han":
            return han_forward(patch, self.han_cfg, self.han_weights)
        return external_upscale_image(patch, self.scale, self.adapter)

    def detect(self, patch, altitude):
        if self.cfg.detector == "blob-oracle":
            b = self.cfg.blob
            return blob_oracle_detect(patch, b.get("threshold", 0.5), b.get("min_area", 4))
        alt = altitude if self.cfg.use_altitude_fusion else None
        if self.cfg.use_altitude_fusion and alt is None:
            raise ValueError("altitude fusion requested but the frame has no altitude")
        return self.toy.detect(patch, alt)

    def tile_detections(self, image, altitude, origins=None):
        """Merged frame-coordinate detections for one frame image (before the scale prior).

        ``origins`` overrides the planned tile origins, e.g. with a saved plan.
        """
        cfg = self.cfg
        if origins is None:
            origins = plan_tiles(image.width, image.height, cfg.tile_size, cfg.overlap).tiles
        total_scale = self.scale / cfg.degrade_factor
        dets = []
        for origin in origins:
            patch = extract_tile(image, origin, cfg.tile_size)
            if cfg.degrade_factor > 1:
                patch = degrade_frame(patch, cfg.degrade_factor)
            patch = self.super_resolve(patch)
            dets.extend(remap_detections(self.detect(patch, altitude), origin, total_scale))
        return merge_frame_detections(dets, cfg.nms_iou)

    def __call__(self, frame, origins=None):
        try:
            image = load_image(frame.image_path)
            dets = self.tile_detections(image, frame.altitude, origins)
            prior = self.cfg.scale_prior
            if prior.get("enabled"):
                cam = self.prior_camera or frame.camera
                if cam is None or frame.altitude is None:
                    raise ValueError("scale prior needs a camera model and the frame altitude")
                dets = scale_prior_filter(dets, frame.altitude, cam, prior["animal_extent"],
                                          tuple(prior.get("band", (0.25, 4.0))))
            return frame.frame_id, dets, None
        except Exception as exc:  # recorded per frame; the run decides whether to fail
            log.warning("frame %s aborted: %s", frame.frame_id, exc)
            return frame.frame_id, None, f"{type(exc).__name__}: {exc}"


def select_frames(frames, subset: dict | None):
    if not subset or subset.get("split", "all") == "all":
        return list(frames)
    split = split_dataset(frames, tuple(subset.get("ratios", (0.7, 0.1, 0.2))), subset.get("seed", 0))
    wanted = set(getattr(split, subset["split"]))
    return [f for f in frames if f.frame_id in wanted]


def detect_frames(cfg: PipelineConfig, frames, threads: int = 1, plan=None):
    """Run detection on ``frames``; returns ``(dets_by_frame, diagnostics)`` in frame order.

    ``plan`` optionally maps frame id -> tile origins (see :func:`tile_plan`).
    """
    try:
        proc = FrameProcessor(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid backend settings: {exc}") from None
    plan = plan or {}
    origins = [plan.get(f.frame_id) for f in frames]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(proc, frames, origins))
    else:
        results = [proc(f, o) for f, o in zip(frames, origins)]
    dets, diagnostics = {}, []
    for fid, d, err in results:
        if err is None:
            dets[fid] = d
        else:
            diagnostics.append({"frame_id": fid, "error": err})
    return dets, diagnostics


def tile_plan(cfg: PipelineConfig, frames) -> dict[str, list[tuple[int, int]]]:
    """Tile origins per frame, from the frame sizes recorded in the manifest."""
    plan = {}
    for f in frames:
        w, h = f.width, f.height
        if w is None or h is None:
            img = load_image(f.image_path)
            w, h = img.width, img.height
        plan[f.frame_id] = list(plan_tiles(w, h, cfg.tile_size, cfg.overlap).tiles)
    return plan


def load_inputs(cfg: PipelineConfig):
    """Validate ``cfg`` and return the dataset and the frames selected for evaluation."""
    cfg.validate()
    cfg.check_paths()
    dataset = load_dataset(cfg.manifest)
    frames = select_frames(dataset.frames, cfg.subset)
    if not frames:
        raise ConfigError("no frames selected for evaluation")
    return dataset, frames


def check_failures(frames, diagnostics) -> None:
    if len(diagnostics) > ABORT_FRACTION * len(frames):
        raise PipelineFailure(f"{len(diagnostics)} of {len(frames)} frames failed", diagnostics)


def build_report(cfg: PipelineConfig, dataset, frames, dets, diagnostics) -> dict:
    """Evaluate ``dets`` (frame id -> detections) against the dataset GT.

    Frames listed in ``diagnostics`` are excluded; any other selected frame
    without an entry counts as having no detections.
    """
    failed = {d["frame_id"] for d in diagnostics}
    gts_all = dataset.boxes_by_frame()
    ok = [f.frame_id for f in frames if f.frame_id not in failed]
    dets = {fid: list(dets.get(fid, ())) for fid in ok}
    gts = {fid: gts_all.get(fid, []) for fid in ok}
    ev = cfg.eval
    report = evaluate_both(dets, gts, ev.get("iou_threshold", 0.3), ev.get("chebyshev_threshold", 200.0),
                           ev.get("conf_threshold", 0.1), tuple(ev.get("sweep", ())))
    return {
        "method": cfg.method_label(),
        "operational_resolution": cfg.operational_resolution(),
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "frames": [f.frame_id for f in frames],
        "diagnostics": list(diagnostics),
        "evaluation": report.as_dict(),
        "training_regimen": TRAINING.as_dict(),
    }


def run_pipeline(cfg: PipelineConfig, threads: int = 1) -> dict:
    """Run the configured pipeline over the dataset and return the report document.

    Frames whose processing fails are recorded in ``diagnostics`` and left
    out of evaluation; more than 10% failures raises :class:`PipelineFailure`.
    """
    dataset, frames = load_inputs(cfg)
    dets, diagnostics = detect_frames(cfg, frames, threads)
    check_failures(frames, diagnostics)
    return build_report(cfg, dataset, frames, dets, diagnostics)


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
