"""Command-line entry point: ``aerialsr <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 too many
failed frames (or a failed check).
"""

from __future__ import annotations

import argparse
import json
import logging
import shlex
import sys
from pathlib import Path

from . import synthgen
from .boxes import read_detections_csv, write_detections_csv
from .datasets import (
    AnnotationError,
    attach_altitude,
    load_annotations_boxes,
    load_annotations_centers,
    load_manifest,
    save_manifest,
    split_dataset,
    write_altitudes,
    write_annotations_boxes,
)
from .detector import fc_gradient_check
from .imaging import ImageFormatError, load_image, psnr, save_image
from .metrics import DEFAULT_SWEEP
from .pipeline import (
    ConfigError,
    PipelineConfig,
    PipelineFailure,
    build_report,
    check_failures,
    detect_frames,
    dumps_report,
    load_inputs,
    tile_plan,
)
from .report import FORMATS, emit_report
from .sr import AdapterConfig, AdapterError, HanConfig, external_upscale_image, han_forward, upscale_bicubic
from .tiling import extract_tile

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_STAGE = 0, 2, 3, 4
GRAD_TOLERANCE = 1e-4

log = logging.getLogger("aerialsr")


class DataError(RuntimeError):
    pass


# -- helpers ------------------------------------------------------------------

def _out(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _load_config(args, **overrides) -> PipelineConfig:
    if not args.config:
        raise ConfigError(f"'{args.command}' needs --config <pipeline.json>")
    cfg = PipelineConfig.load(args.config)
    d = cfg.to_dict()
    d["sr_scale"] = cfg.sr_scale
    if args.seed is not None:
        d["seed"] = args.seed
    d.update(overrides)
    return PipelineConfig.from_dict(d)


def _formats(text: str) -> tuple[str, ...]:
    fmts = tuple(f.strip() for f in text.split(",") if f.strip())
    bad = sorted(set(fmts) - set(FORMATS))
    if bad:
        raise ConfigError(f"unknown formats {bad}; choose from {FORMATS}")
    return fmts


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise ConfigError(f"expected WIDTHxHEIGHT, got {text!r}") from None


def _plan_from_file(path) -> dict[str, list[tuple[int, int]]]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return {fid: [tuple(o) for o in origins] for fid, origins in doc["frames"].items()}
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"cannot read tile plan {path}: {exc}") from None


def _detect_log_for(det_path: Path) -> dict | None:
    p = det_path.with_name("detect.json")
    if not p.is_file():
        return None
    return json.loads(p.read_text(encoding="utf-8"))


# -- commands -----------------------------------------------------------------

def cmd_synth(args) -> int:
    kw = json.loads(args.overrides) if args.overrides else {}
    if not isinstance(kw, dict):
        raise ConfigError("--overrides must be a JSON object")
    w, h = _size(args.frame_size) if args.frame_size else (None, None)
    try:
        configs = synthgen.preset_configs(args.preset, args.frames, seed=args.seed or 0,
                                          frame_w=w, frame_h=h, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    manifest = synthgen.write_dataset(_out(args), configs)
    print(manifest)
    return EXIT_OK


def cmd_ingest(args) -> int:
    out = _out(args)
    frames, doc = load_manifest(args.frames)
    if args.altitude:
        frames = attach_altitude(frames, args.altitude)
    if args.boxes:
        boxes = load_annotations_boxes(args.boxes, frames)
    elif args.centers:
        boxes = load_annotations_centers(args.centers, args.box_size, frames)
    else:
        raise ConfigError("ingest needs --boxes or --centers")
    ratios = _floats(args.split)
    if len(ratios) != 3:
        raise ConfigError("--split takes three ratios: train,val,test")
    try:
        split = split_dataset(frames, ratios, args.seed or 0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    write_annotations_boxes(out / "boxes.csv", boxes)
    if all(f.altitude is not None for f in frames):
        write_altitudes(out / "altitude.csv", frames)
    extra = {"annotations": {"path": "boxes.csv", "format": "boxes"},
             "split": {"ratios": list(ratios), "seed": args.seed or 0, **split.as_dict()}}
    save_manifest(out / "manifest.json", frames, extra)
    print(out / "manifest.json")
    return EXIT_OK


def cmd_tile(args) -> int:
    cfg = _load_config(args)
    _, frames = load_inputs(cfg)
    plan = tile_plan(cfg, frames)
    out = _out(args)
    _write_json(out / "tiles.json", {"tile_size": cfg.tile_size, "overlap": cfg.overlap,
                                     "frames": {fid: [list(o) for o in v] for fid, v in plan.items()}})
    if args.save_tiles:
        tile_dir = out / "tiles"
        tile_dir.mkdir(exist_ok=True)
        for f in frames:
            img = load_image(f.image_path)
            for x, y in plan[f.frame_id]:
                save_image(extract_tile(img, (x, y), cfg.tile_size), tile_dir / f"{f.frame_id}_{x}_{y}.ppm")
    print(f"{sum(len(v) for v in plan.values())} tiles over {len(plan)} frames")
    return EXIT_OK


def cmd_degrade(args) -> int:
    img = load_image(args.image)
    try:
        low = synthgen.degrade_frame(img, args.factor)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    dest = _out(args) / f"{Path(args.image).stem}_down{args.factor}.ppm"
    save_image(low, dest)
    print(dest)
    return EXIT_OK


def cmd_upscale(args) -> int:
    img = load_image(args.image)
    if args.backend == "bicubic":
        up = upscale_bicubic(img, args.scale)
    elif args.backend == "toy-han":
        up = han_forward(img, HanConfig(scale=args.scale, seed=args.seed or 0))
    else:
        if not args.adapter_cmd:
            raise ConfigError("--backend external needs --adapter-cmd")
        adapter = AdapterConfig(command=tuple(shlex.split(args.adapter_cmd)), timeout=args.timeout)
        up = external_upscale_image(img, args.scale, adapter)
    dest = _out(args) / f"{Path(args.image).stem}_up{args.scale}.ppm"
    save_image(up, dest)
    line = str(dest)
    if args.reference:
        line += f"  PSNR {psnr(up, load_image(args.reference)):.4f} dB"
    print(line)
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _load_config(args)
    _, frames = load_inputs(cfg)
    plan = _plan_from_file(args.tiles) if args.tiles else None
    dets, diagnostics = detect_frames(cfg, frames, args.threads, plan)
    out = _out(args)
    write_detections_csv(out / "detections.csv",
                         [(f.frame_id, d) for f in frames for d in dets.get(f.frame_id, ())])
    _write_json(out / "detect.json", {"config": cfg.to_dict(), "frames": [f.frame_id for f in frames],
                                      "diagnostics": diagnostics})
    check_failures(frames, diagnostics)
    print(f"{sum(len(v) for v in dets.values())} detections over {len(dets)} frames")
    return EXIT_OK


def _evaluate_file(args, cfg) -> dict:
    dataset, frames = load_inputs(cfg)
    det_path = Path(args.detections or (Path(args.out or ".") / "detections.csv"))
    if not det_path.is_file():
        raise DataError(f"detections file not found: {det_path}")
    dets = read_detections_csv(det_path)
    wanted = {f.frame_id for f in frames}
    unknown = sorted(set(dets) - wanted)
    if unknown:
        raise DataError(f"detections reference frames outside the evaluated set: {unknown[:5]}")
    det_log = _detect_log_for(det_path)
    diagnostics = det_log["diagnostics"] if det_log else []
    return build_report(cfg, dataset, frames, dets, diagnostics)


def cmd_eval(args) -> int:
    report = _evaluate_file(args, _load_config(args))
    emit_report(report, _formats(args.formats), _out(args))
    ev = report["evaluation"]
    print(f"mAP(IoU) {ev['map_iou']:.4f}  mAP(Che) {ev['map_che']:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    base = _load_config(args)
    thresholds = list(_floats(args.thresholds))
    report = _evaluate_file(args, _load_config(args, eval={**base.eval, "sweep": thresholds}))
    emit_report(report, ("json", "csv", "svg"), _out(args), stem="sweep")
    for t, m in report["evaluation"]["sweep"]:
        print(f"IoU {t:.2f}  mAP {m:.4f}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_config(args)
    dataset, frames = load_inputs(cfg)
    dets, diagnostics = detect_frames(cfg, frames, args.threads)
    check_failures(frames, diagnostics)
    report = build_report(cfg, dataset, frames, dets, diagnostics)
    emit_report(report, _formats(args.formats), _out(args))
    ev = report["evaluation"]
    print(f"{report['method']}: mAP(IoU) {ev['map_iou']:.4f}  mAP(Che) {ev['map_che']:.4f}")
    return EXIT_OK


def cmd_report(args) -> int:
    reports = []
    for p in args.reports:
        try:
            doc = json.loads(Path(p).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read report {p}: {exc}") from None
        reports.extend(doc["reports"] if "reports" in doc else [doc])
    for r in reports:
        r.pop("artifacts", None)
    emit_report(reports, _formats(args.formats), _out(args), stem=args.stem)
    print(Path(args.out or ".") / f"{args.stem}.md")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    res = fc_gradient_check(seed=args.seed or 0)
    doc = {"max_relative_error": res.max_relative_error, "loss": res.loss,
           "altitude_grad": res.altitude_grad, "tolerance": GRAD_TOLERANCE,
           "passed": res.max_relative_error < GRAD_TOLERANCE}
    if args.out:
        _write_json(_out(args) / "grad_check.json", doc)
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK if doc["passed"] else EXIT_STAGE


# -- parser -------------------------------------------------------------------

def _global_flags(parser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="pipeline config JSON")
    parser.add_argument("--seed", type=int, default=default, help="override the seed")
    parser.add_argument("--out", default=default, help="output directory")
    parser.add_argument("--threads", type=int, default=argparse.SUPPRESS if suppress else 1,
                        help="frame-level worker threads (results do not depend on it)")
    parser.add_argument("-v", "--verbose", action="store_true",
                        default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aerialsr", description="Tiled aerial detection with "
                                     "super-resolution, altitude priors and mAP evaluation.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        _global_flags(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "generate a synthetic dataset")
    p.add_argument("--preset", choices=sorted(synthgen.PRESETS), default="savmap")
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--frame-size", help="WIDTHxHEIGHT, default from the preset")
    p.add_argument("--overrides", help="JSON object of preset overrides")

    p = add("ingest", cmd_ingest, "normalize annotations, attach altitudes, split frames")
    p.add_argument("--frames", required=True, help="manifest JSON listing the frames")
    p.add_argument("--boxes", help="box annotation CSV")
    p.add_argument("--centers", help="centre-point annotation CSV")
    p.add_argument("--box-size", type=int, default=100)
    p.add_argument("--altitude", help="altitude CSV (frame_id,altitude_m)")
    p.add_argument("--split", default="0.7,0.1,0.2", help="train,val,test ratios")

    p = add("tile", cmd_tile, "plan tiles for every evaluated frame")
    p.add_argument("--save-tiles", action="store_true", help="also write the tile images")

    p = add("degrade", cmd_degrade, "bicubic-downsample one image")
    p.add_argument("image")
    p.add_argument("--factor", type=int, choices=synthgen.DEGRADE_FACTORS, required=True)

    p = add("upscale", cmd_upscale, "super-resolve one image")
    p.add_argument("image")
    p.add_argument("--scale", type=int, choices=(2, 4, 8), required=True)
    p.add_argument("--backend", choices=("bicubic", "toy-han", "external"), default="bicubic")
    p.add_argument("--adapter-cmd", help="external adapter command line")
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--reference", help="image to report PSNR against")

    p = add("detect", cmd_detect, "detect on every evaluated frame")
    p.add_argument("--tiles", help="tile plan from 'tile' (default: plan from the config)")

    p = add("eval", cmd_eval, "evaluate a detections CSV")
    p.add_argument("--detections", help="detections CSV (default: <out>/detections.csv)")
    p.add_argument("--formats", default="json,markdown,csv,svg")

    p = add("sweep", cmd_sweep, "mAP(IoU) over a range of IoU thresholds")
    p.add_argument("--detections", help="detections CSV (default: <out>/detections.csv)")
    p.add_argument("--thresholds", default=",".join(str(t) for t in DEFAULT_SWEEP))

    p = add("run", cmd_run, "tile, detect and evaluate in one go")
    p.add_argument("--formats", default="json,markdown,csv,svg")

    p = add("report", cmd_report, "render one or more report JSON files")
    p.add_argument("reports", nargs="+")
    p.add_argument("--formats", default="markdown,csv,svg,json")
    p.add_argument("--stem", default="summary")

    add("grad-check", cmd_grad_check, "finite-difference check of the altitude fusion layers")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineFailure as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        for d in exc.diagnostics:
            print(f"  {d['frame_id']}: {d['error']}", file=sys.stderr)
        return EXIT_STAGE
    except (DataError, AnnotationError, ImageFormatError, AdapterError, synthgen.PlacementError,
            OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
