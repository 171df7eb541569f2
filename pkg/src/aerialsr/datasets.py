"""Annotation ingestion, altitude metadata, dataset manifests and frame-level splits."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .boxes import GroundTruthBox
from .detector import CameraModel

BOX_FIELDS = ("frame_id", "x_min", "y_min", "x_max", "y_max", "class_id")
CENTER_FIELDS = ("frame_id", "cx", "cy", "class_id")
ALTITUDE_FIELDS = ("frame_id", "altitude_m")
AED_BOX_SIZE = 100


class AnnotationError(ValueError):
    """Bad annotation or metadata content; ``problems`` lists each offending row."""

    def __init__(self, path, problems):
        self.path = str(path)
        self.problems = list(problems)
        lines = "\n  ".join(self.problems)
        super().__init__(f"{self.path}:\n  {lines}")


@dataclass(frozen=True)
class Frame:
    frame_id: str
    image_path: str
    altitude: float | None = None
    width: int | None = None
    height: int | None = None
    camera: CameraModel | None = None

    def __post_init__(self):
        if self.altitude is not None:
            if not math.isfinite(self.altitude) or self.altitude <= 0:
                raise ValueError(f"frame {self.frame_id}: altitude must be positive")
            # altitude is carried as a 32-bit float scalar
            object.__setattr__(self, "altitude", float(np.float32(self.altitude)))


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]

    def as_dict(self):
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test)}


@dataclass
class Dataset:
    frames: list[Frame]
    boxes: list[GroundTruthBox] = field(default_factory=list)

    def frame_index(self) -> dict[str, Frame]:
        return {f.frame_id: f for f in self.frames}

    def boxes_by_frame(self) -> dict[str, list[GroundTruthBox]]:
        out: dict[str, list[GroundTruthBox]] = {f.frame_id: [] for f in self.frames}
        for b in self.boxes:
            out.setdefault(b.frame_id, []).append(b)
        return out


def _read_rows(path, fields):
    with open(os.fspath(path), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise AnnotationError(path, ["empty file (header is mandatory)"]) from None
        missing = [f for f in fields if f not in header]
        if missing:
            raise AnnotationError(path, [f"header missing columns {missing}"])
        cols = {name: header.index(name) for name in fields}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                yield lineno, None, f"expected {len(header)} fields, got {len(row)}"
                continue
            yield lineno, {k: row[i].strip() for k, i in cols.items()}, None


def _frame_sizes(frames) -> dict[str, tuple[int | None, int | None]] | None:
    if frames is None:
        return None
    if isinstance(frames, dict):
        frames = frames.values()
    return {f.frame_id: (f.width, f.height) for f in frames}


def _clamp(frame_id, x0, y0, x1, y1, sizes):
    w, h = sizes.get(frame_id, (None, None))
    if w is not None:
        x0, x1 = max(x0, 0), min(x1, w)
    if h is not None:
        y0, y1 = max(y0, 0), min(y1, h)
    return x0, y0, x1, y1


def _number(text):
    v = float(text)
    if not math.isfinite(v):
        raise ValueError(f"non-finite value {text!r}")
    return int(v) if v.is_integer() else v


def load_annotations_boxes(path, frames=None) -> list[GroundTruthBox]:
    """Parse a ``frame_id,x_min,y_min,x_max,y_max,class_id`` CSV.

    When ``frames`` (Frame objects) is given, unknown frame ids are errors and
    boxes are clamped to known frame sizes. Every bad row is reported.
    """
    sizes = _frame_sizes(frames)
    boxes, problems = [], []
    for lineno, row, err in _read_rows(path, BOX_FIELDS):
        if err:
            problems.append(f"row {lineno}: {err}")
            continue
        try:
            x0, y0, x1, y1 = (_number(row[k]) for k in ("x_min", "y_min", "x_max", "y_max"))
            cls = int(row["class_id"])
        except ValueError as exc:
            problems.append(f"row {lineno}: {exc}")
            continue
        fid = row["frame_id"]
        if sizes is not None:
            if fid not in sizes:
                problems.append(f"row {lineno}: unknown frame_id {fid!r}")
                continue
            x0, y0, x1, y1 = _clamp(fid, x0, y0, x1, y1, sizes)
        if not (x0 < x1 and y0 < y1):
            problems.append(f"row {lineno}: box ({x0}, {y0}, {x1}, {y1}) has no positive area "
                            "(need x_min < x_max and y_min < y_max)")
            continue
        boxes.append(GroundTruthBox(fid, x0, y0, x1, y1, cls))
    if problems:
        raise AnnotationError(path, problems)
    return boxes


def center_to_box(cx: int, cy: int, box_size: int = AED_BOX_SIZE) -> tuple[int, int, int, int]:
    """Integer box around a centre: ``[c - floor(s/2), c + ceil(s/2))`` on each axis."""
    lo = box_size // 2
    hi = box_size - lo
    return (cx - lo, cy - lo, cx + hi, cy + hi)


def box_to_center(box) -> tuple[int, int]:
    x0, y0, x1, y1 = box
    return (math.floor((x0 + x1) / 2), math.floor((y0 + y1) / 2))


def load_annotations_centers(path, box_size: int = AED_BOX_SIZE, frames=None) -> list[GroundTruthBox]:
    """Parse a ``frame_id,cx,cy,class_id`` CSV and expand each point to a square box."""
    if box_size <= 0:
        raise ValueError("box_size must be positive")
    sizes = _frame_sizes(frames)
    boxes, problems = [], []
    for lineno, row, err in _read_rows(path, CENTER_FIELDS):
        if err:
            problems.append(f"row {lineno}: {err}")
            continue
        try:
            cx, cy = _number(row["cx"]), _number(row["cy"])
            cls = int(row["class_id"])
            if not (isinstance(cx, int) and isinstance(cy, int)):
                raise ValueError(f"centre ({row['cx']}, {row['cy']}) must be integer pixels")
        except ValueError as exc:
            problems.append(f"row {lineno}: {exc}")
            continue
        fid = row["frame_id"]
        x0, y0, x1, y1 = center_to_box(cx, cy, box_size)
        if sizes is not None:
            if fid not in sizes:
                problems.append(f"row {lineno}: unknown frame_id {fid!r}")
                continue
            x0, y0, x1, y1 = _clamp(fid, x0, y0, x1, y1, sizes)
        if not (x0 < x1 and y0 < y1):
            problems.append(f"row {lineno}: centre ({cx}, {cy}) lies outside its frame")
            continue
        boxes.append(GroundTruthBox(fid, x0, y0, x1, y1, cls))
    if problems:
        raise AnnotationError(path, problems)
    return boxes


def _fmt(v):
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return repr(v) if isinstance(v, float) else str(v)


def write_annotations_boxes(path, boxes) -> None:
    with open(os.fspath(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BOX_FIELDS)
        for b in boxes:
            w.writerow([b.frame_id, _fmt(b.x_min), _fmt(b.y_min), _fmt(b.x_max),
                        _fmt(b.y_max), b.class_id])


def split_dataset(frames, ratios=(0.7, 0.1, 0.2), seed: int = 0) -> DatasetSplit:
    """Frame-level train/val/test split.

    The frame order is shuffled with ``seed``; val and test sizes are the
    floors of ``n * ratio`` and the remainder goes to train.
    """
    ids = [f.frame_id if isinstance(f, Frame) else str(f) for f in frames]
    if not ids:
        raise ValueError("cannot split an empty frame list")
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError(f"ratios must be three non-negative numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    n = len(ids)
    # epsilon absorbs products like 0.29 * 100 = 28.999999999999996
    n_val = math.floor(n * ratios[1] + 1e-9)
    n_test = math.floor(n * ratios[2] + 1e-9)
    perm = np.random.default_rng(seed).permutation(n)
    order = [ids[i] for i in perm]
    test = tuple(order[:n_test])
    val = tuple(order[n_test:n_test + n_val])
    train = tuple(order[n_test + n_val:])
    return DatasetSplit(train=train, val=val, test=test)


def attach_altitude(frames, meta_path) -> list[Frame]:
    """Populate ``Frame.altitude`` from a ``frame_id,altitude_m`` CSV."""
    values: dict[str, float] = {}
    problems = []
    for lineno, row, err in _read_rows(meta_path, ALTITUDE_FIELDS):
        if err:
            problems.append(f"row {lineno}: {err}")
            continue
        fid = row["frame_id"]
        try:
            alt = float(row["altitude_m"])
        except ValueError:
            problems.append(f"row {lineno}: altitude {row['altitude_m']!r} is not a number")
            continue
        if not math.isfinite(alt) or alt <= 0:
            problems.append(f"row {lineno}: altitude for {fid!r} must be positive, got {alt}")
            continue
        if fid in values and values[fid] != alt:
            problems.append(f"row {lineno}: conflicting altitude for {fid!r} "
                            f"({values[fid]} vs {alt})")
            continue
        values[fid] = alt
    missing = [f.frame_id for f in frames if f.frame_id not in values]
    if missing:
        problems.append(f"no altitude for frames: {', '.join(missing)}")
    if problems:
        raise AnnotationError(meta_path, problems)
    return [replace(f, altitude=values[f.frame_id]) for f in frames]


def write_altitudes(path, frames) -> None:
    with open(os.fspath(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ALTITUDE_FIELDS)
        for f in frames:
            w.writerow([f.frame_id, repr(f.altitude)])


def _camera_from(obj):
    if not obj:
        return None
    return CameraModel(focal_length=float(obj["focal_length"]), pixel_pitch=float(obj["pixel_pitch"]))


def load_manifest(path) -> tuple[list[Frame], dict]:
    """Read a dataset manifest JSON.

    Returns the frames (image paths resolved against the manifest's folder)
    and the raw document so callers can read optional sections such as
    ``annotations`` or ``split``.
    """
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    base = path.parent
    frames, seen = [], set()
    for i, entry in enumerate(doc.get("frames", [])):
        try:
            fid = str(entry["frame_id"])
            img = entry["image_path"]
        except KeyError as exc:
            raise AnnotationError(path, [f"frames[{i}]: missing key {exc}"]) from None
        if fid in seen:
            raise AnnotationError(path, [f"frames[{i}]: duplicate frame_id {fid!r}"])
        seen.add(fid)
        img_path = Path(img)
        if not img_path.is_absolute():
            img_path = base / img_path
        alt = entry.get("altitude_m")
        frames.append(Frame(fid, str(img_path), None if alt is None else float(alt),
                            entry.get("width"), entry.get("height"),
                            _camera_from(entry.get("camera"))))
    return frames, doc


def save_manifest(path, frames, extra: dict | None = None) -> None:
    path = Path(path)
    base = path.parent.resolve()
    entries = []
    for f in frames:
        img = Path(f.image_path)
        try:
            img = img.resolve().relative_to(base)
        except ValueError:
            pass
        entry = {"frame_id": f.frame_id, "image_path": img.as_posix(),
                 "altitude_m": f.altitude, "width": f.width, "height": f.height}
        if f.camera is not None:
            entry["camera"] = {"focal_length": f.camera.focal_length,
                               "pixel_pitch": f.camera.pixel_pitch}
        entries.append(entry)
    doc = {"frames": entries}
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_dataset(manifest_path) -> Dataset:
    """Frames plus ground truth as referenced by the manifest's ``annotations`` section.

    ``annotations`` is ``{"path": ..., "format": "boxes" | "centers", "box_size": 100}``.
    """
    frames, doc = load_manifest(manifest_path)
    ann = doc.get("annotations")
    boxes: list[GroundTruthBox] = []
    if ann:
        ann_path = Path(ann["path"])
        if not ann_path.is_absolute():
            ann_path = Path(manifest_path).parent / ann_path
        fmt = ann.get("format", "boxes")
        if fmt == "boxes":
            boxes = load_annotations_boxes(ann_path, frames)
        elif fmt == "centers":
            boxes = load_annotations_centers(ann_path, int(ann.get("box_size", AED_BOX_SIZE)), frames)
        else:
            raise AnnotationError(manifest_path, [f"unknown annotation format {fmt!r}"])
    return Dataset(frames, boxes)
