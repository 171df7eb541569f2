"""Axis-aligned boxes in frame pixels.

All boxes use the half-open convention ``[x_min, x_max) x [y_min, y_max)``,
so ``x_max - x_min`` is the width in pixels.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace

DETECTION_FIELDS = ("frame_id", "x_min", "y_min", "x_max", "y_max", "confidence", "class_id")


@dataclass(frozen=True)
class Detection:
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    confidence: float
    class_id: int = 0

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate detection box {self.box}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def box(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def shifted(self, dx: float, dy: float) -> "Detection":
        return replace(self, x_min=self.x_min + dx, x_max=self.x_max + dx,
                       y_min=self.y_min + dy, y_max=self.y_max + dy)


@dataclass(frozen=True)
class GroundTruthBox:
    frame_id: str
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    class_id: int = 0

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"box must have positive area, got {self.box}")

    @property
    def box(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min


def as_box(b) -> tuple[float, float, float, float]:
    if hasattr(b, "box"):
        return b.box
    x0, y0, x1, y1 = b
    return (x0, y0, x1, y1)


def area(b) -> float:
    x0, y0, x1, y1 = as_box(b)
    return (x1 - x0) * (y1 - y0)


def center(b) -> tuple[float, float]:
    """Box midpoint; a bare ``(x, y)`` pair is taken as the centre itself."""
    if not hasattr(b, "box") and len(b) == 2:
        return (float(b[0]), float(b[1]))
    x0, y0, x1, y1 = as_box(b)
    return ((x0 + x1) / 2.0, (y0 + y1) / 2.0)


def iou(a, b) -> float:
    """Intersection over union of two boxes; 0 when they do not overlap."""
    ax0, ay0, ax1, ay1 = as_box(a)
    bx0, by0, bx1, by1 = as_box(b)
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    if area_a <= 0 or area_b <= 0:
        raise ValueError("iou is undefined for zero-area boxes")
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (area_a + area_b - inter)


def chebyshev(a, b) -> float:
    """Chebyshev distance between box (or point) centres, ``max(|dx|, |dy|)``.

    Box size does not enter; only the midpoints do.
    """
    ax, ay = center(a)
    bx, by = center(b)
    return max(abs(ax - bx), abs(ay - by))


def write_detections_csv(path, rows) -> None:
    """Write ``(frame_id, Detection)`` pairs, one detection per row."""
    with open(os.fspath(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DETECTION_FIELDS)
        for frame_id, d in rows:
            writer.writerow([frame_id, repr(float(d.x_min)), repr(float(d.y_min)),
                             repr(float(d.x_max)), repr(float(d.y_max)),
                             repr(float(d.confidence)), int(d.class_id)])


def read_detections_csv(path) -> dict[str, list[Detection]]:
    """Read a detection CSV into ``{frame_id: [Detection, ...]}`` preserving row order."""
    out: dict[str, list[Detection]] = {}
    with open(os.fspath(path), newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(DETECTION_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                det = Detection(float(row["x_min"]), float(row["y_min"]),
                                float(row["x_max"]), float(row["y_max"]),
                                float(row["confidence"]), int(row["class_id"]))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}: row {lineno}: {exc}") from None
            out.setdefault(row["frame_id"], []).append(det)
    return out
