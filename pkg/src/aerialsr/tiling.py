"""Split frames into fixed-size patches and bring patch detections back to frame pixels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import Detection
from .imaging import ImageBuffer

DEFAULT_TILE_SIZE = 512
DEFAULT_NMS_IOU = 0.5


@dataclass(frozen=True)
class TileGrid:
    frame_w: int
    frame_h: int
    tile_size: int
    overlap: int
    tiles: tuple[tuple[int, int], ...]

    def __len__(self):
        return len(self.tiles)

    def __iter__(self):
        return iter(self.tiles)


def _axis_origins(length: int, tile: int, stride: int) -> list[int]:
    origins = [0]
    while origins[-1] + tile < length:
        nxt = origins[-1] + stride
        # last tile is anchored at the frame border
        origins.append(min(nxt, length - tile))
    return origins


def plan_tiles(frame_w: int, frame_h: int, tile_size: int = DEFAULT_TILE_SIZE,
               overlap: int = 0) -> TileGrid:
    """Row-major tile origins covering every pixel of a ``frame_w`` x ``frame_h`` frame.

    Interior tiles step by ``tile_size - overlap``; the last tile in each row
    and column is pushed back so it ends exactly at the frame edge.
    """
    if tile_size <= 0:
        raise ValueError("tile_size must be positive")
    if tile_size > min(frame_w, frame_h):
        raise ValueError(f"tile {tile_size} larger than frame {frame_w}x{frame_h}")
    if not 0 <= overlap < tile_size:
        raise ValueError(f"overlap must be in [0, {tile_size}), got {overlap}")
    stride = tile_size - overlap
    xs = _axis_origins(frame_w, tile_size, stride)
    ys = _axis_origins(frame_h, tile_size, stride)
    tiles = tuple((x, y) for y in ys for x in xs)
    return TileGrid(frame_w, frame_h, tile_size, overlap, tiles)


def extract_tile(frame: ImageBuffer, origin, tile_size: int = DEFAULT_TILE_SIZE) -> ImageBuffer:
    x, y = origin
    if x < 0 or y < 0 or x + tile_size > frame.width or y + tile_size > frame.height:
        raise IndexError(f"tile at {origin} (size {tile_size}) outside frame "
                         f"{frame.width}x{frame.height}")
    return ImageBuffer(np.array(frame.data[y:y + tile_size, x:x + tile_size]))


def remap_detections(dets, origin, sr_factor: float = 1.0) -> list[Detection]:
    """Map detections from an (optionally rescaled) patch into frame coordinates.

    ``sr_factor`` is the total scale between the patch the detector saw and
    the original frame; box coordinates are divided by it, then offset by
    ``origin``.
    """
    if sr_factor <= 0:
        raise ValueError("sr_factor must be positive")
    ox, oy = origin
    out = []
    for d in dets:
        out.append(Detection(ox + d.x_min / sr_factor, oy + d.y_min / sr_factor,
                             ox + d.x_max / sr_factor, oy + d.y_max / sr_factor,
                             d.confidence, d.class_id))
    return out


def merge_frame_detections(dets, nms_iou: float = DEFAULT_NMS_IOU) -> list[Detection]:
    """Greedy NMS over a frame's detections.

    Ordered by descending confidence, ties by ``(x_min, y_min)``; a box is
    dropped when its IoU with an already kept box exceeds ``nms_iou``.
    """
    if not 0.0 <= nms_iou <= 1.0:
        raise ValueError("nms_iou must be in [0, 1]")
    order = sorted(dets, key=lambda d: (-d.confidence, d.x_min, d.y_min, d.x_max, d.y_max))
    if len(order) <= 1:
        return order
    b = np.array([d.box for d in order], dtype=np.float64)
    x1, y1, x2, y2 = b.T
    areas = (x2 - x1) * (y2 - y1)
    alive = np.ones(len(order), dtype=bool)
    kept: list[Detection] = []
    for i in range(len(order)):
        if not alive[i]:
            continue
        kept.append(order[i])
        rest = np.nonzero(alive[i + 1:])[0] + i + 1
        if rest.size == 0:
            break
        iw = np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest])
        ih = np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest])
        inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
        ovr = inter / (areas[i] + areas[rest] - inter)
        alive[rest[ovr > nms_iou]] = False
    return kept
