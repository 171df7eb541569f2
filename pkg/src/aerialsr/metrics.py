"""Detection matching (IoU and Chebyshev), PR curves, AP and threshold sweeps.

There is a single object class, so mAP is the same number as AP.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import chebyshev, iou  # noqa: F401  (re-exported)

IOU = "iou"
CHEBYSHEV = "chebyshev"
CRITERIA = (IOU, CHEBYSHEV)

DEFAULT_SWEEP = tuple(round(0.1 * i, 1) for i in range(1, 10))


@dataclass(frozen=True)
class EvalConfig:
    criterion: str = IOU
    iou_threshold: float = 0.3
    chebyshev_threshold: float = 200.0
    conf_threshold: float = 0.1

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}, got {self.criterion!r}")
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError("iou_threshold must lie in (0, 1]")
        if self.chebyshev_threshold <= 0:
            raise ValueError("chebyshev_threshold must be positive")
        if not 0.0 <= self.conf_threshold <= 1.0:
            raise ValueError("conf_threshold must lie in [0, 1]")


@dataclass
class Matching:
    """Result of matching one frame. ``pairs`` maps detection index -> GT index."""

    pairs: dict[int, int]
    n_dets: int
    n_gts: int

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return self.n_dets - len(self.pairs)

    @property
    def fn(self) -> int:
        return self.n_gts - len(self.pairs)

    def is_tp(self, det_index: int) -> bool:
        return det_index in self.pairs


def _score_matrix(dets, gts, cfg: EvalConfig):
    """(n_dets, n_gts) rank keys, smaller is better; +inf where the pair fails the threshold."""
    d = np.array([x.box for x in dets], dtype=np.float64).reshape(-1, 4)
    g = np.array([x.box for x in gts], dtype=np.float64).reshape(-1, 4)
    if cfg.criterion == IOU:
        iw = np.minimum(d[:, None, 2], g[None, :, 2]) - np.maximum(d[:, None, 0], g[None, :, 0])
        ih = np.minimum(d[:, None, 3], g[None, :, 3]) - np.maximum(d[:, None, 1], g[None, :, 1])
        inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
        area_d = (d[:, 2] - d[:, 0]) * (d[:, 3] - d[:, 1])
        area_g = (g[:, 2] - g[:, 0]) * (g[:, 3] - g[:, 1])
        score = inter / (area_d[:, None] + area_g[None, :] - inter)
        return np.where(score >= cfg.iou_threshold, -score, np.inf)
    dc = (d[:, :2] + d[:, 2:]) / 2.0
    gc = (g[:, :2] + g[:, 2:]) / 2.0
    dist = np.abs(dc[:, None, :] - gc[None, :, :]).max(axis=2)
    return np.where(dist <= cfg.chebyshev_threshold, dist, np.inf)


def match_detections(dets, gts, cfg: EvalConfig) -> Matching:
    """Greedy one-to-one matching for one frame.

    Detections are visited by descending confidence (input order breaks ties).
    Each claims the unmatched GT with the highest IoU / smallest Chebyshev
    distance among those passing the threshold, lowest GT index on ties.
    Detections are expected to be filtered at ``cfg.conf_threshold`` already.
    """
    pairs: dict[int, int] = {}
    if not dets or not gts:
        return Matching(pairs, len(dets), len(gts))
    keys = _score_matrix(dets, gts, cfg)
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    for i in order:
        row = keys[i]
        j = int(np.argmin(row))  # first minimum, i.e. lowest GT index on ties
        if np.isfinite(row[j]):
            pairs[i] = j
            keys[:, j] = np.inf
    return Matching(pairs, len(dets), len(gts))


def pr_curve(ranked_tp, n_gt: int) -> list[tuple[float, float]]:
    """Cumulative (recall, precision) after each detection of a globally ranked list.

    ``ranked_tp`` holds one boolean per detection, best confidence first.
    With no ground truth, recall is reported as 0.
    """
    curve = []
    tp = fp = 0
    for hit in ranked_tp:
        if hit:
            tp += 1
        else:
            fp += 1
        recall = tp / n_gt if n_gt > 0 else 0.0
        curve.append((recall, tp / (tp + fp)))
    return curve


def average_precision(curve, n_gt: int | None = None) -> float:
    """All-point interpolated AP: area under the monotone precision envelope.

    If ``n_gt`` is 0 the degenerate convention applies: 1.0 for an empty
    curve, else 0.0.
    """
    if n_gt == 0:
        return 1.0 if not curve else 0.0
    if not curve:
        return 0.0
    recalls = [0.0] + [r for r, _ in curve] + [1.0]
    precs = [0.0] + [p for _, p in curve] + [0.0]
    for i in range(len(precs) - 2, -1, -1):
        precs[i] = max(precs[i], precs[i + 1])
    ap = 0.0
    for i in range(len(recalls) - 1):
        if recalls[i + 1] != recalls[i]:
            ap += (recalls[i + 1] - recalls[i]) * precs[i + 1]
    return ap


@dataclass
class CriterionResult:
    criterion: str
    threshold: float
    tp: int
    fp: int
    fn: int
    n_gt: int
    ap: float
    pr_curve: list[tuple[float, float]]
    per_frame: dict[str, dict[str, int]] = field(default_factory=dict)

    @property
    def map(self) -> float:
        return self.ap

    def as_dict(self, include_curve: bool = True):
        d = {"criterion": self.criterion, "threshold": self.threshold, "tp": self.tp,
             "fp": self.fp, "fn": self.fn, "n_gt": self.n_gt, "ap": self.ap, "map": self.ap,
             "per_frame": self.per_frame}
        if include_curve:
            d["pr_curve"] = [list(p) for p in self.pr_curve]
        return d


def _frame_order(dets_by_frame, gts_by_frame):
    return sorted(set(dets_by_frame) | set(gts_by_frame))


def evaluate(dets_by_frame, gts_by_frame, cfg: EvalConfig) -> CriterionResult:
    """Match every frame, rank all kept detections globally, and compute AP.

    Detections below ``cfg.conf_threshold`` are discarded first. Global ties
    in confidence are broken by frame id, then by the detection's position.
    """
    pool = []
    per_frame = {}
    tp = fp = fn = n_gt = 0
    for fid in _frame_order(dets_by_frame, gts_by_frame):
        dets = [d for d in dets_by_frame.get(fid, ()) if d.confidence >= cfg.conf_threshold]
        gts = list(gts_by_frame.get(fid, ()))
        m = match_detections(dets, gts, cfg)
        per_frame[fid] = {"tp": m.tp, "fp": m.fp, "fn": m.fn}
        tp, fp, fn, n_gt = tp + m.tp, fp + m.fp, fn + m.fn, n_gt + len(gts)
        for i, d in enumerate(dets):
            pool.append((-d.confidence, fid, i, m.is_tp(i)))
    pool.sort(key=lambda t: t[:3])
    curve = pr_curve([t[3] for t in pool], n_gt)
    threshold = cfg.iou_threshold if cfg.criterion == IOU else cfg.chebyshev_threshold
    return CriterionResult(cfg.criterion, threshold, tp, fp, fn, n_gt,
                           average_precision(curve, n_gt), curve, per_frame)


def map_sweep(dets_by_frame, gts_by_frame, iou_thresholds=DEFAULT_SWEEP,
              conf_threshold: float = 0.1) -> list[tuple[float, float]]:
    """mAP(IoU) at each threshold over the same detections."""
    thresholds = list(iou_thresholds)
    if thresholds != sorted(thresholds):
        raise ValueError("sweep thresholds must be sorted ascending")
    out = []
    for t in thresholds:
        cfg = EvalConfig(IOU, iou_threshold=t, conf_threshold=conf_threshold)
        out.append((t, evaluate(dets_by_frame, gts_by_frame, cfg).ap))
    return out


@dataclass
class EvalReport:
    """Both criteria over one test set, plus an optional IoU sweep."""

    iou: CriterionResult
    chebyshev: CriterionResult
    sweep: list[tuple[float, float]] = field(default_factory=list)

    def as_dict(self):
        return {
            "map_iou": self.iou.ap,
            "map_che": self.chebyshev.ap,
            "note": "single class: mAP equals AP; matching is greedy one-to-one for both criteria",
            "iou": self.iou.as_dict(),
            "chebyshev": self.chebyshev.as_dict(),
            "sweep": [[t, m] for t, m in self.sweep],
        }


def evaluate_both(dets_by_frame, gts_by_frame, iou_threshold=0.3, chebyshev_threshold=200.0,
                  conf_threshold=0.1, sweep_thresholds=()) -> EvalReport:
    iou_res = evaluate(dets_by_frame, gts_by_frame,
                       EvalConfig(IOU, iou_threshold, chebyshev_threshold, conf_threshold))
    che_res = evaluate(dets_by_frame, gts_by_frame,
                       EvalConfig(CHEBYSHEV, iou_threshold, chebyshev_threshold, conf_threshold))
    sweep = map_sweep(dets_by_frame, gts_by_frame, sweep_thresholds, conf_threshold) if sweep_thresholds else []
    return EvalReport(iou_res, che_res, sweep)
