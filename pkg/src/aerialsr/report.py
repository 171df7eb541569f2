"""Render pipeline reports as JSON, Markdown tables, CSV series and an SVG sweep plot."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from xml.sax.saxutils import escape

FORMATS = ("json", "markdown", "csv", "svg")

TABLE_COLUMNS = ("Method", "Operational Resolution", "mAP(IoU)", "mAP(Che)")
FOOTNOTES = (
    "Single class: mAP equals AP.",
    "mAP(Che) uses greedy one-to-one matching on box centres, like mAP(IoU).",
)

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _num(x: float) -> str:
    return f"{x:.3f}"


def markdown_table(reports) -> str:
    lines = ["| " + " | ".join(TABLE_COLUMNS) + " |", "|" + "---|" * len(TABLE_COLUMNS)]
    for r in reports:
        ev = r["evaluation"]
        lines.append(f"| {r['method']} | {r['operational_resolution']} | "
                     f"{_num(ev['map_iou'])} | {_num(ev['map_che'])} |")
    lines.append("")
    lines.extend(f"- {n}" for n in FOOTNOTES)
    return "\n".join(lines) + "\n"


def write_curve_csv(path, reports) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "criterion", "rank", "recall", "precision"])
        for r in reports:
            for crit in ("iou", "chebyshev"):
                for k, (rec, prec) in enumerate(r["evaluation"][crit]["pr_curve"], start=1):
                    w.writerow([r["method"], crit, k, repr(float(rec)), repr(float(prec))])


def write_sweep_csv(path, reports) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "iou_threshold", "map"])
        for r in reports:
            for t, m in r["evaluation"]["sweep"]:
                w.writerow([r["method"], repr(float(t)), repr(float(m))])


def sweep_svg(series, width: int = 640, height: int = 400) -> str:
    """Line plot of mAP against IoU threshold; ``series`` is ``[(label, [(t, map), ...]), ...]``.

    Output depends only on the input values, so identical data gives identical bytes.
    """
    left, right, top, bottom = 60, 180, 20, 50
    pw, ph = width - left - right, height - top - bottom

    def px(t):
        return left + t * pw

    def py(m):
        return top + (1.0 - m) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    for i in range(11):
        v = i / 10
        out.append(f'<line x1="{px(v):.2f}" y1="{top + ph}" x2="{px(v):.2f}" y2="{top + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{px(v):.2f}" y="{top + ph + 16}" text-anchor="middle">{v:.1f}</text>')
        out.append(f'<line x1="{left - 4}" y1="{py(v):.2f}" x2="{left}" y2="{py(v):.2f}" stroke="black"/>')
        out.append(f'<line x1="{left}" y1="{py(v):.2f}" x2="{left + pw}" y2="{py(v):.2f}" stroke="#e0e0e0"/>')
        out.append(f'<text x="{left - 8}" y="{py(v) + 4:.2f}" text-anchor="end">{v:.1f}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 10}" text-anchor="middle">IoU threshold</text>')
    out.append(f'<text x="15" y="{top + ph / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 15 {top + ph / 2:.2f})">mAP</text>')
    for k, (label, points) in enumerate(series):
        color = _PALETTE[k % len(_PALETTE)]
        coords = " ".join(f"{px(t):.2f},{py(m):.2f}" for t, m in points)
        out.append(f'<g class="series" data-label="{escape(label, {chr(34): "&quot;"})}">')
        if len(points) > 1:
            out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for t, m in points:
            out.append(f'<circle class="pt" cx="{px(t):.2f}" cy="{py(m):.2f}" r="3" fill="{color}"/>')
        out.append("</g>")
        ly = top + 14 + 18 * k
        out.append(f'<line x1="{left + pw + 12}" y1="{ly - 4}" x2="{left + pw + 30}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 36}" y="{ly}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(reports, formats=FORMATS, out_dir=".", stem: str = "report") -> dict[str, str | None]:
    """Write the requested renderings of one or more reports into ``out_dir``.

    Returns a map of format -> written file name. The SVG is skipped when no
    report carries a sweep, and the JSON document says so.
    """
    if isinstance(reports, dict):
        reports = [reports]
    unknown = sorted(set(formats) - set(FORMATS))
    if unknown:
        raise ValueError(f"unknown report formats {unknown}; choose from {FORMATS}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from None

    written: dict[str, str | None] = {}
    series = [(r["method"], [tuple(p) for p in r["evaluation"]["sweep"]]) for r in reports]
    series = [s for s in series if s[1]]
    notes = []
    if "markdown" in formats:
        (out / f"{stem}.md").write_text(markdown_table(reports), encoding="utf-8")
        written["markdown"] = f"{stem}.md"
    if "csv" in formats:
        write_curve_csv(out / f"{stem}_pr_curve.csv", reports)
        write_sweep_csv(out / f"{stem}_sweep.csv", reports)
        written["csv"] = f"{stem}_pr_curve.csv"
        written["csv_sweep"] = f"{stem}_sweep.csv"
    if "svg" in formats:
        if series:
            (out / f"{stem}_sweep.svg").write_text(sweep_svg(series), encoding="utf-8")
            written["svg"] = f"{stem}_sweep.svg"
        else:
            written["svg"] = None
            notes.append("sweep is empty: SVG plot not emitted")
    if "json" in formats:
        written["json"] = f"{stem}.json"
        doc = reports[0] if len(reports) == 1 else {"reports": reports}
        doc = {**doc, "artifacts": {"files": dict(sorted(written.items())), "notes": notes}}
        (out / f"{stem}.json").write_text(
            json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    return written
