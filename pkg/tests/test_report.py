import csv
import json

import pytest

from aerialsr.pipeline import PipelineConfig, run_pipeline
from aerialsr.report import FORMATS, emit_report, markdown_table, sweep_svg
from conftest import base_config


def fake_report(method="Blob oracle", sweep=((0.1, 0.9), (0.3, 0.8), (0.5, 0.6), (0.7, 0.3), (0.9, 0.05))):
    curve = [[0.5, 1.0], [0.5, 0.5], [1.0, 0.6667]]
    return {
        "method": method,
        "operational_resolution": "512×512",
        "evaluation": {
            "map_iou": 0.61234, "map_che": 0.75,
            "iou": {"pr_curve": curve}, "chebyshev": {"pr_curve": curve[:2]},
            "sweep": [list(p) for p in sweep],
        },
    }


def test_markdown_columns_and_footnotes():
    md = markdown_table([fake_report()])
    lines = md.splitlines()
    assert lines[0] == "| Method | Operational Resolution | mAP(IoU) | mAP(Che) |"
    assert lines[2] == "| Blob oracle | 512×512 | 0.612 | 0.750 |"
    assert "- Single class: mAP equals AP." in lines
    assert any("one-to-one" in line for line in lines)


def test_svg_has_one_marker_per_threshold():
    reps = [fake_report("A"), fake_report("B")]
    svg = sweep_svg([(r["method"], r["evaluation"]["sweep"]) for r in reps])
    assert svg.count('<g class="series"') == 2
    assert svg.count('class="pt"') == 10
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")


def test_svg_escapes_labels():
    svg = sweep_svg([('a<b & "c"', [(0.5, 0.5)])])
    assert "a&lt;b &amp;" in svg and "<b" not in svg.replace("<svg", "")


def test_empty_sweep_skips_svg(tmp_path):
    written = emit_report(fake_report(sweep=()), FORMATS, tmp_path)
    assert written["svg"] is None
    assert not list(tmp_path.glob("*.svg"))
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["artifacts"]["notes"] == ["sweep is empty: SVG plot not emitted"]
    assert doc["artifacts"]["files"]["svg"] is None


def test_csv_contents(tmp_path):
    emit_report([fake_report("A"), fake_report("B")], ["csv"], tmp_path, stem="x")
    rows = list(csv.DictReader(open(tmp_path / "x_pr_curve.csv")))
    assert len(rows) == 10
    assert rows[0] == {"method": "A", "criterion": "iou", "rank": "1", "recall": "0.5", "precision": "1.0"}
    sweep = list(csv.DictReader(open(tmp_path / "x_sweep.csv")))
    assert [r["iou_threshold"] for r in sweep[:5]] == ["0.1", "0.3", "0.5", "0.7", "0.9"]


def test_only_requested_formats(tmp_path):
    written = emit_report(fake_report(), ["markdown"], tmp_path)
    assert written == {"markdown": "report.md"}
    assert sorted(p.name for p in tmp_path.iterdir()) == ["report.md"]


def test_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        emit_report(fake_report(), ["pdf"], tmp_path)


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_report(fake_report(), FORMATS, blocker / "sub")


def test_real_run_is_byte_stable(small_dataset, tmp_path):
    cfg = PipelineConfig.from_dict(base_config(small_dataset, degrade_factor=2, sr_backend="bicubic",
                                               eval={"sweep": [0.1, 0.3, 0.5, 0.7, 0.9]}))
    outs = []
    for k in range(2):
        d = tmp_path / str(k)
        emit_report(run_pipeline(cfg), FORMATS, d)
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert outs[0] == outs[1]
    assert sorted(outs[0]) == ["report.json", "report.md", "report_pr_curve.csv",
                               "report_sweep.csv", "report_sweep.svg"]
    assert outs[0]["report_sweep.svg"].count(b'class="pt"') == 5
    assert "64×64 → 128×128".encode() in outs[0]["report.md"]


def test_table_row_for_degrade_2_bicubic(tmp_path):
    cfg = PipelineConfig.from_dict({"manifest": "m", "degrade_factor": 2, "sr_backend": "bicubic"})
    rep = fake_report(method=cfg.method_label())
    rep["operational_resolution"] = cfg.operational_resolution()
    emit_report(rep, ["markdown"], tmp_path)
    assert "| Blob oracle + Bicubic | 256×256 → 512×512 |" in (tmp_path / "report.md").read_text()
