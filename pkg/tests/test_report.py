import csv
import re

import pytest

from latseq.eval import METRIC_COLUMNS
from latseq.report import line_chart, read_metrics, write_report


def fake_run(path, n, offset=0.0):
    path.mkdir()
    with (path / "metrics.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in range(n):
            w.writerow([r, 0.1 * r + offset, 2.0, 1.0, "", 8 * r, "", 0.0, 1.0])
    return path


def test_report_outputs(tmp_path):
    a = fake_run(tmp_path / "a", 4)
    b = fake_run(tmp_path / "b", 3, 0.5)
    written = write_report([a, b], tmp_path / "out")
    assert len(written) == len(METRIC_COLUMNS)
    rows = list(csv.DictReader((tmp_path / "out" / "combined.csv").open()))
    assert len(rows) == 7 and rows[0]["run"] == "a"
    svg = (tmp_path / "out" / "fitness.svg").read_text()
    lines = re.findall(r'data-run="(\w)"[^>]*points="([^"]*)"', svg)
    assert [(name, len(pts.split())) for name, pts in lines] == [("a", 4), ("b", 3)]
    # a metric with no values draws empty polylines
    assert 'points=""' in (tmp_path / "out" / "d_high.svg").read_text()


def test_duplicate_run_names_are_disambiguated(tmp_path):
    (tmp_path / "x").mkdir()
    a = fake_run(tmp_path / "run", 2)
    b = fake_run(tmp_path / "x" / "run", 2)
    write_report([a, b], tmp_path / "out")
    names = {r["run"] for r in csv.DictReader((tmp_path / "out" / "combined.csv").open())}
    assert names == {"run", "run-2"}


def test_bad_columns(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("round,fitness\n0,1\n")
    with pytest.raises(ValueError, match="missing"):
        read_metrics(p)


def test_line_chart_is_svg():
    svg = line_chart({"r<1>": [(0, 1.0), (1, 1.0)]}, "t&t")
    assert svg.startswith("<svg") and "r&lt;1&gt;" in svg and "t&amp;t" in svg
