import csv
import io
import re
import xml.etree.ElementTree as ET

import pytest

from estfuse.report import ResultTable, atomic_write, fmt, line_plot, plot, write_table

SVG = "{http://www.w3.org/2000/svg}"


def curve_table(rows):
    return ResultTable("curve", rows)


def test_float_format_round_trips():
    for x in (0.1, 1 / 3, 1e-300, 123456789.123456789, -2.5e17):
        assert float(fmt(x)) == x
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(True) == "true" and fmt(None) == "" and fmt(float("nan")) == "nan"


def test_csv_layout(tmp_path):
    t = curve_table([("s,1", 0.0, "core", 0.5, 0.9, 0.01)])
    path = write_table(t, tmp_path)
    raw = path.read_bytes()
    assert b"\r" not in raw
    rows = list(csv.reader(io.StringIO(raw.decode("utf-8"))))
    assert rows[0] == list(t.columns)
    assert rows[1][0] == "s,1"
    assert raw.splitlines()[1].startswith(b'"s,1",')


def test_row_width_checked():
    with pytest.raises(ValueError):
        curve_table([(1, 2)]).to_csv()


def test_atomic_write_leaves_no_temp(tmp_path):
    atomic_write(tmp_path / "a.txt", "x")
    atomic_write(tmp_path / "a.txt", "y")
    assert [p.name for p in tmp_path.iterdir()] == ["a.txt"]
    assert (tmp_path / "a.txt").read_text() == "y"


def test_single_point_plot():
    svg = plot(curve_table([("s", 0.0, "core", 1.0, 0.8, 0.1)]))
    root = ET.fromstring(svg)
    assert len(root.findall(f"{SVG}circle")) == 1
    assert not root.findall(f"{SVG}polyline")


def test_empty_table_errors():
    with pytest.raises(ValueError):
        plot(curve_table([]))
    with pytest.raises(ValueError):
        plot(curve_table([("s", 0.0, "core", 1.0, 0.8, 0.1)]), "pie")


def test_curve_plot_series_and_reference():
    rows = [("s", mu, r, 1.0, rel, 0.0) for mu in (0.0, 0.1, 0.2)
            for r, rel in (("core", 0.8 + mu), ("hypothesis_test", 0.9 + mu))]
    svg = plot(curve_table(rows))
    root = ET.fromstring(svg)
    assert len(root.findall(f"{SVG}polyline")) == 2
    assert "reference relative MSE 1 y=1" in svg
    data = re.findall(r"<!-- data series=(\S+) points=([^>]*) -->", svg)
    assert [d[0] for d in data] == ["core", "hypothesis_test"]
    assert data[0][1].split()[1] == "0.10000000000000001,0.90000000000000002"


def test_sweep_plot_reference_is_unbiased_rmse():
    rows = [(g, 1.0, n, 4.9, c, 0, 0, 0, 0, 0, 0, 0, 0)
            for n in (10000, 100000) for g, c in ((0.0, 4.2), (1.0, 5.0))]
    svg = plot(ResultTable("sweep", rows))
    assert "reference unbiased RMSE x 1000 y=4.9000000000000004" in svg
    assert svg.count("<polyline") == 2


def test_plot_deterministic():
    rows = [("s", mu / 10, "core", 1.0, 0.9, 0.0) for mu in range(5)]
    assert plot(curve_table(rows)) == plot(curve_table(list(rows)))


def test_line_plot_requires_points():
    with pytest.raises(ValueError):
        line_plot({}, "t", "x", "y")
