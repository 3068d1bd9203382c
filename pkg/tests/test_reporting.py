import csv
import json
import logging
import time

import pytest

from robust_envelopes.batch import run_batch
from robust_envelopes.csv_io import (
    detect_encoding,
    read_text_file,
    write_envelope_csv,
    write_trace_csv,
)
from robust_envelopes.lintopf import solve_ddoe, trace_fr_2d
from robust_envelopes.reporting import (
    emit_run_artifact,
    write_errors_csv,
    write_result_json,
    write_timing_csv,
)
from robust_envelopes.tsro import TsroRound, TsroTrace


def test_run_batch_keeps_input_order():
    def slow_square(x):
        time.sleep(0.01 * (5 - x))
        return x * x

    assert run_batch(slow_square, list(range(5)), max_workers=4) == [0, 1, 4, 9, 16]
    assert run_batch(slow_square, [3], max_workers=4) == [9]


def test_result_json_is_sorted(tmp_path):
    path = write_result_json(tmp_path / "out", {"b": 1, "a": {"d": 2, "c": 3}})
    text = path.read_text(encoding="utf-8")
    assert text.endswith("\n")
    assert text.index('"a"') < text.index('"b"')
    assert text.index('"c"') < text.index('"d"')


def test_run_artifact_name(tmp_path):
    path = emit_run_artifact(tmp_path / "reports", "rdoe", {"x": 1}, "impedance")
    assert path.name.endswith("-rdoe-impedance.json")
    assert json.loads(path.read_text(encoding="utf-8")) == {"x": 1}


def test_errors_csv_columns(tmp_path):
    path = write_errors_csv(tmp_path, [{"node": "2.a", "violation": "0.01"}, "solver failed"])
    with path.open(encoding="utf-8", newline="") as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0]) == ["error", "node", "violation"]
    assert rows[1]["error"] == "solver failed"


def test_envelope_and_timing_csv(tmp_path, twobus_fr):
    result = solve_ddoe(twobus_fr)
    write_envelope_csv(tmp_path / "envelopes.csv", result)
    write_timing_csv(tmp_path, [result.timing_row("ddoe")])
    lines = (tmp_path / "envelopes.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "customer,envelope_kw,q_kvar"
    assert len(lines) == 3
    assert (tmp_path / "timing.csv").read_text(encoding="utf-8").startswith("run,setup_s")


def test_trace_csv(tmp_path):
    trace = TsroTrace([TsroRound(1, -8.5, 1.2e-3, "v3"), TsroRound(2, -8.1, 0.0, "v7")])
    write_trace_csv(tmp_path / "trace.csv", trace)
    lines = (tmp_path / "trace.csv").read_text(encoding="utf-8").splitlines()
    assert lines[1] == "1,-8.500000,1.200e-03,v3"


def test_read_text_file_drops_bom(tmp_path):
    path = tmp_path / "spec.json"
    path.write_bytes(b"\xef\xbb\xbf" + json.dumps({"mode": "det"}).encode("utf-8"))
    assert json.loads(read_text_file(path)) == {"mode": "det"}


def test_read_text_file_handles_utf16(tmp_path):
    path = tmp_path / "net.json"
    path.write_bytes(json.dumps({"name": "Zürich"}).encode("utf-16"))
    assert detect_encoding(path.read_bytes())[0] == "utf-16"
    assert json.loads(read_text_file(path)) == {"name": "Zürich"}


def test_untrusted_guess_falls_back_to_latin1(tmp_path, caplog):
    path = tmp_path / "net.json"
    path.write_bytes('{"name": "Zürich"}'.encode("latin-1"))
    encoding, confidence = detect_encoding(path.read_bytes(), min_confidence=1.0)
    assert encoding == "latin-1"
    assert confidence < 1.0
    with caplog.at_level(logging.WARNING, logger="robust_envelopes.csv_io"):
        assert json.loads(read_text_file(path, min_confidence=1.0)) == {"name": "Zürich"}
    assert "encoding unclear" in caplog.text


def test_confidence_threshold_comes_from_settings(monkeypatch, tmp_path, caplog):
    monkeypatch.setenv("ENVELOPE_ENCODING_CONFIDENCE", "1")
    path = tmp_path / "net.json"
    path.write_bytes('{"name": "Zürich"}'.encode("latin-1"))
    with caplog.at_level(logging.WARNING, logger="robust_envelopes.csv_io"):
        assert json.loads(read_text_file(path)) == {"name": "Zürich"}
    assert "< 1.00" in caplog.text


def test_polygon_plot(tmp_path, twobus_fr):
    pytest.importorskip("matplotlib")
    from robust_envelopes.plotting import plot_polygons

    polygon = trace_fr_2d(twobus_fr, n_directions=8, max_workers=1)
    path = plot_polygons([("dfr", polygon)], tmp_path / "fr.png", (-3.0, -3.0))
    assert path.exists() and path.stat().st_size > 0
