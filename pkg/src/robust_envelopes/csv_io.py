from __future__ import annotations

import codecs
import csv
import logging
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, Iterable, List, Optional, Sequence, Tuple

import chardet

from .config import DEFAULT_ENCODING_CONFIDENCE, get_settings

if TYPE_CHECKING:
    from .lintopf import EnvelopeResult, FeasibleRegion, Polygon
    from .tsro import TsroTrace


ENVELOPE_COLUMNS = ["customer", "envelope_kw", "q_kvar"]
POLYGON_COLUMNS = ["angle_deg", "p_a_kw", "p_b_kw"]
ERROR_COLUMNS = ["status", "load", "avg_vm_error", "max_vm_error"]
TRACE_COLUMNS = ["round", "master_objective_kw", "violation", "scenario_id"]

logger = logging.getLogger(__name__)


# utf-32 first: its little-endian mark starts with the utf-16 one
_BOMS = (
    (codecs.BOM_UTF32_LE, "utf-32"),
    (codecs.BOM_UTF32_BE, "utf-32"),
    (codecs.BOM_UTF8, "utf-8-sig"),
    (codecs.BOM_UTF16_LE, "utf-16"),
    (codecs.BOM_UTF16_BE, "utf-16"),
)


def detect_encoding(raw: bytes, min_confidence: float = DEFAULT_ENCODING_CONFIDENCE
                    ) -> Tuple[str, float]:
    """(encoding, confidence) for a JSON input file.

    A byte-order mark or clean UTF-8 wins outright. Otherwise chardet's guess is used when
    it reaches ``min_confidence``, and latin-1 (which decodes any byte) when it does not.
    """
    for bom, name in _BOMS:
        if raw.startswith(bom):
            return name, 1.0
    try:
        raw.decode("utf-8")
        return "utf-8", 1.0
    except UnicodeDecodeError:
        pass
    detection = chardet.detect(raw)
    detected = detection.get("encoding")
    confidence = float(detection.get("confidence") or 0.0)
    if detected and confidence >= min_confidence:
        return detected.lower(), confidence
    return "latin-1", confidence


def read_text_file(file_path: Path, min_confidence: Optional[float] = None) -> str:
    """Decode a text input; the detection threshold defaults to ENVELOPE_ENCODING_CONFIDENCE."""
    if min_confidence is None:
        min_confidence = get_settings().encoding_confidence
    raw = file_path.read_bytes()
    encoding, confidence = detect_encoding(raw, min_confidence)
    if confidence < min_confidence:
        logger.warning("%s: text encoding unclear (confidence %.2f < %.2f), decoding as %s",
                       file_path, confidence, min_confidence, encoding)
    else:
        logger.debug("%s: decoding as %s", file_path, encoding)
    return raw.decode(encoding, errors="replace")


def fmt(value: float) -> str:
    return f"{float(value):.6f}"


def write_csv(path: Path, fieldnames: Sequence[str], rows: Iterable[Dict[str, Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(fieldnames))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def write_envelope_csv(path: Path, result: "EnvelopeResult") -> Path:
    rows = [
        {"customer": cid, "envelope_kw": fmt(p), "q_kvar": fmt(result.q1_kvar.get(cid, 0.0))}
        for cid, p in result.envelopes_kw.items()
    ]
    return write_csv(path, ENVELOPE_COLUMNS, rows)


def write_polygon_csv(path: Path, polygon: "Polygon") -> Path:
    rows = [
        {"angle_deg": fmt(angle), "p_a_kw": fmt(pa), "p_b_kw": fmt(pb)}
        for angle, (pa, pb) in zip(polygon.angles_deg, polygon.points)
    ]
    return write_csv(path, POLYGON_COLUMNS, rows)


def write_fr_csv(path: Path, fr: "FeasibleRegion") -> Path:
    """FR rows as flattened H_i (row-major) followed by t_i, with ordering comment lines."""
    ls = fr.system
    n2 = 2 * ls.ordering.m
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        f.write(f"# rows of H_i index vec(E), column-major over the {n2}x{n2} real E\n")
        f.write("# columns of H_i index w = A p + B q - b (real parts then imaginary parts)\n")
        f.write("# node order: " + " ".join(f"{b}.{p.value}" for b, p in ls.ordering.nodes) + "\n")
        writer = csv.writer(f)
        writer.writerow(["row", "bound", "t"] + [f"h{k}" for k in range(n2 * n2 * n2)])
        for i in range(fr.n_rows):
            H = fr.row_matrix(i)
            writer.writerow([i, fr.row_labels[i], repr(float(fr.t[i]))]
                            + [repr(float(v)) for v in H.reshape(-1)])
    return path


def write_error_table_csv(path: Path, rows: List[Dict[str, Any]]) -> Path:
    formatted = [
        {"status": r["status"], "load": r["load"],
         "avg_vm_error": fmt(r["avg_vm_error"]), "max_vm_error": fmt(r["max_vm_error"])}
        for r in rows
    ]
    return write_csv(path, ERROR_COLUMNS, formatted)


def write_trace_csv(path: Path, trace: "TsroTrace") -> Path:
    rows = [
        {"round": r.round, "master_objective_kw": fmt(r.master_objective_kw),
         "violation": f"{r.violation:.3e}", "scenario_id": r.scenario_id}
        for r in trace.rounds
    ]
    return write_csv(path, TRACE_COLUMNS, rows)


BENCH_COLUMNS = ["case", "status", "objective_kw", "setup_median_s", "solve_median_s",
                 "wall_median_s", "repeats"]


def write_bench_csv(path: Path, rows: List[Dict[str, Any]]) -> Path:
    formatted = [
        {"case": r["case"], "status": r["status"], "objective_kw": fmt(r["objective_kw"]),
         "setup_median_s": fmt(r["setup_median_s"]), "solve_median_s": fmt(r["solve_median_s"]),
         "wall_median_s": fmt(r["wall_median_s"]), "repeats": r["repeats"]}
        for r in rows
    ]
    return write_csv(path, BENCH_COLUMNS, formatted)
