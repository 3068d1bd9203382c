from __future__ import annotations

import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

from .csv_io import write_csv


TIMING_COLUMNS = ["run", "setup_s", "solve_s", "wall_s", "iterations"]


def _ts() -> str:
    return datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")


def emit_run_artifact(reports_dir: Path, action: str, payload: Dict[str, Any],
                      label: Optional[str] = None) -> Path:
    """Timestamped JSON record of a run under the reports directory."""
    reports_dir.mkdir(parents=True, exist_ok=True)
    suffix = f"-{label}" if label else ""
    path = reports_dir / f"{_ts()}-{action}{suffix}.json"
    with path.open("w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, indent=2, default=str)
    return path


def write_result_json(out_dir: Path, payload: Dict[str, Any]) -> Path:
    """result.json: sorted keys and no timings, so repeated runs are byte-identical."""
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "result.json"
    with path.open("w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")
    return path


def write_timing_csv(out_dir: Path, rows: Iterable[Dict[str, Any]]) -> Path:
    return write_csv(out_dir / "timing.csv", TIMING_COLUMNS, rows)


def write_errors_csv(out_dir: Path, errors: Iterable[Any]) -> Path:
    rows: List[Dict[str, Any]] = []
    for e in errors:
        rows.append(e if isinstance(e, dict) else {"error": str(e)})
    fieldnames: List[str] = sorted({k for row in rows for k in row.keys()}) or ["error"]
    return write_csv(out_dir / "errors.csv", fieldnames, rows)
