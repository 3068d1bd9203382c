from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Tuple, TypeVar

from dotenv import load_dotenv
from rich.logging import RichHandler

from .conic import SolverOptions, available_backends


T = TypeVar("T")

# chardet guesses below this confidence are not trusted
DEFAULT_ENCODING_CONFIDENCE = 0.7


class ConfigError(RuntimeError):
    """Raised when an environment variable holds a malformed value."""


@dataclass(frozen=True)
class Settings:
    solver_tol: float = 1e-8
    solver_feas_tol: float = 1e-8
    solver_max_iter: int = 200
    solver_backend: str = "bundled"
    max_workers: int = 4
    lin_slack: float = 0.02
    reports_dir: Path = Path("reports")
    encoding_confidence: float = DEFAULT_ENCODING_CONFIDENCE
    log_level: str = "INFO"

    def solver_options(self) -> SolverOptions:
        return SolverOptions(
            feas_tol=self.solver_feas_tol,
            gap_tol=self.solver_tol,
            max_iter=self.solver_max_iter,
            backend=self.solver_backend,
        )


def _positive_float(raw: str) -> float:
    value = float(raw)
    if not value > 0:
        raise ValueError("must be positive")
    return value


def _positive_int(raw: str) -> int:
    value = int(raw)
    if value < 1:
        raise ValueError("must be >= 1")
    return value


def _fraction(raw: str) -> float:
    value = float(raw)
    if not 0 < value <= 1:
        raise ValueError("must be in (0, 1]")
    return value


def _backend(raw: str) -> str:
    key = raw.strip().lower()
    if key not in available_backends():
        raise ValueError(f"unknown backend (available: {', '.join(available_backends())})")
    return key


def _log_level(raw: str) -> str:
    level = raw.strip().upper()
    if level not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
        raise ValueError("unknown log level")
    return level


def get_settings() -> Settings:
    """Load settings from environment or .env file."""
    load_dotenv(override=False)
    defaults = Settings()
    fields: List[Tuple[str, str, Callable[[str], object], object]] = [
        ("solver_tol", "ENVELOPE_SOLVER_TOL", _positive_float, defaults.solver_tol),
        ("solver_feas_tol", "ENVELOPE_SOLVER_FEAS_TOL", _positive_float, defaults.solver_feas_tol),
        ("solver_max_iter", "ENVELOPE_SOLVER_MAX_ITER", _positive_int, defaults.solver_max_iter),
        ("solver_backend", "ENVELOPE_SOLVER_BACKEND", _backend, defaults.solver_backend),
        ("max_workers", "ENVELOPE_MAX_WORKERS", _positive_int, defaults.max_workers),
        ("lin_slack", "ENVELOPE_LIN_SLACK", _positive_float, defaults.lin_slack),
        ("reports_dir", "ENVELOPE_REPORTS_DIR", Path, defaults.reports_dir),
        ("encoding_confidence", "ENVELOPE_ENCODING_CONFIDENCE", _fraction,
         defaults.encoding_confidence),
        ("log_level", "LOG_LEVEL", _log_level, defaults.log_level),
    ]

    values: Dict[str, object] = {}
    bad: List[str] = []
    for attr, env, parse, default in fields:
        raw = os.environ.get(env, "").strip()
        if not raw:
            values[attr] = default
            continue
        try:
            values[attr] = parse(raw)
        except ValueError as exc:
            bad.append(f"{env}={raw!r} ({exc})")

    if bad:
        raise ConfigError(f"Invalid environment variables: {'; '.join(bad)}.")
    return Settings(**values)  # type: ignore[arg-type]


def configure_logging(level: str = "INFO") -> None:
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=True, show_path=False)],
        force=True,
    )
