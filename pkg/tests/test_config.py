from pathlib import Path

import pytest

from robust_envelopes.config import ConfigError, Settings, get_settings


def test_defaults(monkeypatch):
    monkeypatch.delenv("ENVELOPE_REPORTS_DIR")
    settings = get_settings()
    assert settings == Settings()
    assert settings.reports_dir == Path("reports")
    options = settings.solver_options()
    assert options.backend == "bundled"
    assert options.gap_tol == 1e-8


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("ENVELOPE_SOLVER_TOL", "1e-6")
    monkeypatch.setenv("ENVELOPE_SOLVER_BACKEND", " HiGHS ")
    monkeypatch.setenv("ENVELOPE_MAX_WORKERS", "2")
    monkeypatch.setenv("ENVELOPE_LIN_SLACK", "0.05")
    monkeypatch.setenv("LOG_LEVEL", "debug")
    settings = get_settings()
    assert settings.solver_tol == 1e-6
    assert settings.solver_backend == "highs"
    assert settings.max_workers == 2
    assert settings.lin_slack == 0.05
    assert settings.log_level == "DEBUG"
    assert settings.solver_options().gap_tol == 1e-6


def test_every_bad_variable_is_reported(monkeypatch):
    monkeypatch.setenv("ENVELOPE_SOLVER_TOL", "-1")
    monkeypatch.setenv("ENVELOPE_MAX_WORKERS", "many")
    monkeypatch.setenv("LOG_LEVEL", "LOUD")
    with pytest.raises(ConfigError) as excinfo:
        get_settings()
    message = str(excinfo.value)
    for name in ("ENVELOPE_SOLVER_TOL", "ENVELOPE_MAX_WORKERS", "LOG_LEVEL"):
        assert name in message


def test_unknown_backend(monkeypatch):
    monkeypatch.setenv("ENVELOPE_SOLVER_BACKEND", "gurobi")
    with pytest.raises(ConfigError, match="unknown backend"):
        get_settings()


def test_blank_values_fall_back(monkeypatch):
    monkeypatch.setenv("ENVELOPE_SOLVER_MAX_ITER", "   ")
    assert get_settings().solver_max_iter == Settings().solver_max_iter


def test_encoding_confidence(monkeypatch):
    assert get_settings().encoding_confidence == 0.7
    monkeypatch.setenv("ENVELOPE_ENCODING_CONFIDENCE", "0.9")
    assert get_settings().encoding_confidence == 0.9
    monkeypatch.setenv("ENVELOPE_ENCODING_CONFIDENCE", "1.5")
    with pytest.raises(ConfigError, match="ENVELOPE_ENCODING_CONFIDENCE"):
        get_settings()
