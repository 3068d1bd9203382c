#!/usr/bin/env python3
"""
Standalone solver check script

Solves a tiny LP, a tiny second-order cone program and the bundled two-bus
envelope with the backend selected in the environment. It can be run
independently of the main CLI application.

Usage:
    python scripts/solver_check_script.py

Or with another backend:
    ENVELOPE_SOLVER_BACKEND=highs python scripts/solver_check_script.py
"""

import sys
from pathlib import Path

import numpy as np

# Add src to Python path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from robust_envelopes.conic import Affine, ConicProgram, SolverOptions, available_backends, solve
from robust_envelopes.config import get_settings
from robust_envelopes.lintopf import assemble, feasible_region, solve_ddoe
from robust_envelopes.netmodel import load_bundled_network


def check_lp(options: SolverOptions) -> bool:
    """maximize x + y subject to x + 2y <= 4, 3x + y <= 6, x, y >= 0 (optimum 2.8)."""
    program = ConicProgram("lp-check")
    x = program.add_variables(2, "x", nonneg=True)
    xy = Affine.variables(x)
    program.add_inequality(xy.map(np.array([[1.0, 2.0], [3.0, 1.0]])), np.array([4.0, 6.0]))
    program.maximize(xy.sum())
    report = solve(program, options)
    ok = report.optimal and abs(report.objective - 2.8) < 1e-5
    mark = "✅" if ok else "❌"
    print(f"{mark} LP: {report.status.value}, objective {report.objective:.6f} (expected 2.8)")
    return ok


def check_socp(options: SolverOptions) -> bool:
    """maximize x + y subject to ||(x, y)||_2 <= 1 (optimum sqrt(2))."""
    program = ConicProgram("socp-check")
    cone = program.add_soc(3, "c")
    program.add_equality(Affine.variables(cone[:1]), 1.0)
    program.maximize(Affine.variables(cone[1:]).sum())
    try:
        report = solve(program, options)
    except Exception as e:
        print(f"⚠️  SOCP: skipped ({e})")
        return True
    ok = report.optimal and abs(report.objective - np.sqrt(2.0)) < 1e-5
    mark = "✅" if ok else "❌"
    print(f"{mark} SOCP: {report.status.value}, objective {report.objective:.6f} "
          f"(expected {np.sqrt(2.0):.6f})")
    return ok


def check_envelope(options: SolverOptions) -> bool:
    """Deterministic envelope on the bundled two-bus network."""
    fr = feasible_region(assemble(load_bundled_network()))
    result = solve_ddoe(fr, solver=options)
    print(f"{'✅' if result.optimal else '❌'} Two-bus DDOE: {result.status.value}, "
          f"total export {-result.objective_kw:.4f} kW in {result.wall_time:.3f}s")
    for cid, p in result.envelopes_kw.items():
        print(f"    customer {cid}: {p:.4f} kW")
    return result.optimal


def main():
    """Main check function."""
    print("🚀 Conic solver check")
    print("=" * 50)

    try:
        settings = get_settings()
        print(f"🔧 Backend: {settings.solver_backend} (available: {', '.join(available_backends())})")
        print(f"📐 Tolerances: gap {settings.solver_tol:g}, feasibility {settings.solver_feas_tol:g}")
        print(f"📝 Log Level: {settings.log_level}")
    except Exception as e:
        print(f"❌ Configuration Error: {e}")
        print("\nCheck the ENVELOPE_* variables in your .env file.")
        return 1

    options = settings.solver_options()
    results = [check_lp(options), check_socp(options), check_envelope(options)]
    if all(results):
        print("\n🎉 All checks passed! The solver backend is working correctly.")
        return 0
    print("\n💔 Solver check failed. Try another backend or looser tolerances.")
    return 1


if __name__ == "__main__":
    exit(main())
