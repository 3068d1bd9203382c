"""Scenario-generation baseline for impedance uncertainty.

A master problem keeps one copy of the network state per scenario; a subproblem searches
the vertices of the impedance box for the realization that the current envelope violates
most. The loop stops when no vertex is violated beyond the tolerance.
"""
from __future__ import annotations

import itertools
import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .batch import run_batch
from .conic import Affine, ConicProgram, SolverOptions, SolverStatus, solve
from .lintopf import (
    DecisionVars,
    EnvelopeOptions,
    EnvelopeResult,
    FeasibleRegion,
    build_envelope_program,
    envelope_from_report,
)
from .norms import NormKind
from .uncertainty import UncertainComponent, UnsupportedUncertaintyError


logger = logging.getLogger(__name__)

MAX_BOX_PARAMETERS = 16


@dataclass
class ScenarioSet:
    realizations: List[np.ndarray]
    ids: List[str]

    @classmethod
    def nominal(cls, comp: UncertainComponent) -> "ScenarioSet":
        center = comp.expand(comp.balls[0].center)[0]
        return cls([center], ["E0"])

    def add(self, vec_e: np.ndarray, scenario_id: str) -> None:
        self.realizations.append(np.asarray(vec_e, dtype=float))
        self.ids.append(scenario_id)

    def __len__(self) -> int:
        return len(self.realizations)


@dataclass
class TsroRound:
    round: int
    master_objective_kw: float
    violation: float
    scenario_id: str


@dataclass
class TsroTrace:
    rounds: List[TsroRound] = field(default_factory=list)
    terminated: bool = False
    reason: str = ""

    @property
    def final_violation(self) -> float:
        return self.rounds[-1].violation if self.rounds else float("nan")

    def to_payload(self):
        return {
            "terminated": self.terminated,
            "reason": self.reason,
            "rounds": [
                {"round": r.round, "master_objective_kw": round(r.master_objective_kw, 9),
                 "violation": r.violation, "scenario_id": r.scenario_id}
                for r in self.rounds
            ],
        }


def box_vertices(comp: UncertainComponent) -> np.ndarray:
    """Full vec(E) at every vertex of a single Inf-norm ball, in lexicographic sign order."""
    if len(comp.balls) != 1 or comp.balls[0].norm is not NormKind.LINF:
        raise UnsupportedUncertaintyError("scenario generation needs a single Inf-norm box on E")
    ball = comp.balls[0]
    k = ball.latent_dim
    if k > MAX_BOX_PARAMETERS:
        raise UnsupportedUncertaintyError(
            f"box has {k} parameters ({2 ** k} vertices); at most {MAX_BOX_PARAMETERS} supported"
        )
    if ball.radius == 0:
        return comp.expand(ball.center)
    latent = np.array(list(itertools.product((-ball.radius, ball.radius), repeat=k)))
    return comp.expand(ball.center[None, :] + latent @ ball.map.T)


def _state_block(program: ConicProgram, fr: FeasibleRegion, w: Affine, vec_e: np.ndarray,
                 tag: str) -> None:
    ls = fr.system
    n2 = ls.C.shape[0]
    E = vec_e.reshape(n2, n2, order="F")
    l_idx = program.add_variables(n2, f"{tag}.l")
    v_idx = program.add_variables(n2, f"{tag}.v")
    l = Affine.variables(l_idx)
    v = Affine.variables(v_idx)
    program.add_equality(l.map(ls.C) + w, 0.0)
    program.add_equality(v.map(ls.D) + l.map(E), ls.d)
    program.add_inequality(v.map(ls.F), ls.f, name=f"{tag}.vm")


def tsro_master(fr: FeasibleRegion, scenarios: ScenarioSet,
                options: Optional[EnvelopeOptions] = None,
                solver: Optional[SolverOptions] = None) -> EnvelopeResult:
    """Envelope feasible for every scenario, with a state copy per scenario."""
    if not len(scenarios):
        raise ValueError("scenario set is empty")
    options = options or EnvelopeOptions()
    started = time.perf_counter()

    def region(program: ConicProgram, dv: DecisionVars) -> None:
        w = fr.w_affine(dv)
        for sid, vec_e in zip(scenarios.ids, scenarios.realizations):
            _state_block(program, fr, w, vec_e, sid)

    program, dv = build_envelope_program(fr, options, region=region, name="tsro-master")
    report = solve(program, solver)
    return envelope_from_report(report, fr, dv, options, "tsro", time.perf_counter() - started)


def _vertex_violation(fr: FeasibleRegion, w_value: np.ndarray, vec_e: np.ndarray,
                      solver: Optional[SolverOptions]) -> float:
    """Least total slack that makes the state equations and voltage rows hold at ``vec_e``."""
    ls = fr.system
    n2 = ls.C.shape[0]
    n_f = ls.F.shape[0]
    E = vec_e.reshape(n2, n2, order="F")
    program = ConicProgram("tsro-inner")
    l = Affine.variables(program.add_variables(n2, "l"))
    v = Affine.variables(program.add_variables(n2, "v"))
    t_pos = Affine.variables(program.add_variables(n2, "t+", nonneg=True))
    t_neg = Affine.variables(program.add_variables(n2, "t-", nonneg=True))
    s_pos = Affine.variables(program.add_variables(n2, "s+", nonneg=True))
    s_neg = Affine.variables(program.add_variables(n2, "s-", nonneg=True))
    u = Affine.variables(program.add_variables(n_f, "u", nonneg=True))
    program.add_equality(l.map(ls.C) + t_pos - t_neg, -w_value)
    program.add_equality(v.map(ls.D) + l.map(E) + s_pos - s_neg, ls.d)
    program.add_inequality(v.map(ls.F) - u, ls.f, name="vm")
    total = (t_pos + t_neg).sum() + (s_pos + s_neg).sum() + u.sum()
    program.maximize(-total)
    report = solve(program, solver)
    if not report.optimal:
        logger.warning("inner LP ended %s", report.status.value)
        return float("inf")
    return max(-report.objective, 0.0)


def tsro_subproblem(fr: FeasibleRegion, result: EnvelopeResult, comp: UncertainComponent,
                    solver: Optional[SolverOptions] = None,
                    max_workers: int = 4) -> Tuple[float, np.ndarray, int]:
    """Worst vertex for the envelope in ``result``: (violation, vec(E), vertex index)."""
    ls = fr.system
    ids = ls.ordering.active
    q2 = (np.array([result.q2_kvar[c] for c in ls.ordering.passive])
          if result.q2_kvar else fr.q2)
    w_value = ls.injection(result.p1_array(ids), result.q1_array(ids), fr.p2, q2)
    candidates = box_vertices(comp)
    violations = run_batch(lambda e: _vertex_violation(fr, w_value, e, solver), list(candidates),
                           max_workers=max_workers, description="Scanning vertices...")
    worst = int(np.argmax(violations))
    return float(violations[worst]), candidates[worst], worst


def tsro_solve(
    fr: FeasibleRegion,
    comp: UncertainComponent,
    options: Optional[EnvelopeOptions] = None,
    solver: Optional[SolverOptions] = None,
    tol: float = 1e-7,
    max_rounds: int = 50,
    max_workers: int = 4,
) -> Tuple[EnvelopeResult, TsroTrace]:
    """Alternate master and subproblem until no box vertex is violated beyond ``tol``."""
    box_vertices(comp)
    scenarios = ScenarioSet.nominal(comp)
    trace = TsroTrace()
    result: Optional[EnvelopeResult] = None
    started = time.perf_counter()
    for r in range(1, max_rounds + 1):
        result = tsro_master(fr, scenarios, options, solver)
        if not result.optimal:
            trace.reason = f"master {result.status.value}"
            logger.warning("TSRO round %d: %s", r, trace.reason)
            break
        violation, vec_e, index = tsro_subproblem(fr, result, comp, solver, max_workers)
        sid = f"v{index}"
        trace.rounds.append(TsroRound(r, result.objective_kw, violation, sid))
        logger.info("TSRO round %d: objective %.6f kW, worst violation %.3e at %s",
                    r, result.objective_kw, violation, sid)
        if violation <= tol:
            trace.terminated = True
            trace.reason = "no violated vertex"
            break
        if sid in scenarios.ids:
            trace.reason = f"vertex {sid} repeated with violation {violation:.3e}"
            logger.warning("TSRO stalled: %s", trace.reason)
            break
        scenarios.add(vec_e, sid)
    else:
        trace.reason = f"round limit {max_rounds} reached"
        logger.warning("TSRO: %s", trace.reason)

    assert result is not None
    result.setup_time = time.perf_counter() - started - result.solve_time
    if result.status == SolverStatus.OPTIMAL and not trace.terminated:
        result.message = trace.reason
    return result, trace
