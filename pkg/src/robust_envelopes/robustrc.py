"""Robust counterparts of the feasible-region rows.

Each row ``g_i' E C^-1 w <= t_i`` must hold for every realization in the uncertainty set.
The worst case is a support function; for an intersection of balls it is written with
split directions (one per ball) whose sum is the row's sensitivity, plus one dual-norm
epigraph per ball. L1 and Inf-norm epigraphs stay linear, L2 becomes a second-order cone.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .conic import Affine, ConicProgram, SolverOptions, add_norm_epigraph, solve
from .lintopf import (
    DecisionVars,
    EnvelopeOptions,
    EnvelopeResult,
    FeasibleRegion,
    RegionBuilder,
    SupportFn,
    add_fr_rows,
    build_envelope_program,
    envelope_from_report,
)
from .models import EnvelopeMode
from .uncertainty import (
    UncertainComponent,
    UncertaintyError,
    UncertaintyModel,
    UnsupportedUncertaintyError,
    extreme_points,
)


logger = logging.getLogger(__name__)

MAX_BILINEAR_LATENT = 64

Term = Tuple[Affine, UncertainComponent]


@dataclass
class RobustProblem:
    mode: EnvelopeMode
    fr: FeasibleRegion
    model: UncertaintyModel
    options: EnvelopeOptions
    program: ConicProgram
    dv: DecisionVars
    setup_time: float

    @property
    def size(self) -> Tuple[int, int]:
        return self.program.n_vars, self.program.n_equalities


def add_robust_row(
    program: ConicProgram,
    base: Affine,
    terms: Sequence[Term],
    upper: float,
    name: str,
) -> None:
    """base + sum over terms of sup_{e in set} e'h <= upper."""
    lhs = base
    for t, (h, comp) in enumerate(terms):
        balls = comp.balls
        if len(balls) == 1:
            parts = [h]
        else:
            tau = program.add_variables(h.rows, f"{name}.tau{t}")
            parts = [h - Affine.variables(tau), Affine.variables(tau)]
        for j, (ball, part) in enumerate(zip(balls, parts)):
            lhs = lhs + part.dot(ball.center)
            if ball.radius == 0:
                continue
            bound = program.add_variables(1, f"{name}.a{t}{j}")
            add_norm_epigraph(program, ball.norm.dual, part.map(ball.map.T),
                              Affine.variables(bound), name=f"{name}.n{t}{j}")
            lhs = lhs + Affine.variables(bound) * ball.radius
    program.add_inequality(lhs, upper, name=name)


def _split_matrix(fr: FeasibleRegion, comp: UncertainComponent) -> Tuple[np.ndarray, np.ndarray]:
    """(row, column) of E for every uncertain vec(E) index."""
    n2 = fr.system.E.shape[0]
    return comp.indices % n2, comp.indices // n2


def _impedance_rows(program: ConicProgram, fr: FeasibleRegion, comp: UncertainComponent,
                    w: Affine, tag: str) -> None:
    """Rows robust against E, for the injection vector ``w``."""
    rows, cols = _split_matrix(fr, comp)
    e_fixed = fr.system.E.copy()
    e_fixed[rows, cols] = 0.0
    y = w.map(fr.c_inv)
    fixed = y.map(fr.G @ e_fixed)
    y_uncertain = y.take(cols)
    for i in range(fr.n_rows):
        h = y_uncertain.scale_rows(fr.G[i, rows])
        add_robust_row(program, fixed.take([i]), [(h, comp)], fr.t[i], name=f"{tag}[{i}]")


def _require(model: UncertaintyModel, name: str) -> UncertainComponent:
    try:
        return model.component(name)
    except UncertaintyError as exc:
        raise UncertaintyError(f"{exc}; this mode needs it") from exc


def _p2_support(fr: FeasibleRegion, comp: Optional[UncertainComponent]) -> Optional[SupportFn]:
    if comp is None:
        return None
    fixed = fr.p2.copy()
    fixed[comp.indices] = 0.0

    def support_fn(g: np.ndarray) -> float:
        return float(g @ fixed) + comp.support(g[comp.indices])

    return support_fn


def impedance_region(fr: FeasibleRegion, model: UncertaintyModel) -> RegionBuilder:
    """Rows robust against impedance uncertainty, demand at forecast."""
    comp = _require(model, "E")

    def region(program: ConicProgram, dv: DecisionVars) -> None:
        if comp.is_nominal_point:
            add_fr_rows(program, fr, dv)
        else:
            _impedance_rows(program, fr, comp, fr.w_affine(dv), "rfr")

    return region


def demand_region(fr: FeasibleRegion, model: UncertaintyModel,
                  options: EnvelopeOptions) -> RegionBuilder:
    """Rows robust against passive demand uncertainty, E at nominal."""
    comp_p = model.demand_p
    comp_q = model.demand_q if "q2" not in options.q_control else None
    if comp_p is None and comp_q is None:
        raise UncertaintyError("demand mode needs a p2 or q2 component")
    ls = fr.system
    sens = fr.nominal_map

    def region(program: ConicProgram, dv: DecisionVars) -> None:
        if all(c is None or c.is_nominal_point for c in (comp_p, comp_q)):
            add_fr_rows(program, fr, dv)
            return
        p2 = fr.p2.copy()
        q2 = fr.q2.copy()
        if comp_p is not None:
            p2[comp_p.indices] = 0.0
        if comp_q is not None:
            q2[comp_q.indices] = 0.0
        w = fr.w_affine(dv, p2=p2)
        if dv.q2 is None:
            w = w + ls.B2 @ (q2 - fr.q2)
        base = w.map(sens)
        g_p = sens @ ls.A2
        g_q = sens @ ls.B2
        for i in range(fr.n_rows):
            terms: List[Term] = []
            if comp_p is not None:
                terms.append((Affine.constant(g_p[i, comp_p.indices]), comp_p))
            if comp_q is not None:
                terms.append((Affine.constant(g_q[i, comp_q.indices]), comp_q))
            add_robust_row(program, base.take([i]), terms, fr.t[i], name=f"dfr[{i}]")

    return region


def bilinear_region(fr: FeasibleRegion, model: UncertaintyModel) -> RegionBuilder:
    """Impedance-robust rows repeated at every extreme point of the demand set."""
    comp_e = _require(model, "E")
    comp_p = _require(model, "p2")
    if model.demand_q is not None:
        raise UnsupportedUncertaintyError("bilinear mode handles p2 demand only (drop q2)")
    latent, mapping = extreme_points(comp_p)
    if latent.shape[1] > MAX_BILINEAR_LATENT:
        raise UnsupportedUncertaintyError(
            f"bilinear mode supports at most {MAX_BILINEAR_LATENT} demand parameters "
            f"(got {latent.shape[1]}); group customers or use demand mode"
        )
    center = comp_p.balls[0].center
    logger.debug("bilinear region: %d demand extreme points", len(latent))

    def region(program: ConicProgram, dv: DecisionVars) -> None:
        for v, x in enumerate(latent):
            p2 = fr.p2.copy()
            p2[comp_p.indices] = center + mapping @ x
            w = fr.w_affine(dv, p2=p2)
            if comp_e.is_nominal_point:
                program.add_inequality(w.map(fr.nominal_map), fr.t, name=f"vfr{v}")
            else:
                _impedance_rows(program, fr, comp_e, w, f"bfr{v}")

    return region


def robust_region(mode: EnvelopeMode, fr: FeasibleRegion, model: UncertaintyModel,
                  options: EnvelopeOptions) -> Tuple[RegionBuilder, Optional[SupportFn]]:
    """Region builder and p2 support function for a robust mode."""
    if mode == EnvelopeMode.IMPEDANCE:
        return impedance_region(fr, model), None
    if mode == EnvelopeMode.DEMAND:
        return demand_region(fr, model, options), _p2_support(fr, model.demand_p)
    if mode == EnvelopeMode.BILINEAR:
        return bilinear_region(fr, model), _p2_support(fr, model.demand_p)
    raise ValueError(f"no robust counterpart for mode {mode.value!r}")


def build_robust_problem(mode: EnvelopeMode, fr: FeasibleRegion, model: UncertaintyModel,
                         options: Optional[EnvelopeOptions] = None) -> RobustProblem:
    options = options or EnvelopeOptions()
    started = time.perf_counter()
    region, p2_support = robust_region(mode, fr, model, options)
    program, dv = build_envelope_program(fr, options, region=region, p2_support=p2_support,
                                         name=f"rdoe-{mode.value}")
    return RobustProblem(mode, fr, model, options, program, dv, time.perf_counter() - started)


def build_rc_impedance(fr: FeasibleRegion, model: UncertaintyModel,
                       options: Optional[EnvelopeOptions] = None) -> RobustProblem:
    return build_robust_problem(EnvelopeMode.IMPEDANCE, fr, model, options)


def build_rc_demand(fr: FeasibleRegion, model: UncertaintyModel,
                    options: Optional[EnvelopeOptions] = None) -> RobustProblem:
    return build_robust_problem(EnvelopeMode.DEMAND, fr, model, options)


def build_rc_bilinear(fr: FeasibleRegion, model: UncertaintyModel,
                      options: Optional[EnvelopeOptions] = None) -> RobustProblem:
    return build_robust_problem(EnvelopeMode.BILINEAR, fr, model, options)


def solve_rdoe(problem: RobustProblem, solver: Optional[SolverOptions] = None) -> EnvelopeResult:
    report = solve(problem.program, solver)
    result = envelope_from_report(report, problem.fr, problem.dv, problem.options,
                                  problem.mode.value, problem.setup_time)
    n_vars, n_rows = problem.size
    logger.info("RDOE %s/%s: %s objective=%.4f kW (%d vars, %d rows, setup %.3fs, solve %.3fs)",
                problem.mode.value, problem.options.q_label, result.status.value,
                result.objective_kw, n_vars, n_rows, result.setup_time, result.solve_time)
    return result


def worst_row_violation(problem: RobustProblem, result: EnvelopeResult,
                        e_samples: Optional[np.ndarray] = None,
                        p2_samples: Optional[np.ndarray] = None) -> float:
    """Largest linear-model row violation of ``result`` over sampled realizations."""
    fr = problem.fr
    ids = fr.system.ordering.active
    q2 = (np.array([result.q2_kvar[c] for c in fr.system.ordering.passive])
          if result.q2_kvar else None)
    values = fr.row_values(result.p1_array(ids), result.q1_array(ids), q2,
                           vec_e=e_samples, p2=p2_samples)
    return float(np.max(values))
