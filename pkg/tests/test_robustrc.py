import numpy as np
import pytest

from robust_envelopes.conic import ConeKind
from robust_envelopes.lintopf import solve_ddoe
from robust_envelopes.models import (
    BallRecord,
    DemandUncertainty,
    EnvelopeMode,
    ImpedanceUncertainty,
    UncertaintyFile,
)
from robust_envelopes.robustrc import (
    build_rc_bilinear,
    build_rc_demand,
    build_rc_impedance,
    build_robust_problem,
    robust_region,
    solve_rdoe,
    worst_row_violation,
)
from robust_envelopes.uncertainty import (
    UncertaintyError,
    UnsupportedUncertaintyError,
    build_uncertainty_model,
    sample,
)


def _model(fr, impedance=None, demand=None, demand_q=None):
    doc = UncertaintyFile(impedance=impedance, demand_p=demand, demand_q=demand_q)
    return build_uncertainty_model(fr.system, doc)


def _box(radius, norm="inf"):
    return ImpedanceUncertainty(balls=[BallRecord(norm=norm, radius=radius)])


def _cross(radius, norm="1"):
    return DemandUncertainty(balls=[BallRecord(norm=norm, radius=radius)])


@pytest.fixture(scope="module")
def ddoe(twobus_fr):
    return solve_ddoe(twobus_fr)


@pytest.mark.parametrize("mode", [EnvelopeMode.IMPEDANCE, EnvelopeMode.DEMAND,
                                  EnvelopeMode.BILINEAR])
def test_zero_radius_matches_deterministic(twobus_fr, ddoe, mode):
    model = _model(twobus_fr, _box(0.0), _cross(0.0))
    result = solve_rdoe(build_robust_problem(mode, twobus_fr, model))
    assert result.optimal
    assert result.objective_kw == pytest.approx(ddoe.objective_kw, abs=1e-6)


def test_impedance_envelope_holds_for_sampled_realizations(twobus_fr, ddoe):
    model = _model(twobus_fr, _box(0.1))
    problem = build_rc_impedance(twobus_fr, model)
    result = solve_rdoe(problem)
    assert result.optimal
    draws = sample(model, "E", seed=42, size=200)
    assert worst_row_violation(problem, result, e_samples=draws) <= 1e-6
    # the unprotected envelope breaks on some realization
    assert worst_row_violation(problem, ddoe, e_samples=draws) > 1e-5


def test_robust_envelopes_are_smaller(twobus_fr, ddoe):
    model = _model(twobus_fr, _box(0.1), _cross(0.2))
    impedance = solve_rdoe(build_rc_impedance(twobus_fr, model))
    demand = solve_rdoe(build_rc_demand(twobus_fr, model))
    bilinear = solve_rdoe(build_rc_bilinear(twobus_fr, model))
    assert all(r.optimal for r in (impedance, demand, bilinear))
    assert impedance.objective_kw >= ddoe.objective_kw - 1e-6
    assert demand.objective_kw >= ddoe.objective_kw - 1e-6
    assert bilinear.objective_kw >= max(impedance.objective_kw, demand.objective_kw) - 1e-6
    assert bilinear.mode == "bilinear"


def test_demand_envelope_holds_at_extreme_demand(twobus_fr):
    model = _model(twobus_fr, demand=_cross(0.2))
    problem = build_rc_demand(twobus_fr, model)
    result = solve_rdoe(problem)
    p2 = np.array([[1.6], [2.0], [2.4]])
    assert worst_row_violation(problem, result, p2_samples=p2) <= 1e-6


def test_larger_radius_never_grows_the_envelope(twobus_fr):
    objectives = []
    for radius in (0.02, 0.05, 0.1):
        model = _model(twobus_fr, _box(radius))
        objectives.append(solve_rdoe(build_rc_impedance(twobus_fr, model)).objective_kw)
    assert objectives == sorted(objectives)


def test_l2_ball_adds_second_order_cones(twobus_fr):
    model = _model(twobus_fr, _box(0.05, norm="2"))
    problem = build_rc_impedance(twobus_fr, model)
    assert any(c.kind == ConeKind.SOC for c in problem.program.cones)
    result = solve_rdoe(problem)
    assert result.optimal
    draws = sample(model, "E", seed=7, size=100)
    assert worst_row_violation(problem, result, e_samples=draws) <= 1e-6


def test_box_and_cross_intersection(twobus_fr):
    both = ImpedanceUncertainty(balls=[BallRecord(norm="inf", radius=0.1),
                                       BallRecord(norm="1", radius=0.2)])
    box_only = solve_rdoe(build_rc_impedance(twobus_fr, _model(twobus_fr, _box(0.1))))
    cut = solve_rdoe(build_rc_impedance(twobus_fr, _model(twobus_fr, both)))
    assert cut.optimal
    # a smaller set protects against less
    assert cut.objective_kw <= box_only.objective_kw + 1e-6


def test_problem_size(twobus_fr):
    problem = build_rc_impedance(twobus_fr, _model(twobus_fr, _box(0.1)))
    n_vars, n_rows = problem.size
    assert n_vars > 2
    assert n_rows == problem.program.n_equalities


def test_missing_component(twobus_fr):
    model = _model(twobus_fr, demand=_cross(0.1))
    with pytest.raises(UncertaintyError, match="'E'"):
        build_rc_impedance(twobus_fr, model)


def test_demand_mode_needs_demand(twobus_fr):
    with pytest.raises(UncertaintyError):
        build_rc_demand(twobus_fr, _model(twobus_fr, _box(0.1)))


def test_det_mode_has_no_robust_counterpart(twobus_fr):
    model = _model(twobus_fr, _box(0.1))
    with pytest.raises(ValueError, match="no robust counterpart"):
        robust_region(EnvelopeMode.DET, twobus_fr, model, None)


def test_bilinear_rejects_reactive_demand(twobus_fr):
    model = _model(twobus_fr, _box(0.1), _cross(0.1), demand_q=_cross(0.1))
    with pytest.raises(UnsupportedUncertaintyError, match="q2"):
        build_rc_bilinear(twobus_fr, model)


def test_bilinear_needs_cross_polytope_demand(twobus_fr):
    model = _model(twobus_fr, _box(0.1), _cross(0.1, norm="2"))
    with pytest.raises(UnsupportedUncertaintyError):
        build_rc_bilinear(twobus_fr, model)


LADDER = (0.0, 0.025, 0.05, 0.1)


def _ladder_model(fr, mode, radius):
    if mode == EnvelopeMode.IMPEDANCE:
        return _model(fr, _box(radius))
    if mode == EnvelopeMode.DEMAND:
        return _model(fr, demand=_cross(radius))
    return _model(fr, _box(radius), _cross(radius))


@pytest.mark.parametrize("mode", [EnvelopeMode.IMPEDANCE, EnvelopeMode.DEMAND,
                                  EnvelopeMode.BILINEAR])
def test_conservativeness_ladder(twobus_fr, mode):
    results = [
        solve_rdoe(build_robust_problem(mode, twobus_fr, _ladder_model(twobus_fr, mode, r)))
        for r in LADDER
    ]
    assert all(r.optimal for r in results)
    objectives = [r.objective_kw for r in results]
    # export is negative: more uncertainty, less export
    assert all(b >= a - 1e-7 for a, b in zip(objectives, objectives[1:]))
    assert objectives[-1] > objectives[0]


@pytest.mark.parametrize("mode", [EnvelopeMode.IMPEDANCE, EnvelopeMode.DEMAND,
                                  EnvelopeMode.BILINEAR])
def test_certificate_over_ten_thousand_realizations(twobus_fr, mode):
    model = _ladder_model(twobus_fr, mode, 0.1)
    problem = build_robust_problem(mode, twobus_fr, model)
    result = solve_rdoe(problem)
    assert result.optimal
    rng = np.random.default_rng(2024)
    e_draws = sample(model, "E", rng, 10_000) if model.impedance is not None else None
    p2_draws = sample(model, "p2", rng, 10_000) if model.demand_p is not None else None
    assert worst_row_violation(problem, result, e_draws, p2_draws) <= 1e-7


def test_deterministic_envelope_fails_the_certificate(twobus_fr, ddoe):
    model = _model(twobus_fr, _box(0.1))
    problem = build_rc_impedance(twobus_fr, model)
    draws = sample(model, "E", np.random.default_rng(2024), 10_000)
    assert worst_row_violation(problem, ddoe, e_samples=draws) > 1e-4


def _demand_rdoe(fr, radius, norm):
    return solve_rdoe(build_rc_demand(fr, _model(fr, demand=_cross(radius, norm))))


@pytest.mark.parametrize("radius", [0.025, 0.05, 0.1, 0.2])
def test_euclidean_demand_ball(twobus_fr, radius):
    euclidean = _demand_rdoe(twobus_fr, radius, "2")
    assert euclidean.optimal, euclidean.status
    # one passive customer: every norm ball is the same interval
    for norm in ("1", "inf"):
        other = _demand_rdoe(twobus_fr, radius, norm)
        assert euclidean.objective_kw == pytest.approx(other.objective_kw, abs=1e-5)


def test_euclidean_demand_ladder_is_monotone(twobus_fr):
    objectives = []
    for radius in (0.025, 0.05, 0.1, 0.2):
        result = _demand_rdoe(twobus_fr, radius, "2")
        assert result.optimal
        objectives.append(result.objective_kw)
    assert objectives == sorted(objectives)
    assert objectives[-1] == pytest.approx(-5.810, abs=5e-3)
