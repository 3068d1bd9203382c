from dataclasses import replace

import numpy as np
import pytest

from robust_envelopes.acpf import customer_injections, solve_acpf
from robust_envelopes.lintopf import (
    AssemblyError,
    EnvelopeOptions,
    ExtraConstraint,
    OperatingPoint,
    assemble,
    feasible_region,
    refine_operating_point,
    solve_ddoe,
    solve_ddoe_iterative,
    trace_fr_2d,
)
from robust_envelopes.models import AllocationPolicy, Direction, Phase
from robust_envelopes.netmodel import random_radial_network


def _max_vm_error(network, ls, p1, q1):
    p2, q2 = ls.forecasts()
    v_lin = ls.voltages(p1, q1, p2, q2)
    ids = ls.ordering.active
    inj = customer_injections(network, dict(zip(ids, p1)), dict(zip(ids, q1)))
    sol = solve_acpf(network, inj)
    v_ac = np.array([sol.voltages[(b, p.value)] for b, p in ls.ordering.nodes])
    return float(np.max(np.abs(np.abs(v_lin) - np.abs(v_ac))))


def test_twobus_system_shapes(twobus_ls):
    ls = twobus_ls
    assert ls.ordering.nodes == (("2", Phase.A), ("2", Phase.B), ("2", Phase.C))
    assert ls.C.shape == ls.D.shape == ls.E.shape == (6, 6)
    assert ls.A1.shape == (6, 2) and ls.A2.shape == (6, 1)
    assert ls.F.shape == (6, 6)
    assert ls.f == pytest.approx([1.05] * 3 + [-0.95] * 3)
    # R of the self impedance in per unit
    assert ls.E[0, 0] == pytest.approx(0.529 / 52.9)
    assert ls.E[3, 0] == pytest.approx(0.3 / 52.9)


@pytest.mark.parametrize("seed", [1, 5, 9])
def test_row_identity_on_random_networks(seed):
    network = random_radial_network(int(3 + seed), seed=seed)
    fr = feasible_region(assemble(network))
    rng = np.random.default_rng(seed)
    vec_e = fr.vec_e_nominal
    for i in range(fr.n_rows):
        H = fr.row_matrix(i)
        for _ in range(10):
            w = rng.standard_normal(fr.system.C.shape[0])
            lhs = vec_e @ H @ w
            rhs = fr.G[i] @ fr.system.E @ fr.c_inv @ w
            assert abs(lhs - rhs) <= 1e-9 * (1.0 + abs(rhs))


def test_linear_model_close_to_power_flow_at_light_load(feeder10):
    ls = assemble(feeder10)
    n = len(ls.ordering.active)
    p2 = np.full(len(ls.ordering.passive), 0.1)
    q2 = np.zeros_like(p2)
    p1 = np.full(n, 0.1)
    v_lin = ls.voltages(p1, np.zeros(n), p2, q2)
    inj = customer_injections(feeder10, dict(zip(ls.ordering.active, p1)),
                              p2=dict(zip(ls.ordering.passive, p2)),
                              q2=dict(zip(ls.ordering.passive, q2)))
    sol = solve_acpf(feeder10, inj)
    v_ac = np.array([sol.voltages[(b, p.value)] for b, p in ls.ordering.nodes])
    assert np.max(np.abs(v_lin - v_ac)) <= 1e-3


def test_membership(twobus_fr):
    assert twobus_fr.contains(np.zeros(2))
    assert not twobus_fr.contains(np.array([-20.0, -20.0]))
    assert twobus_fr.row_labels[0] == "2.a<=vmax"


def test_row_values_accept_batches(twobus_fr):
    fr = twobus_fr
    p1 = np.array([-1.0, -2.0])
    single = fr.row_values(p1)
    batch = fr.row_values(p1, vec_e=np.vstack([fr.vec_e_nominal] * 3))
    assert batch.shape == (3, fr.n_rows)
    assert np.allclose(batch, single[None, :])


def test_feasible_region_shape_check(twobus_ls):
    with pytest.raises(ValueError, match="one per passive"):
        feasible_region(twobus_ls, p2=np.zeros(3))


def test_bad_operating_point(twobus):
    op = OperatingPoint.flat(twobus)
    voltages = dict(op.voltages)
    voltages[("2", Phase.A)] = 0.1 + 0j
    with pytest.raises(AssemblyError):
        assemble(twobus, OperatingPoint(voltages))


def test_ddoe_twobus_export(twobus_fr):
    result = solve_ddoe(twobus_fr)
    assert result.optimal
    p1 = result.p1_array(twobus_fr.system.ordering.active)
    assert -14.0 < result.objective_kw < 0.0
    assert np.ptp(p1) <= 1e-6
    # the voltage limit binds before the export bound
    assert p1.min() > -7.0 + 1e-3
    assert np.all(twobus_fr.row_values(p1) <= 1e-7)
    assert result.to_payload()["status"] == "optimal"


def test_ddoe_import_direction(twobus_fr):
    result = solve_ddoe(twobus_fr, EnvelopeOptions(direction=Direction.IMPORT))
    assert result.optimal
    assert result.objective_kw > 0.0
    assert result.direction == Direction.IMPORT


def test_reactive_control_does_not_shrink_the_envelope(twobus_fr):
    fq = solve_ddoe(twobus_fr)
    cq = solve_ddoe(twobus_fr, EnvelopeOptions(q_control=frozenset({"q1"})))
    assert cq.optimal and cq.q_label == "cq"
    assert cq.objective_kw <= fq.objective_kw + 1e-6
    for q in cq.q1_kvar.values():
        assert -1.0 - 1e-6 <= q <= 1.0 + 1e-6


def test_free_allocation_dominates_equal(twobus_fr):
    equal = solve_ddoe(twobus_fr)
    free = solve_ddoe(twobus_fr, EnvelopeOptions(policy=None))
    assert free.objective_kw <= equal.objective_kw + 1e-6


def test_equal_allocation_on_random_feeder(feeder10):
    result = solve_ddoe(feasible_region(assemble(feeder10)),
                        EnvelopeOptions(policy=AllocationPolicy.EQUAL))
    assert result.optimal
    values = list(result.envelopes_kw.values())
    assert len(values) == 9
    assert max(values) - min(values) <= 1e-6


def test_extra_constraint(twobus_fr):
    cap = ExtraConstraint(p1_coef=np.array([[-1.0, 0.0]]), p2_coef=np.zeros((1, 1)),
                          rhs=np.array([1.0]))
    result = solve_ddoe(twobus_fr, EnvelopeOptions(extra=(cap,)))
    assert result.optimal
    assert result.objective_kw == pytest.approx(-2.0, abs=1e-6)


def test_one_refinement_reduces_linearization_error(twobus, twobus_ls, twobus_fr):
    result = solve_ddoe(twobus_fr)
    ids = twobus_ls.ordering.active
    p1, q1 = result.p1_array(ids), result.q1_array(ids)
    before = _max_vm_error(twobus, twobus_ls, p1, q1)
    refined = assemble(twobus, refine_operating_point(twobus_ls, p1, q1))
    after = _max_vm_error(twobus, refined, p1, q1)
    assert after < before


def test_iterative_refinement_settles(twobus):
    trace = solve_ddoe_iterative(twobus)
    assert trace.result.optimal
    assert trace.converged
    assert trace.moves[-1] < 1e-4
    assert trace.moves[-1] < trace.moves[0]


def test_trace_polygon(twobus_fr):
    polygon = trace_fr_2d(twobus_fr, n_directions=16, max_workers=1)
    assert not polygon.empty
    assert polygon.points.shape == (16, 2)
    assert polygon.pair == ("1", "3")
    assert polygon.is_convex(tol=1e-6)
    for point in polygon.points:
        assert twobus_fr.contains(point, tol=1e-6)
        assert np.all(np.abs(point) <= 7.0 + 1e-6)


def test_reactive_control_enlarges_traced_region(twobus_fr):
    angles = 2.0 * np.pi * np.arange(8) / 8
    dirs = np.column_stack([np.cos(angles), np.sin(angles)])
    fq = trace_fr_2d(twobus_fr, n_directions=8, max_workers=1)
    cq = trace_fr_2d(twobus_fr, n_directions=8, max_workers=1,
                     options=EnvelopeOptions(q_control=frozenset({"q1"})))
    support_fq = np.sum(fq.points * dirs, axis=1)
    support_cq = np.sum(cq.points * dirs, axis=1)
    assert np.all(support_cq >= support_fq - 1e-6)


def test_trace_needs_two_active_customers(feeder10):
    with pytest.raises(ValueError, match="exactly two"):
        trace_fr_2d(feasible_region(assemble(feeder10)), n_directions=4)


def test_envelope_timing_row(twobus_fr):
    result = solve_ddoe(twobus_fr)
    row = result.timing_row("ddoe")
    assert set(row) == {"run", "setup_s", "solve_s", "wall_s", "iterations"}
    assert result.wall_time == pytest.approx(result.setup_time + result.solve_time)
    assert replace(result, setup_time=9.0).to_payload() == result.to_payload()


def test_ddoe_matches_grid_search(twobus_fr):
    grid = np.round(np.arange(-700, 1) / 100.0, 2)
    # the region is convex, so the first feasible grid point from -7 kW is the best one
    best = next(p for p in grid if twobus_fr.contains(np.full(2, p)))
    result = solve_ddoe(twobus_fr)
    # within one grid step per customer, well inside 0.5%
    assert result.objective_kw == pytest.approx(2 * best, abs=0.02)


def test_reactive_ddoe_beats_shared_q_grid(twobus_fr):
    grid = np.round(np.arange(-700, 1) / 100.0, 2)
    best = 0.0
    for q in np.linspace(-1.0, 1.0, 21):
        feasible = [p for p in grid if twobus_fr.contains(np.full(2, p), np.full(2, q))]
        if feasible:
            best = min(best, 2 * feasible[0])
    result = solve_ddoe(twobus_fr, EnvelopeOptions(q_control=frozenset({"q1"})))
    assert result.optimal
    assert result.objective_kw <= best + 1e-6
    assert result.objective_kw >= 2 * -7.0 - 1e-6
