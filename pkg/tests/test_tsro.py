import numpy as np
import pytest

from robust_envelopes.lintopf import solve_ddoe
from robust_envelopes.models import (
    BallRecord,
    Coupling,
    ImpedanceUncertainty,
    Parameterization,
    UncertaintyFile,
)
from robust_envelopes.robustrc import build_rc_impedance, solve_rdoe
from robust_envelopes.tsro import (
    MAX_BOX_PARAMETERS,
    ScenarioSet,
    box_vertices,
    tsro_master,
    tsro_solve,
    tsro_subproblem,
)
from robust_envelopes.uncertainty import UnsupportedUncertaintyError, build_uncertainty_model


def _model(fr, radius, norm="inf", coupling=Coupling.SELF,
           parameterization=Parameterization.PHYSICAL):
    spec = ImpedanceUncertainty(coupling=coupling, parameterization=parameterization,
                                balls=[BallRecord(norm=norm, radius=radius)])
    return build_uncertainty_model(fr.system, UncertaintyFile(impedance=spec))


@pytest.mark.parametrize("radius,workers", [(0.025, 1), (0.05, 4)])
def test_matches_closed_form_counterpart(twobus_fr, radius, workers):
    model = _model(twobus_fr, radius)
    result, trace = tsro_solve(twobus_fr, model.component("E"), max_rounds=10,
                               max_workers=workers)
    assert trace.terminated
    assert len(trace.rounds) <= 10
    assert trace.final_violation <= 1e-7
    closed = solve_rdoe(build_rc_impedance(twobus_fr, model))
    assert result.objective_kw == pytest.approx(closed.objective_kw, rel=1e-4)


def test_master_objective_is_monotone(twobus_fr):
    comp = _model(twobus_fr, 0.05).component("E")
    _, trace = tsro_solve(twobus_fr, comp, max_rounds=10, max_workers=2)
    objectives = [r.master_objective_kw for r in trace.rounds]
    # export objectives are negative; each cut can only shrink the envelope
    assert all(b >= a - 1e-7 for a, b in zip(objectives, objectives[1:]))
    assert trace.to_payload()["rounds"][0]["round"] == 1


def test_zero_radius_stops_after_one_round(twobus_fr):
    comp = _model(twobus_fr, 0.0).component("E")
    result, trace = tsro_solve(twobus_fr, comp, max_workers=1)
    assert trace.terminated and len(trace.rounds) == 1
    assert result.objective_kw == pytest.approx(solve_ddoe(twobus_fr).objective_kw, abs=1e-6)


def test_unprotected_envelope_is_violated(twobus_fr):
    comp = _model(twobus_fr, 0.05).component("E")
    violation, vec_e, index = tsro_subproblem(twobus_fr, solve_ddoe(twobus_fr), comp,
                                              max_workers=1)
    assert violation > 1e-6
    assert vec_e.shape == (36,)
    assert 0 <= index < 64


def test_duplicate_scenarios_do_not_change_master(twobus_fr):
    comp = _model(twobus_fr, 0.05).component("E")
    single = ScenarioSet.nominal(comp)
    doubled = ScenarioSet.nominal(comp)
    doubled.add(single.realizations[0], "E0-copy")
    a = tsro_master(twobus_fr, single)
    b = tsro_master(twobus_fr, doubled)
    assert len(doubled) == 2
    assert a.objective_kw == pytest.approx(b.objective_kw, abs=1e-6)


def test_master_needs_scenarios(twobus_fr):
    with pytest.raises(ValueError, match="empty"):
        tsro_master(twobus_fr, ScenarioSet([], []))


def test_box_vertices(twobus_fr):
    comp = _model(twobus_fr, 0.05).component("E")
    vertices = box_vertices(comp)
    assert vertices.shape == (64, 36)
    assert np.allclose(vertices.mean(axis=0), comp.nominal)


def test_entries_box_has_one_parameter_per_entry(twobus_fr):
    entries = _model(twobus_fr, 0.05, parameterization=Parameterization.ENTRIES).component("E")
    # three self impedances, each touching two R and two X positions of E
    assert entries.balls[0].latent_dim == entries.indices.size == 12
    assert box_vertices(entries).shape == (2 ** 12, 36)


def test_box_vertices_limits(twobus_fr):
    full = _model(twobus_fr, 0.05, coupling=Coupling.ALL).component("E")
    assert full.balls[0].latent_dim == 12 <= MAX_BOX_PARAMETERS
    with pytest.raises(UnsupportedUncertaintyError):
        box_vertices(_model(twobus_fr, 0.05, norm="2").component("E"))
    entries = _model(twobus_fr, 0.05, coupling=Coupling.ALL,
                     parameterization=Parameterization.ENTRIES).component("E")
    assert entries.balls[0].latent_dim == 36 > MAX_BOX_PARAMETERS
    with pytest.raises(UnsupportedUncertaintyError, match="at most 16"):
        box_vertices(entries)
