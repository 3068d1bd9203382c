import numpy as np
import pytest

from robust_envelopes.conic import (
    Affine,
    BackendError,
    Cone,
    ConeKind,
    ConicData,
    ConicProgram,
    ProgramError,
    SolverOptions,
    SolverStatus,
    TransientBackendError,
    add_norm_epigraph,
    available_backends,
    backend_register,
    dump_program,
    load_program,
    solve,
)
from robust_envelopes.interior_point import _Cones
from robust_envelopes.norms import NormKind


def _small_lp() -> ConicProgram:
    program = ConicProgram("lp")
    x = Affine.variables(program.add_variables(2, "x", nonneg=True))
    program.add_inequality(x.map(np.array([[1.0, 2.0], [3.0, 1.0]])), np.array([4.0, 6.0]))
    program.maximize(x.sum())
    return program


def _random_lp(rng: np.random.Generator, n: int, m: int) -> ConicProgram:
    """maximize c'x over A x <= b, 0 <= x <= 1 (feasible at 0, bounded by the box)."""
    program = ConicProgram("random-lp")
    x = Affine.variables(program.add_variables(n, "x", nonneg=True))
    program.add_inequality(x, np.ones(n), name="box")
    program.add_inequality(x.map(rng.uniform(-1.0, 1.0, (m, n))), rng.uniform(0.5, 2.0, m))
    program.maximize(x.dot(rng.uniform(-1.0, 1.0, n)))
    return program


@pytest.mark.parametrize("backend", ["bundled", "highs"])
def test_small_lp_optimum(backend):
    report = solve(_small_lp(), SolverOptions(backend=backend))
    assert report.status == SolverStatus.OPTIMAL
    assert report.objective == pytest.approx(2.8, abs=1e-6)
    assert report.x[:2] == pytest.approx([1.6, 1.2], abs=1e-5)


def test_bundled_matches_highs_on_random_lps():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n, m = int(rng.integers(2, 12)), int(rng.integers(1, 8))
        program = _random_lp(rng, n, m)
        ours = solve(program, SolverOptions(backend="bundled"))
        ref = solve(program, SolverOptions(backend="highs"))
        assert ours.optimal and ref.optimal
        assert ours.objective == pytest.approx(ref.objective, abs=1e-6)
        assert ours.relative_gap <= 1e-6
        assert ours.primal_residual <= 1e-6 and ours.dual_residual <= 1e-6


def test_second_order_cone():
    program = ConicProgram("socp")
    cone = program.add_soc(3, "c")
    program.add_equality(Affine.variables(cone[:1]), 1.0)
    program.maximize(Affine.variables(cone[1:]).sum())
    report = solve(program)
    assert report.optimal
    assert report.objective == pytest.approx(np.sqrt(2.0), abs=1e-6)
    assert report.x[1:] == pytest.approx([np.sqrt(0.5)] * 2, abs=1e-5)


@pytest.mark.parametrize("norm", [NormKind.L1, NormKind.L2, NormKind.LINF])
def test_norm_epigraph_is_tight(norm):
    a = np.array([0.3, -1.2, 0.7, 2.0])
    program = ConicProgram("epi")
    bound = Affine.variables(program.add_variables(1, "t"))
    add_norm_epigraph(program, norm, Affine.constant(a), bound)
    program.maximize(-bound)
    report = solve(program)
    assert report.optimal
    assert -report.objective == pytest.approx(norm.evaluate(a), abs=1e-6)


def test_highs_rejects_cones():
    program = ConicProgram("socp")
    cone = program.add_soc(2, "c")
    program.add_equality(Affine.variables(cone[:1]), 1.0)
    program.maximize(Affine.variables(cone[1:]).sum())
    with pytest.raises(BackendError, match="LP only"):
        solve(program, SolverOptions(backend="highs"))


def test_inconsistent_equalities_are_infeasible():
    program = ConicProgram("bad")
    x = Affine.variables(program.add_variables(1, "x"))
    program.add_equality(x, 1.0)
    program.add_equality(x, 2.0)
    program.maximize(x)
    report = solve(program)
    assert report.status == SolverStatus.INFEASIBLE


def test_highs_reports_infeasible():
    program = ConicProgram("bad")
    x = Affine.variables(program.add_variables(1, "x", nonneg=True))
    program.add_inequality(x, -1.0)
    program.maximize(x)
    assert solve(program, SolverOptions(backend="highs")).status == SolverStatus.INFEASIBLE


def test_unknown_backend():
    with pytest.raises(BackendError, match="Unknown backend"):
        solve(_small_lp(), SolverOptions(backend="nope"))


def test_duplicate_backend_registration():
    assert {"bundled", "highs"} <= set(available_backends())
    with pytest.raises(BackendError):
        backend_register("bundled", lambda data, options: None)


def test_transient_backend_errors_are_retried():
    calls = []

    def flaky(data, options):
        from robust_envelopes.conic import _highs_backend

        calls.append(1)
        if len(calls) == 1:
            raise TransientBackendError("try again")
        return _highs_backend(data, options)

    backend_register("flaky-test", flaky)
    report = solve(_small_lp(), SolverOptions(backend="flaky-test"))
    assert report.optimal
    assert len(calls) == 2


def test_affine_algebra():
    program = ConicProgram()
    idx = program.add_variables(3, "x")
    x = Affine.variables(idx)
    expr = (x.map(np.array([[1.0, 2.0, 0.0], [0.0, 1.0, -1.0]])) + 1.0) * 2.0 - x.take([0, 2])
    value = expr.evaluate(np.array([1.0, 2.0, 3.0]))
    assert value == pytest.approx([2 * (1 + 4 + 1) - 1, 2 * (2 - 3 + 1) - 3])
    with pytest.raises(ProgramError):
        x + Affine.constant([1.0, 2.0])


def test_cone_membership_is_exclusive():
    program = ConicProgram()
    idx = program.add_variables(2, "x", nonneg=True)
    with pytest.raises(ProgramError):
        program.add_cone("soc", idx)


def test_dump_and_reload_solve_the_same():
    program = _small_lp()
    text = dump_program(program)
    assert text.startswith("# conic-program v1")
    reloaded = load_program(text)
    assert reloaded.n_vars == program.n_vars
    assert reloaded.n_equalities == program.n_equalities
    assert solve(reloaded).objective == pytest.approx(2.8, abs=1e-6)


def test_malformed_dump():
    with pytest.raises(ProgramError):
        load_program("vars 1\nfoo 1 2\n")


@pytest.mark.parametrize("a", [[3.0, 4.0], [3.0], [1.0, 1.0, 1.0], [0.3, -1.2, 0.7, 2.0]])
def test_euclidean_norm_of_constant(a):
    program = ConicProgram("norm")
    bound = Affine.variables(program.add_variables(1, "t"))
    add_norm_epigraph(program, NormKind.L2, Affine.constant(a), bound)
    program.maximize(-bound)
    report = solve(program)
    assert report.status == SolverStatus.OPTIMAL, report.message
    assert -report.objective == pytest.approx(np.linalg.norm(a), abs=1e-6)
    assert report.relative_gap <= 1e-6


def test_norm_term_tightens_a_bound():
    # maximize x subject to x + ||0.3||_2 <= 1
    program = ConicProgram("shift")
    x = Affine.variables(program.add_variables(1, "x"))
    add_norm_epigraph(program, NormKind.L2, Affine.constant([0.3]), 1.0 - x)
    program.maximize(x)
    report = solve(program)
    assert report.status == SolverStatus.OPTIMAL, report.message
    assert report.objective == pytest.approx(0.7, abs=1e-6)


def test_soc_iterates_stay_feasible_after_converging():
    program = ConicProgram("norm")
    bound = Affine.variables(program.add_variables(1, "t"))
    add_norm_epigraph(program, NormKind.L2, Affine.constant([3.0, 4.0]), bound)
    program.maximize(-bound)
    report = solve(program)
    assert report.optimal
    assert report.primal_residual <= 1e-6
    # once a feasible optimal iterate is reached the primal residual must not grow again
    first = next(i for i, row in enumerate(report.trace)
                 if row["pres"] <= 1e-6 and abs(row["pcost"] - 5.0) <= 1e-4)
    assert max(row["pres"] for row in report.trace[first:]) <= 1e-4


def test_dump_writes_plain_floats():
    program = ConicProgram("soc-dump")
    bound = Affine.variables(program.add_variables(1, "t"))
    add_norm_epigraph(program, NormKind.L2, Affine.constant([3.0, 4.0]), bound)
    program.maximize(-bound)
    text = dump_program(program)
    assert "np.float64" not in text
    assert "obj 0 -1.0" in text
    reloaded = load_program(text)
    assert [cone.kind for cone in reloaded.cones] == [cone.kind for cone in program.cones]
    assert solve(reloaded).objective == pytest.approx(-5.0, abs=1e-6)


@pytest.mark.parametrize("offset", [1e-1, 1e-4, 1e-7])
def test_nesterov_todd_scaling_near_the_boundary(offset):
    data = ConicData(np.zeros(3), np.zeros((0, 3)), np.zeros(0),
                     (Cone(ConeKind.SOC, (0, 1, 2)),), ("t", "u", "v"))
    cones = _Cones(data)
    s = np.array([5.0 + offset, 3.0, 4.0])
    z = np.array([1.0 + offset, -0.6, -0.8])
    W, Winv, lam = cones.scaling(s, z)
    assert np.abs(W @ Winv - np.eye(3)).max() <= 1e-8
    scale = np.linalg.norm(lam)
    assert np.abs(W @ z - lam).max() <= 1e-8 * max(1.0, np.abs(W).max()) * scale + 1e-12
    assert np.abs(Winv @ s - lam).max() <= 1e-8 * max(1.0, np.abs(Winv).max()) * 5.0 + 1e-12
    s_det = s[0] ** 2 - s[1:] @ s[1:]
    z_det = z[0] ** 2 - z[1:] @ z[1:]
    assert lam[0] ** 2 - lam[1:] @ lam[1:] == pytest.approx(np.sqrt(s_det * z_det), rel=1e-6)
