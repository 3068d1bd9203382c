from __future__ import annotations

import dataclasses
import json
import statistics
from pathlib import Path
from typing import Any, Dict, FrozenSet, List, Optional, Tuple

import numpy as np
import typer
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from .acpf import RealizationPolicy, feasibility_audit, linearization_error_report, table_scenarios
from .conic import BackendError, ProgramError, SolverOptions, SolverStatus, write_program
from .config import ConfigError, Settings, configure_logging, get_settings
from .csv_io import (
	read_text_file,
	write_bench_csv,
	write_envelope_csv,
	write_error_table_csv,
	write_fr_csv,
	write_polygon_csv,
	write_trace_csv,
)
from .lintopf import (
	AssemblyError,
	EnvelopeOptions,
	EnvelopeResult,
	FeasibleRegion,
	assemble,
	build_envelope_program,
	feasible_region,
	solve_ddoe,
	solve_ddoe_iterative,
	trace_fr_2d,
)
from .models import (
	AllocationPolicy,
	BallRecord,
	Coupling,
	DemandUncertainty,
	Direction,
	EnvelopeMode,
	ImpedanceUncertainty,
	RunSpec,
	SolverRecord,
	UncertaintyFile,
)
from .netmodel import (
	NetworkModel,
	NetworkParseError,
	NetworkValidationError,
	bundled_network_path,
	load_network,
	random_radial_network,
	save_network,
)
from .reporting import emit_run_artifact, write_errors_csv, write_result_json, write_timing_csv
from .robustrc import build_robust_problem, robust_region, solve_rdoe, worst_row_violation
from .tsro import tsro_solve
from .uncertainty import (
	UncertaintyError,
	UncertaintyModel,
	build_uncertainty_model,
	read_uncertainty_file,
	sample,
)


app = typer.Typer(add_completion=False, help="Deterministic and robust dynamic operating envelopes")
console = Console()

EXIT_INPUT = 1
EXIT_INFEASIBLE = 2
EXIT_NUMERICAL = 3

INPUT_ERRORS = (
	ConfigError,
	NetworkParseError,
	NetworkValidationError,
	UncertaintyError,
	ProgramError,
	BackendError,
	ValidationError,
	ValueError,
)


def _fail(message: str, code: int = EXIT_INPUT) -> typer.Exit:
	console.print(f"[red]❌ {message}[/red]")
	return typer.Exit(code=code)


def _settings() -> Settings:
	try:
		settings = get_settings()
	except ConfigError as exc:
		raise _fail(str(exc))
	configure_logging(settings.log_level)
	return settings


def _solver(settings: Settings, tol: Optional[float]) -> SolverOptions:
	options = settings.solver_options()
	if tol is None:
		return options
	if tol <= 0:
		raise typer.BadParameter("tolerance must be positive", param_hint="--tol")
	return dataclasses.replace(options, gap_tol=tol)


def _with_solver_record(options: SolverOptions, record: SolverRecord) -> SolverOptions:
	"""Apply the run spec solver fields that are set; the gap tolerance is handled by _solver."""
	overrides = record.model_dump(exclude_none=True, exclude={"gap_tol"})
	return dataclasses.replace(options, **overrides) if overrides else options


def _network(path: Optional[Path]) -> NetworkModel:
	return load_network(path or bundled_network_path())


def _q_control(raw: Optional[str]) -> FrozenSet[str]:
	flags = frozenset(s.strip().lower() for s in (raw or "").split(",") if s.strip())
	unknown = flags - {"q1", "q2"}
	if unknown:
		raise typer.BadParameter(
			f"unknown flag(s) {', '.join(sorted(unknown))}; use q1, q2 or q1,q2",
			param_hint="--q-control",
		)
	return flags


def _exit_code(result: EnvelopeResult) -> int:
	if result.status in (SolverStatus.INFEASIBLE, SolverStatus.UNBOUNDED):
		return EXIT_INFEASIBLE
	if result.status == SolverStatus.NUMERICAL_FAILURE:
		return EXIT_NUMERICAL
	return 0


def _format_summary_value(value: object) -> str:
	if isinstance(value, float):
		return f"{value:.4f}"
	if isinstance(value, dict):
		if not value:
			return "-"
		return ", ".join(f"{k}={_format_summary_value(v)}" for k, v in sorted(value.items()))
	return str(value)


def _print_summary(title: str, summary: Dict[str, object]) -> None:
	table = Table(title=title, show_header=True, header_style="bold cyan")
	table.add_column("Metric", style="cyan", no_wrap=True)
	table.add_column("Value", style="white")
	for key, value in summary.items():
		table.add_row(str(key), _format_summary_value(value))
	console.print(table)


def _print_envelope(title: str, result: EnvelopeResult) -> None:
	_print_summary(title, {
		"status": result.status.value,
		"objective (kW)": result.objective_kw,
		"q control": result.q_label,
		"setup time (s)": result.setup_time,
		"solve time (s)": result.solve_time,
		"iterations": result.iterations,
	})
	if result.envelopes_kw:
		table = Table(show_header=True, header_style="bold cyan")
		table.add_column("Customer", style="cyan")
		table.add_column("Envelope (kW)", justify="right")
		table.add_column("q (kvar)", justify="right")
		for cid, p in result.envelopes_kw.items():
			table.add_row(cid, f"{p:.4f}", f"{result.q1_kvar.get(cid, 0.0):.4f}")
		console.print(table)
	if result.message and not result.optimal:
		console.print(f"[yellow]{result.message}[/yellow]")


def _write_envelope_outputs(out: Path, label: str, payload: Dict[str, Any],
							result: EnvelopeResult) -> None:
	write_result_json(out, payload)
	write_envelope_csv(out / "envelopes.csv", result)
	write_timing_csv(out, [result.timing_row(label)])
	console.print(f"[green]Wrote results to {out}[/green]")


def _uncertainty_doc(
	path: Optional[Path],
	norm: Optional[str],
	radius: Optional[float],
	demand_norm: Optional[str],
	demand_radius: Optional[float],
) -> UncertaintyFile:
	"""Uncertainty file with the command-line overrides applied (one ball per override)."""
	doc = read_uncertainty_file(path) if path else UncertaintyFile()
	if norm is not None or radius is not None:
		base = doc.impedance or ImpedanceUncertainty(balls=[BallRecord(radius=0.0)])
		ball = BallRecord(norm=norm or base.balls[-1].norm,
						  radius=base.balls[-1].radius if radius is None else radius)
		doc.impedance = base.model_copy(update={"balls": [ball]})
	if demand_norm is not None or demand_radius is not None:
		base_d = doc.demand_p or DemandUncertainty(balls=[BallRecord(radius=0.0)])
		ball = BallRecord(norm=demand_norm or base_d.balls[-1].norm,
						  radius=base_d.balls[-1].radius if demand_radius is None else demand_radius)
		doc.demand_p = base_d.model_copy(update={"balls": [ball]})
	return doc


def _run_spec(spec_path: Optional[Path], overrides: Dict[str, Any]) -> Tuple[RunSpec, Path]:
	"""Merge a run-spec file with explicit flags; paths in the file are relative to it."""
	base_dir = Path(".")
	raw: Dict[str, Any] = {}
	if spec_path is not None:
		if not spec_path.exists():
			raise ValueError(f"Run spec not found: {spec_path}")
		raw = json.loads(read_text_file(spec_path))
		base_dir = spec_path.parent
	raw.setdefault("network", str(bundled_network_path()))
	for key, value in overrides.items():
		if value is not None:
			raw[key] = value
	spec = RunSpec.model_validate(raw)
	return spec, base_dir


def _resolve(base_dir: Path, value: Optional[str]) -> Optional[Path]:
	if value is None:
		return None
	path = Path(value)
	return path if path.is_absolute() or path.exists() else base_dir / path


def _envelope_options(allocation: AllocationPolicy, direction: Direction,
					  q_control: FrozenSet[str]) -> EnvelopeOptions:
	return EnvelopeOptions(policy=allocation, q_control=q_control, direction=direction)


def _solve(mode: EnvelopeMode, fr: FeasibleRegion, model: Optional[UncertaintyModel],
		   options: EnvelopeOptions, solver: SolverOptions) -> EnvelopeResult:
	if mode == EnvelopeMode.DET:
		return solve_ddoe(fr, options, solver)
	problem = build_robust_problem(mode, fr, model or UncertaintyModel(), options)
	return solve_rdoe(problem, solver)


@app.command()
def validate(
	network: Optional[Path] = typer.Option(None, "--network", "-n", help="Network JSON (default: bundled twobus)."),
):
	"""Check a network file and print its structure."""
	_settings()
	try:
		net = _network(network)
	except INPUT_ERRORS as exc:
		raise _fail(f"Validation failed: {exc}")
	phases = sorted({p.value for b in net.buses for p in b.phases})
	_print_summary("Network", {
		"name": net.name,
		"buses": len(net.buses),
		"lines": len(net.lines),
		"active customers": len(net.active),
		"passive customers": len(net.passive),
		"phases": "".join(phases),
		"reference": net.reference.id,
	})
	console.print("[green]✅ Network is valid[/green]")


@app.command()
def generate(
	buses: int = typer.Option(10, "--buses", min=2, help="Number of buses including the reference."),
	seed: int = typer.Option(42, "--seed", help="Random seed."),
	out: Path = typer.Option(Path("network.json"), "--out", "-o", help="Output network JSON."),
):
	"""Write a random radial three-phase feeder."""
	_settings()
	net = random_radial_network(buses, seed=seed)
	save_network(net, out)
	console.print(f"[green]Wrote {net.name} ({len(net.buses)} buses) to {out}[/green]")


@app.command()
def ddoe(
	network: Optional[Path] = typer.Option(None, "--network", "-n", help="Network JSON (default: bundled twobus)."),
	allocation: AllocationPolicy = typer.Option(AllocationPolicy.EQUAL, "--allocation", help="Allocation policy."),
	direction: Direction = typer.Option(Direction.EXPORT, "--direction", help="export or import envelope."),
	q_control: Optional[str] = typer.Option(None, "--q-control", help="Controllable reactive power: q1, q2 or q1,q2."),
	refine: bool = typer.Option(False, "--refine", help="Re-linearize at the solution until it settles."),
	out: Path = typer.Option(Path("out"), "--out", "-o", help="Output directory."),
	tol: Optional[float] = typer.Option(None, "--tol", help="Solver gap tolerance."),
):
	"""Deterministic envelopes on the linearized network."""
	settings = _settings()
	solver = _solver(settings, tol)
	options = _envelope_options(allocation, direction, _q_control(q_control))
	try:
		net = _network(network)
		payload: Dict[str, Any] = {"command": "ddoe", "network": net.name}
		if refine:
			trace = solve_ddoe_iterative(net, options, solver)
			result = trace.result
			payload["refinement"] = {"converged": trace.converged,
									 "moves": [round(m, 12) for m in trace.moves]}
		else:
			result = solve_ddoe(feasible_region(assemble(net)), options, solver)
	except INPUT_ERRORS as exc:
		raise _fail(f"DDOE failed: {exc}")
	except AssemblyError as exc:
		raise _fail(f"DDOE failed: {exc}", EXIT_NUMERICAL)

	payload["result"] = result.to_payload()
	_print_envelope("DDOE", result)
	_write_envelope_outputs(out, "ddoe", payload, result)
	emit_run_artifact(settings.reports_dir, "ddoe", payload)
	code = _exit_code(result)
	if code:
		raise _fail(f"DDOE ended {result.status.value}", code)


@app.command()
def rdoe(
	network: Optional[Path] = typer.Option(None, "--network", "-n", help="Network JSON (default: bundled twobus)."),
	uncertainty: Optional[Path] = typer.Option(None, "--uncertainty", "-u", help="Uncertainty JSON."),
	mode: Optional[EnvelopeMode] = typer.Option(None, "--mode", help="det, impedance, demand or bilinear."),
	norm: Optional[str] = typer.Option(None, "--norm", help="Impedance ball norm: 1, 2 or inf."),
	radius: Optional[float] = typer.Option(None, "--radius", min=0.0, help="Impedance ball radius."),
	demand_norm: Optional[str] = typer.Option(None, "--demand-norm", help="Demand ball norm: 1, 2 or inf."),
	demand_radius: Optional[float] = typer.Option(None, "--demand-radius", min=0.0, help="Demand ball radius."),
	allocation: Optional[AllocationPolicy] = typer.Option(None, "--allocation", help="Allocation policy."),
	direction: Optional[Direction] = typer.Option(None, "--direction", help="export or import envelope."),
	q_control: Optional[str] = typer.Option(None, "--q-control", help="Controllable reactive power: q1, q2 or q1,q2."),
	spec: Optional[Path] = typer.Option(None, "--spec", help="Run spec JSON; flags override its fields."),
	samples: int = typer.Option(0, "--samples", min=0, help="Monte-Carlo realizations for the linear certificate."),
	seed: int = typer.Option(42, "--seed", help="Random seed for sampling."),
	out: Path = typer.Option(Path("out"), "--out", "-o", help="Output directory."),
	tol: Optional[float] = typer.Option(None, "--tol", help="Solver gap tolerance."),
):
	"""Robust envelopes against impedance and/or demand uncertainty."""
	settings = _settings()
	try:
		run, base_dir = _run_spec(spec, {
			"network": str(network) if network else None,
			"uncertainty": str(uncertainty) if uncertainty else None,
			"mode": mode.value if mode else None,
			"norm": norm, "radius": radius,
			"demand_norm": demand_norm, "demand_radius": demand_radius,
			"allocation": allocation.value if allocation else None,
			"direction": direction.value if direction else None,
			"q_control": sorted(_q_control(q_control)) if q_control is not None else None,
		})
		solver = _with_solver_record(_solver(settings, tol if tol is not None else run.solver.gap_tol),
									 run.solver)
		net = _network(_resolve(base_dir, run.network))
		ls = assemble(net)
		fr = feasible_region(ls)
		doc = _uncertainty_doc(_resolve(base_dir, run.uncertainty), run.norm, run.radius,
							   run.demand_norm, run.demand_radius)
		model = build_uncertainty_model(ls, doc)
		options = _envelope_options(run.allocation, run.direction, frozenset(run.q_control))
		if run.mode == EnvelopeMode.DET:
			result = solve_ddoe(fr, options, solver)
			problem = None
		else:
			problem = build_robust_problem(run.mode, fr, model, options)
			result = solve_rdoe(problem, solver)
	except INPUT_ERRORS as exc:
		raise _fail(f"RDOE failed: {exc}")
	except AssemblyError as exc:
		raise _fail(f"RDOE failed: {exc}", EXIT_NUMERICAL)

	payload: Dict[str, Any] = {
		"command": "rdoe",
		"network": net.name,
		"uncertainty": model.describe(),
		"result": result.to_payload(),
	}
	if problem is not None and result.optimal and samples > 0:
		rng = np.random.default_rng(seed)
		e_samples = sample(model, "E", rng, samples) if model.impedance is not None else None
		p2_samples = sample(model, "p2", rng, samples) if model.demand_p is not None else None
		worst = worst_row_violation(problem, result, e_samples, p2_samples)
		payload["certificate"] = {"samples": samples, "seed": seed,
								  "worst_row_violation": round(worst, 12)}
		console.print(f"[blue]Worst sampled row violation: {worst:.3e}[/blue]")

	_print_envelope(f"RDOE ({run.mode.value})", result)
	_write_envelope_outputs(out, f"rdoe-{run.mode.value}", payload, result)
	emit_run_artifact(settings.reports_dir, "rdoe", payload, run.mode.value)
	code = _exit_code(result)
	if code:
		raise _fail(f"RDOE ended {result.status.value}", code)


@app.command(name="fr-trace")
def fr_trace(
	network: Optional[Path] = typer.Option(None, "--network", "-n", help="Network JSON (default: bundled twobus)."),
	uncertainty: Optional[Path] = typer.Option(None, "--uncertainty", "-u", help="Uncertainty JSON."),
	mode: EnvelopeMode = typer.Option(EnvelopeMode.DET, "--mode", help="Robust region to trace beside the deterministic one."),
	norm: Optional[str] = typer.Option(None, "--norm", help="Impedance ball norm: 1, 2 or inf."),
	radius: Optional[float] = typer.Option(None, "--radius", min=0.0, help="Impedance ball radius."),
	demand_norm: Optional[str] = typer.Option(None, "--demand-norm", help="Demand ball norm."),
	demand_radius: Optional[float] = typer.Option(None, "--demand-radius", min=0.0, help="Demand ball radius."),
	q_control: Optional[str] = typer.Option(None, "--q-control", help="Controllable reactive power: q1, q2 or q1,q2."),
	directions: int = typer.Option(64, "--directions", min=3, help="Number of support directions."),
	plot: Optional[Path] = typer.Option(None, "--plot", help="Also draw the regions to this PNG (needs matplotlib)."),
	out: Path = typer.Option(Path("out"), "--out", "-o", help="Output directory."),
	tol: Optional[float] = typer.Option(None, "--tol", help="Solver gap tolerance."),
):
	"""Trace the 2-D feasible region of two active customers."""
	settings = _settings()
	solver = _solver(settings, tol)
	options = EnvelopeOptions(q_control=_q_control(q_control))
	try:
		net = _network(network)
		ls = assemble(net)
		fr = feasible_region(ls)
		polygons = [("dfr", trace_fr_2d(fr, n_directions=directions, options=options,
									   solver=solver, max_workers=settings.max_workers))]
		doe = solve_ddoe(fr, options, solver)
		if mode != EnvelopeMode.DET:
			doc = _uncertainty_doc(uncertainty, norm, radius, demand_norm, demand_radius)
			model = build_uncertainty_model(ls, doc)
			region, _ = robust_region(mode, fr, model, options)
			polygons.append(("rfr", trace_fr_2d(fr, n_directions=directions, options=options,
												region=region, solver=solver,
												max_workers=settings.max_workers)))
			doe = _solve(mode, fr, model, options, solver)
	except INPUT_ERRORS as exc:
		raise _fail(f"FR trace failed: {exc}")
	except AssemblyError as exc:
		raise _fail(f"FR trace failed: {exc}", EXIT_NUMERICAL)

	payload: Dict[str, Any] = {"command": "fr-trace", "network": net.name, "mode": mode.value,
							   "q_control": options.q_label, "polygons": {}}
	for label, polygon in polygons:
		if polygon.empty:
			console.print(f"[yellow]{label}: {polygon.message}[/yellow]")
		else:
			write_polygon_csv(out / f"{label}.csv", polygon)
		payload["polygons"][label] = {"pair": list(polygon.pair), "vertices": len(polygon.points),
									  "message": polygon.message}
	if doe.optimal:
		payload["doe_point_kw"] = [round(doe.envelopes_kw[c], 9) for c in polygons[0][1].pair]
	write_result_json(out, payload)
	write_fr_csv(out / "fr_rows.csv", fr)
	if plot is not None:
		from .plotting import plot_polygons

		point = tuple(payload["doe_point_kw"]) if "doe_point_kw" in payload else None
		plot_polygons(polygons, plot, point)  # type: ignore[arg-type]
		console.print(f"[blue]Plot: {plot}[/blue]")
	_print_summary("Feasible region", {label: f"{len(p.points)} vertices" for label, p in polygons})
	if any(p.empty for _, p in polygons):
		raise _fail("At least one region is empty", EXIT_INFEASIBLE)


@app.command(name="pf-audit")
def pf_audit(
	network: Optional[Path] = typer.Option(None, "--network", "-n", help="Network JSON (default: bundled twobus)."),
	uncertainty: Optional[Path] = typer.Option(None, "--uncertainty", "-u", help="Uncertainty JSON."),
	mode: EnvelopeMode = typer.Option(EnvelopeMode.DET, "--mode", help="Envelope to audit."),
	norm: Optional[str] = typer.Option(None, "--norm", help="Impedance ball norm: 1, 2 or inf."),
	radius: Optional[float] = typer.Option(None, "--radius", min=0.0, help="Impedance ball radius."),
	demand_norm: Optional[str] = typer.Option(None, "--demand-norm", help="Demand ball norm."),
	demand_radius: Optional[float] = typer.Option(None, "--demand-radius", min=0.0, help="Demand ball radius."),
	q_control: Optional[str] = typer.Option(None, "--q-control", help="Controllable reactive power: q1, q2 or q1,q2."),
	samples: int = typer.Option(0, "--samples", min=0, help="Sampled realizations (0: forecast only)."),
	seed: int = typer.Option(42, "--seed", help="Random seed for sampling."),
	out: Path = typer.Option(Path("out"), "--out", "-o", help="Output directory."),
	tol: Optional[float] = typer.Option(None, "--tol", help="Solver gap tolerance."),
):
	"""Check an envelope against the exact power flow."""
	settings = _settings()
	solver = _solver(settings, tol)
	options = EnvelopeOptions(q_control=_q_control(q_control))
	try:
		net = _network(network)
		ls = assemble(net)
		fr = feasible_region(ls)
		doc = _uncertainty_doc(uncertainty, norm, radius, demand_norm, demand_radius)
		model = build_uncertainty_model(ls, doc)
		result = _solve(mode, fr, model, options, solver)
	except INPUT_ERRORS as exc:
		raise _fail(f"Audit failed: {exc}")
	except AssemblyError as exc:
		raise _fail(f"Audit failed: {exc}", EXIT_NUMERICAL)
	if not result.optimal:
		raise _fail(f"Envelope solve ended {result.status.value}", _exit_code(result))

	try:
		if samples > 0:
			rng = np.random.default_rng(seed)
			e_samples = sample(model, "E", rng, samples) if model.impedance is not None else None
			p2_samples = sample(model, "p2", rng, samples) if model.demand_p is not None else None
			report = feasibility_audit(net, result, RealizationPolicy.SAMPLED, ls=ls,
									   e_samples=e_samples, p2_samples=p2_samples,
									   lin_slack=settings.lin_slack,
									   max_workers=settings.max_workers)
		else:
			report = feasibility_audit(net, result, ls=ls, lin_slack=settings.lin_slack,
									   max_workers=settings.max_workers)
	except INPUT_ERRORS as exc:
		raise _fail(f"Audit failed: {exc}")

	payload = {"command": "pf-audit", "network": net.name, "mode": mode.value,
			   "envelope": result.to_payload(), "audit": report.to_payload()}
	write_result_json(out, payload)
	if report.violations:
		write_errors_csv(out, [{"node": n, "violation": f"{v:.6f}"} for n, v in report.violations])
	emit_run_artifact(settings.reports_dir, "pf-audit", payload, mode.value)
	_print_summary("Power-flow audit", {
		"realizations": report.runs,
		"worst |V| (p.u.)": report.worst_vm,
		"worst violation (p.u.)": report.worst_violation,
		"linearization slack": report.lin_slack,
		"not converged": report.failed_convergence,
	})
	if report.within_slack:
		console.print("[green]✅ Violations within the linearization slack[/green]")
	else:
		console.print("[yellow]Violations exceed the linearization slack[/yellow]")


@app.command(name="lin-error")
def lin_error(
	network: Optional[Path] = typer.Option(None, "--network", "-n", help="Network JSON (default: bundled twobus)."),
	high: float = typer.Option(3.0, "--high", min=0.0, help="High-load injection per active customer (kW)."),
	low: float = typer.Option(1.0, "--low", min=0.0, help="Low-load injection per active customer (kW)."),
	out: Path = typer.Option(Path("out"), "--out", "-o", help="Output directory."),
):
	"""Voltage-magnitude errors of the linear model against the exact power flow."""
	settings = _settings()
	try:
		net = _network(network)
		rows = linearization_error_report(net, scenarios=table_scenarios(high, low),
										  max_workers=settings.max_workers)
	except INPUT_ERRORS as exc:
		raise _fail(f"Linearization report failed: {exc}")
	except AssemblyError as exc:
		raise _fail(f"Linearization report failed: {exc}", EXIT_NUMERICAL)
	write_error_table_csv(out / "lin_error.csv", rows)
	write_result_json(out, {"command": "lin-error", "network": net.name,
							"rows": [{k: (round(v, 12) if isinstance(v, float) else v)
									  for k, v in row.items()} for row in rows]})
	table = Table(title="Linearization error", show_header=True, header_style="bold cyan")
	for col in ("Status", "Load", "Avg VM error", "Max VM error"):
		table.add_column(col)
	for row in rows:
		table.add_row(str(row["status"]), str(row["load"]), f"{row['avg_vm_error']:.6f}",
					  f"{row['max_vm_error']:.6f}")
	console.print(table)


@app.command()
def tsro(
	network: Optional[Path] = typer.Option(None, "--network", "-n", help="Network JSON (default: bundled twobus)."),
	uncertainty: Optional[Path] = typer.Option(None, "--uncertainty", "-u", help="Uncertainty JSON."),
	radius: Optional[float] = typer.Option(None, "--radius", min=0.0, help="Impedance box radius."),
	coupling: Optional[Coupling] = typer.Option(None, "--coupling", help="Uncertain impedance entries: self, mutual or all (a full line has 12 parameters)."),
	q_control: Optional[str] = typer.Option(None, "--q-control", help="Controllable reactive power: q1, q2 or q1,q2."),
	violation_tol: float = typer.Option(1e-7, "--violation-tol", help="Subproblem violation tolerance."),
	max_rounds: int = typer.Option(50, "--max-rounds", min=1, help="Round limit."),
	out: Path = typer.Option(Path("out"), "--out", "-o", help="Output directory."),
	tol: Optional[float] = typer.Option(None, "--tol", help="Solver gap tolerance."),
):
	"""Scenario-generation baseline, cross-checked against the closed-form robust counterpart."""
	settings = _settings()
	solver = _solver(settings, tol)
	options = EnvelopeOptions(q_control=_q_control(q_control))
	try:
		net = _network(network)
		ls = assemble(net)
		fr = feasible_region(ls)
		doc = _uncertainty_doc(uncertainty, "inf" if radius is not None else None, radius,
							   None, None)
		if coupling is not None and doc.impedance is not None:
			doc.impedance = doc.impedance.model_copy(update={"coupling": coupling})
		model = build_uncertainty_model(ls, doc)
		comp = model.component("E")
		result, trace = tsro_solve(fr, comp, options, solver, tol=violation_tol,
								   max_rounds=max_rounds, max_workers=settings.max_workers)
		closed_form = solve_rdoe(build_robust_problem(EnvelopeMode.IMPEDANCE, fr, model, options),
								 solver)
	except INPUT_ERRORS as exc:
		raise _fail(f"TSRO failed: {exc}")
	except AssemblyError as exc:
		raise _fail(f"TSRO failed: {exc}", EXIT_NUMERICAL)

	payload: Dict[str, Any] = {"command": "tsro", "network": net.name,
							   "result": result.to_payload(), "trace": trace.to_payload()}
	if result.optimal and closed_form.optimal:
		gap = abs(result.objective_kw - closed_form.objective_kw) / max(
			1.0, abs(closed_form.objective_kw))
		payload["closed_form_objective_kw"] = round(closed_form.objective_kw, 9)
		payload["relative_difference"] = gap
	write_trace_csv(out / "trace.csv", trace)
	_write_envelope_outputs(out, "tsro", payload, result)
	_print_envelope("TSRO", result)
	_print_summary("TSRO trace", {
		"rounds": len(trace.rounds),
		"terminated": trace.terminated,
		"reason": trace.reason,
		"final violation": trace.final_violation,
		"closed-form objective (kW)": closed_form.objective_kw,
	})
	code = _exit_code(result)
	if code:
		raise _fail(f"TSRO master ended {result.status.value}", code)


def _bench_cases(radius: float, demand_radius: float) -> List[Tuple[str, EnvelopeMode, UncertaintyFile, FrozenSet[str]]]:
	box = BallRecord(norm="inf", radius=radius)
	impedance = ImpedanceUncertainty(balls=[box])
	demand = DemandUncertainty(balls=[BallRecord(norm="2", radius=demand_radius)])
	joint = DemandUncertainty(balls=[BallRecord(norm="inf", radius=demand_radius),
									 BallRecord(norm="1", radius=demand_radius)])
	cases = []
	for q in (frozenset(), frozenset({"q1"})):
		tag = "cq" if q else "fq"
		cases.extend([
			(f"det-{tag}", EnvelopeMode.DET, UncertaintyFile(), q),
			(f"impedance-{tag}", EnvelopeMode.IMPEDANCE, UncertaintyFile(impedance=impedance), q),
			(f"demand-{tag}", EnvelopeMode.DEMAND, UncertaintyFile(demand_p=demand), q),
			(f"bilinear-{tag}", EnvelopeMode.BILINEAR,
			 UncertaintyFile(impedance=impedance, demand_p=joint), q),
		])
	return cases


@app.command()
def bench(
	network: Optional[Path] = typer.Option(None, "--network", "-n", help="Network JSON (default: bundled twobus)."),
	repeats: int = typer.Option(10, "--repeats", min=1, help="Solves per case."),
	radius: float = typer.Option(0.05, "--radius", min=0.0, help="Impedance box radius."),
	demand_radius: float = typer.Option(0.2, "--demand-radius", min=0.0, help="Demand ball radius."),
	out: Path = typer.Option(Path("out"), "--out", "-o", help="Output directory."),
	tol: Optional[float] = typer.Option(None, "--tol", help="Solver gap tolerance."),
):
	"""Median setup and solve times per envelope case."""
	settings = _settings()
	solver = _solver(settings, tol)
	rows: List[Dict[str, Any]] = []
	try:
		net = _network(network)
		ls = assemble(net)
		fr = feasible_region(ls)
		for case, mode, doc, q in _bench_cases(radius, demand_radius):
			model = build_uncertainty_model(ls, doc)
			options = EnvelopeOptions(q_control=q)
			runs = [_solve(mode, fr, model, options, solver) for _ in range(repeats)]
			rows.append({
				"case": case,
				"status": runs[-1].status.value,
				"objective_kw": runs[-1].objective_kw,
				"setup_median_s": statistics.median(r.setup_time for r in runs),
				"solve_median_s": statistics.median(r.solve_time for r in runs),
				"wall_median_s": statistics.median(r.wall_time for r in runs),
				"repeats": repeats,
			})
	except INPUT_ERRORS as exc:
		raise _fail(f"Benchmark failed: {exc}")
	except AssemblyError as exc:
		raise _fail(f"Benchmark failed: {exc}", EXIT_NUMERICAL)
	write_bench_csv(out / "bench.csv", rows)
	table = Table(title="Benchmark", show_header=True, header_style="bold cyan")
	for col in ("Case", "Status", "Objective (kW)", "Setup (s)", "Solve (s)"):
		table.add_column(col)
	for row in rows:
		table.add_row(row["case"], row["status"], f"{row['objective_kw']:.3f}",
					  f"{row['setup_median_s']:.4f}", f"{row['solve_median_s']:.4f}")
	console.print(table)


@app.command(name="dump-program")
def dump_program_cmd(
	network: Optional[Path] = typer.Option(None, "--network", "-n", help="Network JSON (default: bundled twobus)."),
	uncertainty: Optional[Path] = typer.Option(None, "--uncertainty", "-u", help="Uncertainty JSON."),
	mode: EnvelopeMode = typer.Option(EnvelopeMode.DET, "--mode", help="det, impedance, demand or bilinear."),
	norm: Optional[str] = typer.Option(None, "--norm", help="Impedance ball norm: 1, 2 or inf."),
	radius: Optional[float] = typer.Option(None, "--radius", min=0.0, help="Impedance ball radius."),
	demand_norm: Optional[str] = typer.Option(None, "--demand-norm", help="Demand ball norm."),
	demand_radius: Optional[float] = typer.Option(None, "--demand-radius", min=0.0, help="Demand ball radius."),
	q_control: Optional[str] = typer.Option(None, "--q-control", help="Controllable reactive power: q1, q2 or q1,q2."),
	out: Path = typer.Option(Path("program.txt"), "--out", "-o", help="Dump file."),
):
	"""Write the envelope program in the plain-text interchange form."""
	_settings()
	options = EnvelopeOptions(q_control=_q_control(q_control))
	try:
		net = _network(network)
		ls = assemble(net)
		fr = feasible_region(ls)
		if mode == EnvelopeMode.DET:
			program, _ = build_envelope_program(fr, options)
		else:
			doc = _uncertainty_doc(uncertainty, norm, radius, demand_norm, demand_radius)
			program = build_robust_problem(mode, fr, build_uncertainty_model(ls, doc), options).program
	except INPUT_ERRORS as exc:
		raise _fail(f"Dump failed: {exc}")
	except AssemblyError as exc:
		raise _fail(f"Dump failed: {exc}", EXIT_NUMERICAL)
	write_program(program, out)
	console.print(f"[green]Wrote {program.n_vars} variables, {program.n_equalities} rows to {out}[/green]")


if __name__ == "__main__":
	app()
