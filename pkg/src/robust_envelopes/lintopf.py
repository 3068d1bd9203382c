from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from .batch import run_batch
from .conic import Affine, ConicProgram, SolverOptions, SolverReport, SolverStatus, solve
from .models import AllocationPolicy, Direction, Phase
from .netmodel import PHASE_INDEX, Customer, NetworkModel


logger = logging.getLogger(__name__)

NodeKey = Tuple[str, Phase]


class AssemblyError(RuntimeError):
    """Raised when the linear system cannot be built (singular C or D, bad operating point)."""


@dataclass(frozen=True)
class Ordering:
    """Index bookkeeping: node k is (bus, phase); line k feeds node k."""

    nodes: Tuple[NodeKey, ...]
    lines: Tuple[str, ...]
    active: Tuple[str, ...]
    passive: Tuple[str, ...]

    @cached_property
    def index(self) -> Dict[NodeKey, int]:
        return {key: k for k, key in enumerate(self.nodes)}

    @property
    def m(self) -> int:
        return len(self.nodes)


def build_ordering(network: NetworkModel) -> Ordering:
    nodes: List[NodeKey] = []
    lines: List[str] = []
    for bus_id in network.bfs_order:
        line = network.feeding_line[bus_id]
        for phase in network.bus_map[bus_id].phases:
            nodes.append((bus_id, phase))
            lines.append(line.id)
    return Ordering(
        nodes=tuple(nodes),
        lines=tuple(lines),
        active=tuple(c.id for c in network.active),
        passive=tuple(c.id for c in network.passive),
    )


@dataclass(frozen=True)
class OperatingPoint:
    voltages: Dict[NodeKey, complex]

    @classmethod
    def flat(cls, network: NetworkModel) -> "OperatingPoint":
        return cls({
            (b.id, p): complex(network.v_ref[PHASE_INDEX[p]])
            for b in network.buses for p in b.phases
        })

    def node_array(self, ordering: Ordering) -> np.ndarray:
        try:
            return np.array([self.voltages[key] for key in ordering.nodes], dtype=complex)
        except KeyError as exc:
            raise AssemblyError(f"operating point misses node {exc.args[0]}") from exc

    def validate(self, network: NetworkModel) -> "OperatingPoint":
        for key, v in self.voltages.items():
            if not 0.5 < abs(v) < 1.5:
                raise AssemblyError(f"operating point {key[0]}.{key[1].value}: |V|={abs(v):.4f}")
        ref = network.reference
        for p in ref.phases:
            v = self.voltages.get((ref.id, p))
            if v is not None and abs(v - network.v_ref[PHASE_INDEX[p]]) > 1e-9:
                raise AssemblyError("reference entries must equal v_ref")
        return self

    def max_distance(self, other: "OperatingPoint") -> float:
        keys = set(self.voltages) & set(other.voltages)
        return max((abs(self.voltages[k] - other.voltages[k]) for k in keys), default=0.0)


def _real_expand(re: np.ndarray, im: np.ndarray) -> np.ndarray:
    """Real form of complex multiplication by re + j im, variables stacked (Re, Im)."""
    return np.block([[re, -im], [im, re]])


def _incidence_pattern(network: NetworkModel, ordering: Ordering) -> np.ndarray:
    """Node-by-line (bus, phase) incidence; column k is the line feeding node k."""
    m = ordering.m
    mat = np.zeros((m, m))
    for k, (bus_id, phase) in enumerate(ordering.nodes):
        mat[k, k] = 1.0
        parent = network.parent[bus_id]
        parent_key = (parent, phase)
        if parent_key in ordering.index:
            mat[ordering.index[parent_key], k] = -1.0
    return mat


def _indicator(network: NetworkModel, ordering: Ordering, ids: Sequence[str]) -> np.ndarray:
    by_id = {c.id: c for c in network.customers}
    mu = np.zeros((ordering.m, len(ids)))
    for j, cid in enumerate(ids):
        c = by_id[cid]
        mu[ordering.index[(c.bus, c.phase)], j] = 1.0
    return mu


def voltage_linearization(network: NetworkModel, op: OperatingPoint,
                          ordering: Optional[Ordering] = None
                          ) -> Tuple[np.ndarray, np.ndarray]:
    """|V| bounds as projections of V on the direction of the given voltage.

    Rows are every upper bound followed by every lower bound, over (Re V, Im V).
    """
    ordering = ordering or build_ordering(network)
    angle = np.angle(op.node_array(ordering))
    cos, sin = np.diag(np.cos(angle)), np.diag(np.sin(angle))
    F = np.block([[cos, sin], [-cos, -sin]])
    vmax = np.array([network.bus_map[b].vmax for b, _ in ordering.nodes])
    vmin = np.array([network.bus_map[b].vmin for b, _ in ordering.nodes])
    return F, np.concatenate([vmax, -vmin])


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """A1 p1 + A2 p2 + B1 q1 + B2 q2 + C l = b,  D v + E l = d,  F v <= f (p, q in kW, kvar)."""

    A1: np.ndarray
    A2: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    F: np.ndarray
    b: np.ndarray
    d: np.ndarray
    f: np.ndarray
    ordering: Ordering
    operating_point: OperatingPoint
    network: NetworkModel = field(repr=False)

    @cached_property
    def c_lu(self):
        return scipy.linalg.lu_factor(self.C)

    @cached_property
    def d_lu(self):
        return scipy.linalg.lu_factor(self.D)

    @property
    def active_customers(self) -> List[Customer]:
        by_id = {c.id: c for c in self.network.customers}
        return [by_id[i] for i in self.ordering.active]

    @property
    def passive_customers(self) -> List[Customer]:
        by_id = {c.id: c for c in self.network.customers}
        return [by_id[i] for i in self.ordering.passive]

    def forecasts(self) -> Tuple[np.ndarray, np.ndarray]:
        cust = self.passive_customers
        return (np.array([c.p_forecast for c in cust], dtype=float),
                np.array([c.q_forecast for c in cust], dtype=float))

    def injection(self, p1, q1, p2, q2) -> np.ndarray:
        return self.A1 @ p1 + self.A2 @ p2 + self.B1 @ q1 + self.B2 @ q2 - self.b

    def state(self, p1, q1, p2, q2) -> Tuple[np.ndarray, np.ndarray]:
        """Linear-model (v, l) for the given injections."""
        w = self.injection(np.asarray(p1, float), np.asarray(q1, float),
                           np.asarray(p2, float), np.asarray(q2, float))
        l = scipy.linalg.lu_solve(self.c_lu, -w)
        v = scipy.linalg.lu_solve(self.d_lu, self.d - self.E @ l)
        return v, l

    def voltages(self, p1, q1, p2, q2) -> np.ndarray:
        v, _ = self.state(p1, q1, p2, q2)
        m = self.ordering.m
        return v[:m] + 1j * v[m:]


def assemble(network: NetworkModel, op: Optional[OperatingPoint] = None) -> LinearSystem:
    """Linearized three-phase power flow around the given operating point."""
    op = (op or OperatingPoint.flat(network)).validate(network)
    ordering = build_ordering(network)
    m = ordering.m
    vbar = op.node_array(ordering)

    pattern = _incidence_pattern(network, ordering)
    conj = np.conj(vbar)
    C = _real_expand(np.diag(conj.real) @ pattern, np.diag(conj.imag) @ pattern)
    D = np.kron(np.eye(2), pattern.T)

    d = np.zeros(2 * m)
    R = np.zeros((m, m))
    X = np.zeros((m, m))
    zb = network.z_base
    for k, (bus_id, phase) in enumerate(ordering.nodes):
        parent = network.parent[bus_id]
        if parent == network.reference.id:
            vref = network.v_ref[PHASE_INDEX[phase]]
            d[k], d[m + k] = vref.real, vref.imag
        z = network.feeding_line[bus_id].z
        for other in network.bus_map[bus_id].phases:
            j = ordering.index[(bus_id, other)]
            zpu = z[PHASE_INDEX[phase], PHASE_INDEX[other]] / zb
            R[k, j], X[k, j] = zpu.real, zpu.imag
    E = _real_expand(R, X)

    scale = 1.0 / network.s_base_kva
    mu_a = _indicator(network, ordering, ordering.active) * scale
    mu_p = _indicator(network, ordering, ordering.passive) * scale
    zeros_a = np.zeros_like(mu_a)
    zeros_p = np.zeros_like(mu_p)
    A1, B1 = np.vstack([-mu_a, zeros_a]), np.vstack([zeros_a, mu_a])
    A2, B2 = np.vstack([-mu_p, zeros_p]), np.vstack([zeros_p, mu_p])

    F, f = voltage_linearization(network, op, ordering)
    for name, mat in (("C", C), ("D", D)):
        if not np.isfinite(np.linalg.cond(mat)):
            raise AssemblyError(f"{name} is singular")
    return LinearSystem(A1, A2, B1, B2, C, D, E, F, np.zeros(2 * m), d, f, ordering, op, network)


@dataclass(frozen=True, eq=False)
class FeasibleRegion:
    """Polyhedron in (p1, q) with rows vec(E)' H_i w <= t_i, w = A p + B q - b."""

    system: LinearSystem
    p2: np.ndarray
    q2: np.ndarray
    q1_fixed: np.ndarray

    @cached_property
    def c_inv(self) -> np.ndarray:
        return np.linalg.inv(self.system.C)

    @cached_property
    def d_inv(self) -> np.ndarray:
        return np.linalg.inv(self.system.D)

    @cached_property
    def G(self) -> np.ndarray:
        """F D^-1; row i is the voltage-bound functional of row i."""
        return self.system.F @ self.d_inv

    @cached_property
    def t(self) -> np.ndarray:
        return self.system.f - self.G @ self.system.d

    @cached_property
    def nominal_map(self) -> np.ndarray:
        """F D^-1 E C^-1 at the nominal E."""
        return self.G @ self.system.E @ self.c_inv

    @property
    def vec_e_nominal(self) -> np.ndarray:
        return self.system.E.reshape(-1, order="F")

    @property
    def n_rows(self) -> int:
        return self.t.size

    @property
    def row_labels(self) -> List[str]:
        nodes = [f"{b}.{p.value}" for b, p in self.system.ordering.nodes]
        return [f"{n}<=vmax" for n in nodes] + [f"{n}>=vmin" for n in nodes]

    def row_matrix(self, i: int) -> np.ndarray:
        """H_i = C^-1 kron (F_i D^-1)'."""
        return np.kron(self.c_inv, self.G[i].reshape(-1, 1))

    def w_affine(self, dv: "DecisionVars", p2: Optional[np.ndarray] = None) -> Affine:
        ls = self.system
        p2 = self.p2 if p2 is None else p2
        const = ls.A2 @ p2 - ls.b
        expr = Affine.variables(dv.p1).map(ls.A1)
        if dv.q1 is not None:
            expr = expr + Affine.variables(dv.q1).map(ls.B1)
        else:
            const = const + ls.B1 @ self.q1_fixed
        if dv.q2 is not None:
            expr = expr + Affine.variables(dv.q2).map(ls.B2)
        else:
            const = const + ls.B2 @ self.q2
        return expr + const

    def row_values(
        self,
        p1: np.ndarray,
        q1: Optional[np.ndarray] = None,
        q2: Optional[np.ndarray] = None,
        vec_e: Optional[np.ndarray] = None,
        p2: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        """Row left-hand sides minus t. ``vec_e`` (N, n_e) and ``p2`` (N, n_p) may be batches."""
        ls = self.system
        q1 = self.q1_fixed if q1 is None else np.asarray(q1, float)
        q2 = self.q2 if q2 is None else np.asarray(q2, float)
        base = ls.A1 @ np.asarray(p1, float) + ls.B1 @ q1 + ls.B2 @ q2 - ls.b
        p2_batch = np.atleast_2d(self.p2 if p2 is None else np.asarray(p2, float))
        y = (base[None, :] + p2_batch @ ls.A2.T) @ self.c_inv.T
        if vec_e is None:
            vals = y @ (self.G @ ls.E).T
        else:
            n2 = ls.E.shape[0]
            e_batch = np.atleast_2d(vec_e).reshape(-1, n2, n2).transpose(0, 2, 1)
            n = max(e_batch.shape[0], y.shape[0])
            y = np.broadcast_to(y, (n, n2))
            vals = np.einsum("ir,nrc,nc->ni", self.G, np.broadcast_to(e_batch, (n, n2, n2)), y)
        out = vals - self.t[None, :]
        single = vec_e is None or np.ndim(vec_e) == 1
        single = single and (p2 is None or np.ndim(p2) == 1)
        return out[0] if single else out

    def contains(self, p1, q1=None, q2=None, tol: float = 1e-9) -> bool:
        return bool(np.all(self.row_values(p1, q1, q2) <= tol))


def feasible_region(ls: LinearSystem, p2: Optional[np.ndarray] = None,
                    q2: Optional[np.ndarray] = None) -> FeasibleRegion:
    f_p2, f_q2 = ls.forecasts()
    p2 = f_p2 if p2 is None else np.asarray(p2, dtype=float)
    q2 = f_q2 if q2 is None else np.asarray(q2, dtype=float)
    if p2.shape != f_p2.shape or q2.shape != f_q2.shape:
        raise ValueError(f"p2/q2 must have {f_p2.size} entries (one per passive customer)")
    return FeasibleRegion(ls, p2, q2, np.zeros(len(ls.ordering.active)))


@dataclass(frozen=True)
class ExtraConstraint:
    """Additional rows p1_coef @ p1 + p2_coef @ p2 <= rhs."""

    p1_coef: np.ndarray
    p2_coef: np.ndarray
    rhs: np.ndarray


@dataclass(frozen=True)
class EnvelopeOptions:
    policy: Optional[AllocationPolicy] = AllocationPolicy.EQUAL
    q_control: FrozenSet[str] = frozenset()
    direction: Direction = Direction.EXPORT
    extra: Tuple[ExtraConstraint, ...] = ()

    @property
    def q_label(self) -> str:
        label = "cq" if "q1" in self.q_control else "fq"
        return label + ("+q2" if "q2" in self.q_control else "")


@dataclass(frozen=True)
class DecisionVars:
    p1: np.ndarray
    q1: Optional[np.ndarray] = None
    q2: Optional[np.ndarray] = None


@dataclass
class EnvelopeResult:
    status: SolverStatus
    objective_kw: float
    envelopes_kw: Dict[str, float]
    q1_kvar: Dict[str, float]
    q2_kvar: Dict[str, float]
    mode: str = "det"
    q_label: str = "fq"
    direction: Direction = Direction.EXPORT
    setup_time: float = 0.0
    solve_time: float = 0.0
    iterations: int = 0
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == SolverStatus.OPTIMAL

    @property
    def wall_time(self) -> float:
        return self.setup_time + self.solve_time

    def p1_array(self, ids: Sequence[str]) -> np.ndarray:
        return np.array([self.envelopes_kw[i] for i in ids], dtype=float)

    def q1_array(self, ids: Sequence[str]) -> np.ndarray:
        return np.array([self.q1_kvar.get(i, 0.0) for i in ids], dtype=float)

    def to_payload(self) -> Dict[str, object]:
        """Deterministic part of the result (no timings)."""
        return {
            "status": self.status.value,
            "mode": self.mode,
            "q_control": self.q_label,
            "direction": self.direction.value,
            "objective_kw": _rounded(self.objective_kw),
            "envelopes_kw": {k: _rounded(v) for k, v in self.envelopes_kw.items()},
            "q1_kvar": {k: _rounded(v) for k, v in self.q1_kvar.items()},
            "q2_kvar": {k: _rounded(v) for k, v in self.q2_kvar.items()},
            "message": self.message,
        }

    def timing_row(self, label: str) -> Dict[str, object]:
        return {"run": label, "setup_s": f"{self.setup_time:.6f}",
                "solve_s": f"{self.solve_time:.6f}", "wall_s": f"{self.wall_time:.6f}",
                "iterations": self.iterations}


def _rounded(value: float) -> Optional[float]:
    return None if not np.isfinite(value) else round(float(value), 9)


RegionBuilder = Callable[[ConicProgram, DecisionVars], None]
SupportFn = Callable[[np.ndarray], float]


def _allocation_weights(customers: List[Customer], policy: AllocationPolicy,
                        direction: Direction) -> np.ndarray:
    if policy == AllocationPolicy.EQUAL:
        return np.ones(len(customers))
    if policy == AllocationPolicy.PROPORTIONAL:
        # share of the rated capability in the optimized direction
        side = 0 if direction == Direction.EXPORT else 1
        return np.array([abs(c.p_bounds[side]) or 1.0 for c in customers])
    return np.array([c.weight for c in customers])


def add_fr_rows(program: ConicProgram, fr: FeasibleRegion, dv: DecisionVars) -> None:
    program.add_inequality(fr.w_affine(dv).map(fr.nominal_map), fr.t, name="fr")


def build_envelope_program(
    fr: FeasibleRegion,
    options: EnvelopeOptions,
    region: Optional[RegionBuilder] = None,
    p2_support: Optional[SupportFn] = None,
    name: str = "ddoe",
) -> Tuple[ConicProgram, DecisionVars]:
    """Decision variables, box bounds, allocation coupling, region rows and objective."""
    program = ConicProgram(name)
    active = fr.system.active_customers
    passive = fr.system.passive_customers

    def boxed(count: int, label: str, bounds: List[Tuple[float, float]]) -> np.ndarray:
        idx = program.add_variables(count, label)
        lo = np.array([b[0] for b in bounds])
        hi = np.array([b[1] for b in bounds])
        program.add_inequality(Affine.variables(idx), hi, name=f"{label}.hi")
        program.add_inequality(-Affine.variables(idx), -lo, name=f"{label}.lo")
        return idx

    p1 = boxed(len(active), "p1", [c.p_bounds for c in active])
    q1 = boxed(len(active), "q1", [c.q_bounds for c in active]) \
        if "q1" in options.q_control and active else None
    q2 = boxed(len(passive), "q2", [c.q_bounds for c in passive]) \
        if "q2" in options.q_control and passive else None
    dv = DecisionVars(p1, q1, q2)

    if options.policy is not None and len(active) > 1:
        w = _allocation_weights(active, options.policy, options.direction)
        rows = np.zeros((len(active) - 1, len(active)))
        for k in range(1, len(active)):
            rows[k - 1, 0] = w[k]
            rows[k - 1, k] = -w[0]
        program.add_equality(Affine.variables(p1).map(rows), 0.0)

    support = p2_support or (lambda g: float(g @ fr.p2))
    for extra in options.extra:
        p2_terms = np.array([support(row) for row in np.atleast_2d(extra.p2_coef)])
        program.add_inequality(Affine.variables(p1).map(np.atleast_2d(extra.p1_coef)),
                               np.asarray(extra.rhs, float) - p2_terms, name="extra")

    (region or (lambda prog, d: add_fr_rows(prog, fr, d)))(program, dv)

    sign = -1.0 if options.direction == Direction.EXPORT else 1.0
    program.maximize(Affine.variables(p1).sum() * sign)
    return program, dv


def envelope_from_report(
    report: SolverReport,
    fr: FeasibleRegion,
    dv: DecisionVars,
    options: EnvelopeOptions,
    mode: str = "det",
    setup_time: float = 0.0,
) -> EnvelopeResult:
    ls = fr.system
    result = EnvelopeResult(
        status=report.status, objective_kw=float("nan"), envelopes_kw={}, q1_kvar={},
        q2_kvar={}, mode=mode, q_label=options.q_label, direction=options.direction,
        setup_time=setup_time, solve_time=report.wall_time, iterations=report.iterations,
        message=report.message,
    )
    if not report.optimal:
        return result
    x = report.x
    p1 = x[dv.p1]
    result.objective_kw = float(p1.sum())
    result.envelopes_kw = {cid: float(v) for cid, v in zip(ls.ordering.active, p1)}
    q1 = x[dv.q1] if dv.q1 is not None else fr.q1_fixed
    result.q1_kvar = {cid: float(v) for cid, v in zip(ls.ordering.active, q1)}
    if dv.q2 is not None:
        result.q2_kvar = {cid: float(v) for cid, v in zip(ls.ordering.passive, x[dv.q2])}
    return result


def solve_ddoe(fr: FeasibleRegion, options: Optional[EnvelopeOptions] = None,
               solver: Optional[SolverOptions] = None) -> EnvelopeResult:
    """Deterministic envelope over the feasible region."""
    options = options or EnvelopeOptions()
    started = time.perf_counter()
    program, dv = build_envelope_program(fr, options)
    setup = time.perf_counter() - started
    report = solve(program, solver)
    result = envelope_from_report(report, fr, dv, options, "det", setup)
    logger.info("DDOE %s: %s objective=%.4f kW", options.q_label, result.status.value,
                result.objective_kw)
    return result


def refine_operating_point(ls: LinearSystem, p1: np.ndarray, q1: np.ndarray,
                           p2: Optional[np.ndarray] = None,
                           q2: Optional[np.ndarray] = None) -> OperatingPoint:
    """Linear-model voltages at (p*, q*) as the next linearization point."""
    f_p2, f_q2 = ls.forecasts()
    v = ls.voltages(p1, q1, f_p2 if p2 is None else p2, f_q2 if q2 is None else q2)
    network = ls.network
    voltages = {
        (network.reference.id, p): complex(network.v_ref[PHASE_INDEX[p]])
        for p in network.reference.phases
    }
    voltages.update({key: complex(v[k]) for k, key in enumerate(ls.ordering.nodes)})
    return OperatingPoint(voltages)


@dataclass
class RefinementTrace:
    result: EnvelopeResult
    operating_point: OperatingPoint
    moves: List[float]
    converged: bool


def solve_ddoe_iterative(
    network: NetworkModel,
    options: Optional[EnvelopeOptions] = None,
    solver: Optional[SolverOptions] = None,
    tol: float = 1e-4,
    max_iter: int = 10,
) -> RefinementTrace:
    """Alternate DDOE solves and operating-point refinement until the point settles."""
    op = OperatingPoint.flat(network)
    moves: List[float] = []
    result: Optional[EnvelopeResult] = None
    for _ in range(max_iter):
        ls = assemble(network, op)
        fr = feasible_region(ls)
        result = solve_ddoe(fr, options, solver)
        if not result.optimal:
            return RefinementTrace(result, op, moves, False)
        q2 = np.array([result.q2_kvar[c] for c in ls.ordering.passive]) if result.q2_kvar else None
        new_op = refine_operating_point(
            ls, result.p1_array(ls.ordering.active), result.q1_array(ls.ordering.active), q2=q2)
        moves.append(new_op.max_distance(op))
        op = new_op
        logger.info("refinement %d: operating point moved %.3e p.u.", len(moves), moves[-1])
        if moves[-1] < tol:
            return RefinementTrace(result, op, moves, True)
    return RefinementTrace(result, op, moves, False)  # type: ignore[arg-type]


@dataclass
class Polygon:
    angles_deg: np.ndarray
    points: np.ndarray  # (n, 2) kW
    pair: Tuple[str, str]
    message: str = ""

    @property
    def empty(self) -> bool:
        return self.points.size == 0

    def is_convex(self, tol: float = 1e-6) -> bool:
        pts = self.points
        if len(pts) < 3:
            return True
        edges = np.roll(pts, -1, axis=0) - pts
        nxt = np.roll(edges, -1, axis=0)
        cross = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
        return bool(np.all(cross >= -tol))


def trace_fr_2d(
    fr: FeasibleRegion,
    pair: Optional[Tuple[str, str]] = None,
    n_directions: int = 64,
    options: Optional[EnvelopeOptions] = None,
    region: Optional[RegionBuilder] = None,
    solver: Optional[SolverOptions] = None,
    max_workers: int = 4,
) -> Polygon:
    """Boundary of the region projected on two active customers, by support-function sweep."""
    active = fr.system.ordering.active
    if len(active) != 2:
        raise ValueError(f"FR tracing needs exactly two active customers (found {len(active)})")
    pair = pair or (active[0], active[1])
    cols = [active.index(pair[0]), active.index(pair[1])]
    options = replace(options or EnvelopeOptions(), policy=None)
    program, dv = build_envelope_program(fr, options, region=region, name="fr-trace")
    angles = 2.0 * np.pi * np.arange(n_directions) / n_directions

    def support_point(theta: float) -> SolverReport:
        objective = Affine.variables(dv.p1[cols]).dot(np.array([np.cos(theta), np.sin(theta)]))
        return solve(program.with_objective(objective), solver)

    reports = run_batch(support_point, list(angles), max_workers=max_workers,
                        description="Tracing feasible region...")
    bad = [r for r in reports if not r.optimal]
    if bad:
        return Polygon(np.zeros(0), np.zeros((0, 2)), pair,
                       f"{len(bad)} of {n_directions} directions returned {bad[0].status.value}")
    points = np.array([r.x[dv.p1[cols]] for r in reports])
    return Polygon(np.rad2deg(angles), points, pair)
