"""Exact unbalanced three-phase power flow by backward/forward sweep.

Used as the reference for linearization errors and for envelope feasibility audits.
Injections are customer consumption in kW/kvar (export is negative).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .batch import run_batch
from .lintopf import EnvelopeResult, LinearSystem, OperatingPoint, assemble
from .netmodel import PHASE_INDEX, Line, NetworkModel


logger = logging.getLogger(__name__)


@dataclass
class PowerFlowSolution:
    voltages: Dict[Tuple[str, str], complex]
    currents: Dict[Tuple[str, str], complex]
    converged: bool
    iterations: int
    residual: float

    def magnitude(self, bus: str, phase: str) -> float:
        return abs(self.voltages[(bus, phase)])


def _bus_loads(network: NetworkModel, injections: Mapping[str, complex]) -> Dict[str, np.ndarray]:
    loads = {b.id: np.zeros(3, dtype=complex) for b in network.buses}
    known = {c.id: c for c in network.customers}
    for cid, s in injections.items():
        customer = known.get(cid)
        if customer is None:
            raise KeyError(f"unknown customer {cid!r}")
        loads[customer.bus][PHASE_INDEX[customer.phase]] += complex(s) / network.s_base_kva
    return loads


def solve_acpf(
    network: NetworkModel,
    injections: Mapping[str, complex],
    tol: float = 1e-10,
    max_iter: int = 200,
) -> PowerFlowSolution:
    """Fixed-point sweep; customers missing from ``injections`` draw nothing."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    loads = _bus_loads(network, injections)
    zb = network.z_base
    order = network.bfs_order
    phase_idx = {b.id: [PHASE_INDEX[p] for p in b.phases] for b in network.buses}
    z_pu = {bus: network.feeding_line[bus].z / zb for bus in order}

    volts = {b.id: network.v_ref.astype(complex).copy() for b in network.buses}
    line_current = {bus: np.zeros(3, dtype=complex) for bus in order}
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        for bus in reversed(order):
            idx = phase_idx[bus]
            current = np.zeros(3, dtype=complex)
            current[idx] = np.conj(loads[bus][idx] / volts[bus][idx])
            for child in network.children[bus]:
                current += line_current[child]
            line_current[bus] = current

        update = 0.0
        for bus in order:
            idx = phase_idx[bus]
            parent = volts[network.parent[bus]]
            new = volts[bus].copy()
            new[idx] = parent[idx] - z_pu[bus][np.ix_(idx, idx)] @ line_current[bus][idx]
            update = max(update, float(np.max(np.abs(new[idx] - volts[bus][idx]))))
            volts[bus] = new
        if update < tol:
            converged = True
            break

    voltages = {
        (b.id, p.value): complex(volts[b.id][PHASE_INDEX[p]])
        for b in network.buses for p in b.phases
    }
    currents = {
        (network.feeding_line[bus].id, p.value): complex(line_current[bus][PHASE_INDEX[p]])
        for bus in order for p in network.bus_map[bus].phases
    }
    residual = _power_mismatch(network, volts, line_current, loads)
    if not converged:
        logger.warning("power flow did not converge after %d sweeps (residual %.3e)",
                       iterations, residual)
    return PowerFlowSolution(voltages, currents, converged, iterations, residual)


def _power_mismatch(network, volts, line_current, loads) -> float:
    worst = 0.0
    for bus in network.bfs_order:
        idx = [PHASE_INDEX[p] for p in network.bus_map[bus].phases]
        net = line_current[bus].copy()
        for child in network.children[bus]:
            net -= line_current[child]
        s = volts[bus][idx] * np.conj(net[idx])
        worst = max(worst, float(np.max(np.abs(s - loads[bus][idx]))))
    return worst


def customer_injections(
    network: NetworkModel,
    p1: Mapping[str, float],
    q1: Optional[Mapping[str, float]] = None,
    p2: Optional[Mapping[str, float]] = None,
    q2: Optional[Mapping[str, float]] = None,
) -> Dict[str, complex]:
    """Complex power per customer: actives from (p1, q1), passives at forecast unless given."""
    q1 = q1 or {}
    p2 = p2 or {}
    q2 = q2 or {}
    out: Dict[str, complex] = {}
    for c in network.customers:
        if c.is_active:
            out[c.id] = complex(p1.get(c.id, 0.0), q1.get(c.id, 0.0))
        else:
            out[c.id] = complex(p2.get(c.id, c.p_forecast), q2.get(c.id, c.q_forecast))
    return out


@dataclass(frozen=True)
class Scenario:
    status: str  # export / import
    load: str  # high / low
    p_kw: float
    include_passive: bool = True

    @property
    def label(self) -> str:
        return f"{self.status}-{self.load}"

    def active_power(self) -> float:
        return -self.p_kw if self.status == "export" else self.p_kw


def table_scenarios(high_kw: float = 3.0, low_kw: float = 1.0) -> List[Scenario]:
    return [
        Scenario(status, load, p)
        for status in ("export", "import")
        for load, p in (("high", high_kw), ("low", low_kw))
    ]


def _scenario_errors(network: NetworkModel, ls: LinearSystem,
                     scenario: Scenario) -> Dict[str, object]:
    ordering = ls.ordering
    p1 = np.full(len(ordering.active), scenario.active_power())
    q1 = np.zeros_like(p1)
    if scenario.include_passive:
        p2, q2 = ls.forecasts()
    else:
        p2 = q2 = np.zeros(len(ordering.passive))
    v_lin = ls.voltages(p1, q1, p2, q2)

    inj = {cid: complex(p, 0.0) for cid, p in zip(ordering.active, p1)}
    inj.update({cid: complex(p, q) for cid, p, q in zip(ordering.passive, p2, q2)})
    sol = solve_acpf(network, inj)
    v_ac = np.array([sol.voltages[(bus, ph.value)] for bus, ph in ordering.nodes])
    err = np.abs(np.abs(v_lin) - np.abs(v_ac))
    return {
        "status": scenario.status,
        "load": scenario.load,
        "avg_vm_error": float(err.mean()),
        "max_vm_error": float(err.max()),
        "converged": sol.converged,
    }


def linearization_error_report(
    network: NetworkModel,
    op: Optional[OperatingPoint] = None,
    scenarios: Optional[Sequence[Scenario]] = None,
    max_workers: int = 4,
) -> List[Dict[str, object]]:
    """Linear-model vs exact voltage-magnitude errors, one row per scenario."""
    ls = assemble(network, op)
    scenarios = list(scenarios or table_scenarios())
    rows = run_batch(lambda s: _scenario_errors(network, ls, s), scenarios,
                     max_workers=max_workers, description="Power flows...")
    for row in rows:
        if not row["converged"]:
            logger.warning("scenario %s-%s did not converge", row["status"], row["load"])
    return rows


class RealizationPolicy(str, Enum):
    FORECAST = "forecast"
    SAMPLED = "sampled"


@dataclass
class AuditReport:
    worst_vm: float
    worst_violation: float
    violations: List[Tuple[str, float]] = field(default_factory=list)
    runs: int = 1
    failed_convergence: int = 0
    lin_slack: float = 0.02

    @property
    def within_slack(self) -> bool:
        return self.worst_violation <= self.lin_slack and self.failed_convergence == 0

    def to_payload(self) -> Dict[str, object]:
        return {
            "worst_vm": round(self.worst_vm, 9),
            "worst_violation": round(self.worst_violation, 9),
            "violations": [{"node": n, "violation": round(v, 9)} for n, v in self.violations],
            "runs": self.runs,
            "failed_convergence": self.failed_convergence,
            "lin_slack": self.lin_slack,
            "within_slack": self.within_slack,
        }


def network_with_impedance(network: NetworkModel, ls: LinearSystem,
                           vec_e: np.ndarray) -> NetworkModel:
    """Copy of ``network`` whose line impedances are read back from a realized E."""
    m = ls.ordering.m
    E = np.asarray(vec_e, dtype=float).reshape(2 * m, 2 * m, order="F")
    R, X = E[:m, :m], E[m:, :m]
    zb = network.z_base
    by_bus = {bus: network.feeding_line[bus] for bus in network.bfs_order}
    lines: Dict[str, Line] = {}
    for bus, line in by_bus.items():
        z = line.z.copy()
        for phase in network.bus_map[bus].phases:
            k = ls.ordering.index[(bus, phase)]
            for other in network.bus_map[bus].phases:
                j = ls.ordering.index[(bus, other)]
                z[PHASE_INDEX[phase], PHASE_INDEX[other]] = complex(R[k, j], X[k, j]) * zb
        lines[line.id] = Line(line.id, line.from_bus, line.to_bus, z)
    return replace(network, lines=tuple(lines.get(ln.id, ln) for ln in network.lines))


def _node_violations(network: NetworkModel,
                     sol: PowerFlowSolution) -> Tuple[float, List[Tuple[str, float]]]:
    worst_vm = 1.0
    found: List[Tuple[str, float]] = []
    for (bus, phase), v in sol.voltages.items():
        b = network.bus_map[bus]
        if b.is_reference:
            continue
        mag = abs(v)
        violation = max(mag - b.vmax, b.vmin - mag, 0.0)
        if abs(mag - 1.0) > abs(worst_vm - 1.0):
            worst_vm = mag
        if violation > 0:
            found.append((f"{bus}.{phase}", violation))
    return worst_vm, found


def feasibility_audit(
    network: NetworkModel,
    envelope: EnvelopeResult,
    policy: RealizationPolicy = RealizationPolicy.FORECAST,
    ls: Optional[LinearSystem] = None,
    e_samples: Optional[np.ndarray] = None,
    p2_samples: Optional[np.ndarray] = None,
    lin_slack: float = 0.02,
    max_workers: int = 4,
) -> AuditReport:
    """Exact voltages with every active customer at its envelope simultaneously.

    SAMPLED evaluates one power flow per row of ``e_samples`` (realized vec(E)) and/or
    ``p2_samples`` (passive active power, kW).
    """
    ls = ls or assemble(network)
    q2 = envelope.q2_kvar or None
    if policy == RealizationPolicy.FORECAST:
        realizations = [(network, None)]
    else:
        if e_samples is None and p2_samples is None:
            raise ValueError("sampled audit needs impedance or demand samples")
        n = len(e_samples) if e_samples is not None else len(p2_samples)  # type: ignore[arg-type]
        realizations = []
        for k in range(n):
            net = (network if e_samples is None
                   else network_with_impedance(network, ls, e_samples[k]))
            p2 = None if p2_samples is None else dict(zip(ls.ordering.passive, p2_samples[k]))
            realizations.append((net, p2))

    def run(item):
        net, p2 = item
        inj = customer_injections(net, envelope.envelopes_kw, envelope.q1_kvar, p2, q2)
        return net, solve_acpf(net, inj)

    worst_vm, worst_violation, failed = 1.0, 0.0, 0
    merged: Dict[str, float] = {}
    for net, sol in run_batch(run, realizations, max_workers=max_workers,
                              description="Auditing envelopes..."):
        if not sol.converged:
            failed += 1
            continue
        vm, found = _node_violations(net, sol)
        if abs(vm - 1.0) > abs(worst_vm - 1.0):
            worst_vm = vm
        for node, v in found:
            merged[node] = max(merged.get(node, 0.0), v)
            worst_violation = max(worst_violation, v)
    report = AuditReport(worst_vm, worst_violation, sorted(merged.items()), len(realizations),
                         failed, lin_slack)
    logger.info("audit over %d realization(s): worst |V|=%.5f, worst violation %.3e p.u.",
                report.runs, report.worst_vm, report.worst_violation)
    return report
