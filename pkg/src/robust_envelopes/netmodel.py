from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import networkx as nx
import numpy as np
from pydantic import ValidationError

from .csv_io import read_text_file
from .models import (
    NETWORK_VERSION,
    BaseRecord,
    BusRecord,
    CustomerKind,
    CustomerRecord,
    LineRecord,
    NetworkFile,
    Phase,
    PolarVoltage,
)


logger = logging.getLogger(__name__)

PHASES: Tuple[Phase, ...] = (Phase.A, Phase.B, Phase.C)
PHASE_INDEX: Dict[Phase, int] = {p: k for k, p in enumerate(PHASES)}


class NetworkParseError(ValueError):
    """Raised when a network file cannot be read or does not match the schema."""


class NetworkValidationError(ValueError):
    """Raised when a parsed network violates a structural invariant."""

    def __init__(self, problems: List[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


@dataclass(frozen=True)
class Bus:
    id: str
    vmin: float
    vmax: float
    is_reference: bool
    phases: Tuple[Phase, ...] = PHASES


@dataclass(frozen=True, eq=False)
class Line:
    id: str
    from_bus: str
    to_bus: str
    z: np.ndarray  # 3x3 complex, ohms

    def endpoints(self) -> frozenset:
        return frozenset((self.from_bus, self.to_bus))


@dataclass(frozen=True)
class Customer:
    id: str
    bus: str
    phase: Phase
    kind: CustomerKind
    p_bounds: Tuple[float, float] = (-7.0, 7.0)
    q_bounds: Tuple[float, float] = (-1.0, 1.0)
    p_forecast: float = 0.0
    q_forecast: float = 0.0
    weight: float = 1.0

    @property
    def is_active(self) -> bool:
        return self.kind == CustomerKind.ACTIVE


@dataclass(frozen=True, eq=False)
class NetworkModel:
    name: str
    s_base_kva: float
    v_base_volt: float
    v_ref_polar: Tuple[Tuple[float, float], ...]
    buses: Tuple[Bus, ...]
    lines: Tuple[Line, ...]
    customers: Tuple[Customer, ...] = field(default_factory=tuple)

    @cached_property
    def v_ref(self) -> np.ndarray:
        return np.array([m * np.exp(1j * np.deg2rad(a)) for m, a in self.v_ref_polar])

    @property
    def z_base(self) -> float:
        return self.v_base_volt ** 2 / (self.s_base_kva * 1000.0)

    @cached_property
    def bus_map(self) -> Dict[str, Bus]:
        return {b.id: b for b in self.buses}

    @cached_property
    def reference(self) -> Bus:
        return next(b for b in self.buses if b.is_reference)

    @cached_property
    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(b.id for b in self.buses)
        for line in self.lines:
            g.add_edge(line.from_bus, line.to_bus, line=line.id)
        return g

    @cached_property
    def parent(self) -> Dict[str, str]:
        """Child bus -> parent bus, oriented away from the reference."""
        return {child: par for par, child in nx.bfs_edges(self.graph, self.reference.id)}

    @cached_property
    def bfs_order(self) -> List[str]:
        """Non-reference buses in breadth-first order from the reference."""
        return [child for _, child in nx.bfs_edges(self.graph, self.reference.id)]

    @cached_property
    def children(self) -> Dict[str, List[str]]:
        out: Dict[str, List[str]] = {b.id: [] for b in self.buses}
        for child in self.bfs_order:
            out[self.parent[child]].append(child)
        return out

    @cached_property
    def feeding_line(self) -> Dict[str, Line]:
        """Non-reference bus -> the line connecting it to its parent."""
        by_pair = {line.endpoints(): line for line in self.lines}
        return {c: by_pair[frozenset((self.parent[c], c))] for c in self.bfs_order}

    @property
    def active(self) -> List[Customer]:
        return [c for c in self.customers if c.is_active]

    @property
    def passive(self) -> List[Customer]:
        return [c for c in self.customers if not c.is_active]

    def line(self, line_id: str) -> Line:
        for line in self.lines:
            if line.id == line_id:
                return line
        raise KeyError(line_id)

    def to_document(self) -> Dict[str, Any]:
        doc = NetworkFile(
            version=NETWORK_VERSION,
            name=self.name,
            base=BaseRecord(s_kva=self.s_base_kva, v_volt=self.v_base_volt),
            v_ref=[PolarVoltage(mag=m, angle_deg=a) for m, a in self.v_ref_polar],
            buses=[
                BusRecord(id=b.id, vmin=b.vmin, vmax=b.vmax, is_reference=b.is_reference,
                          phases="".join(p.value for p in b.phases))
                for b in self.buses
            ],
            lines=[
                LineRecord(id=line.id, **{"from": line.from_bus, "to": line.to_bus},
                           z=[[(float(v.real), float(v.imag)) for v in row] for row in line.z])
                for line in self.lines
            ],
            customers=[
                CustomerRecord(id=c.id, bus=c.bus, phase=c.phase.value, kind=c.kind.value,
                               p_bounds=c.p_bounds, q_bounds=c.q_bounds,
                               p_forecast=c.p_forecast, q_forecast=c.q_forecast,
                               weight=c.weight)
                for c in self.customers
            ],
        )
        return doc.model_dump(mode="json", by_alias=True)


def network_from_document(doc: NetworkFile) -> NetworkModel:
    buses = tuple(
        Bus(b.id, b.vmin, b.vmax, b.is_reference, tuple(Phase(p) for p in b.phases))
        for b in doc.buses
    )
    lines = tuple(
        Line(
            id=rec.id or f"{rec.from_bus}-{rec.to_bus}",
            from_bus=rec.from_bus,
            to_bus=rec.to_bus,
            z=np.array([[complex(re, im) for re, im in row] for row in rec.z]),
        )
        for rec in doc.lines
    )
    customers = tuple(
        Customer(c.id, c.bus, c.phase, c.kind, tuple(c.p_bounds), tuple(c.q_bounds),
                 c.p_forecast, c.q_forecast, c.weight)
        for c in doc.customers
    )
    return NetworkModel(
        name=doc.name,
        s_base_kva=doc.base.s_kva,
        v_base_volt=doc.base.v_volt,
        v_ref_polar=tuple((v.mag, v.angle_deg) for v in doc.v_ref),
        buses=buses,
        lines=lines,
        customers=customers,
    )


def validate_network(network: NetworkModel) -> NetworkModel:
    problems: List[str] = []
    ids = [b.id for b in network.buses]
    if len(set(ids)) != len(ids):
        problems.append("duplicate bus id")
    refs = [b.id for b in network.buses if b.is_reference]
    if len(refs) != 1:
        problems.append(f"expected exactly one reference bus, found {len(refs)}")
    for b in network.buses:
        if not 0 < b.vmin < b.vmax:
            problems.append(f"bus {b.id}: need 0 < vmin < vmax")
    if problems:
        raise NetworkValidationError(problems)

    if not network.lines or len(network.buses) < 2:
        raise NetworkValidationError(["no reference-connected tree"])

    line_ids = [line.id for line in network.lines]
    if len(set(line_ids)) != len(line_ids):
        problems.append("duplicate line id")
    pairs = set()
    for line in network.lines:
        for end in (line.from_bus, line.to_bus):
            if end not in network.bus_map:
                problems.append(f"line {line.id}: unknown bus {end}")
        if line.from_bus == line.to_bus:
            problems.append(f"line {line.id}: self loop")
        if line.endpoints() in pairs:
            problems.append(f"line {line.id}: parallel line (cycle)")
        pairs.add(line.endpoints())
        z = np.asarray(line.z)
        if z.shape != (3, 3):
            problems.append(f"line {line.id}: impedance must be 3x3")
            continue
        if not np.allclose(z, z.T, atol=1e-9):
            problems.append(f"line {line.id}: impedance matrix not symmetric")
        if np.any(np.diag(z).real <= 0):
            problems.append(f"line {line.id}: diagonal resistance must be positive")
    if problems:
        raise NetworkValidationError(problems)

    g = network.graph
    if not nx.is_connected(g):
        reach = nx.node_connected_component(g, network.reference.id)
        orphans = sorted(set(g.nodes) - reach)
        problems.append(f"buses not reachable from reference: {', '.join(orphans)}")
    elif not nx.is_tree(g):
        problems.append("network is not radial (cycle detected)")
    if problems:
        raise NetworkValidationError(problems)

    if set(network.reference.phases) != set(PHASES):
        problems.append("reference bus must carry phases a, b and c")
    for child in network.bfs_order:
        parent = network.bus_map[network.parent[child]]
        if not set(network.bus_map[child].phases) <= set(parent.phases):
            problems.append(f"bus {child}: phases must be a subset of parent {parent.id}")

    cust_ids = [c.id for c in network.customers]
    if len(set(cust_ids)) != len(cust_ids):
        problems.append("duplicate customer id")
    for c in network.customers:
        bus = network.bus_map.get(c.bus)
        if bus is None:
            problems.append(f"customer {c.id}: unknown bus {c.bus}")
            continue
        if bus.is_reference:
            problems.append(f"customer {c.id}: customers cannot connect to the reference bus")
        if c.phase not in bus.phases:
            problems.append(f"customer {c.id}: phase {c.phase.value} absent at bus {c.bus}")
        if not (c.p_bounds[0] < c.p_bounds[1] and c.q_bounds[0] < c.q_bounds[1]):
            problems.append(f"customer {c.id}: degenerate bounds")
    if problems:
        raise NetworkValidationError(problems)
    return network


def parse_network(raw: Dict[str, Any]) -> NetworkModel:
    try:
        doc = NetworkFile.model_validate(raw)
    except ValidationError as exc:
        raise NetworkParseError(str(exc)) from exc
    return validate_network(network_from_document(doc))


def load_network(path: Path) -> NetworkModel:
    """Load and validate a network file."""
    path = Path(path)
    if not path.exists():
        raise NetworkParseError(f"Network file not found: {path}")
    try:
        raw = json.loads(read_text_file(path))
    except json.JSONDecodeError as exc:
        raise NetworkParseError(f"{path}: invalid JSON ({exc})") from exc
    network = parse_network(raw)
    logger.info("loaded network %s: %d buses, %d lines, %d customers", network.name,
                len(network.buses), len(network.lines), len(network.customers))
    return network


def save_network(network: NetworkModel, path: Path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as f:
        json.dump(network.to_document(), f, indent=2)
        f.write("\n")
    return path


def bundled_network_path(name: str = "twobus") -> Path:
    return Path(__file__).parent / "data" / f"{name}.json"


def load_bundled_network(name: str = "twobus") -> NetworkModel:
    return load_network(bundled_network_path(name))


@dataclass(frozen=True)
class IncidenceOrdering:
    buses: Tuple[str, ...]
    lines: Tuple[str, ...]


def incidence(network: NetworkModel) -> Tuple[np.ndarray, IncidenceOrdering]:
    """Bus-by-line incidence over non-reference buses.

    Line k feeds bus k (breadth-first order); +1 where a line leaves the bus toward the
    reference, -1 where it continues away from it.
    """
    order = network.bfs_order
    pos = {bus: k for k, bus in enumerate(order)}
    mat = np.zeros((len(order), len(order)), dtype=int)
    for k, bus in enumerate(order):
        mat[k, k] = 1
        parent = network.parent[bus]
        if parent in pos:
            mat[pos[parent], k] = -1
    lines = tuple(network.feeding_line[b].id for b in order)
    return mat, IncidenceOrdering(tuple(order), lines)


def random_radial_network(
    n_buses: int,
    seed: int = 42,
    s_kva: float = 1.0,
    v_volt: float = 230.0,
    passive_forecast: Tuple[float, float] = (0.5, 2.0),
    name: Optional[str] = None,
) -> NetworkModel:
    """Random recursive tree with coupled three-phase lines and one active plus one
    passive customer per non-reference bus."""
    if n_buses < 2:
        raise ValueError("need at least two buses")
    rng = np.random.default_rng(seed)
    buses = [Bus("1", 0.95, 1.05, True)]
    lines: List[Line] = []
    customers: List[Customer] = []
    for k in range(2, n_buses + 1):
        parent = int(rng.integers(1, k))
        buses.append(Bus(str(k), 0.95, 1.05, False))
        r_self = rng.uniform(0.05, 0.15)
        x_self = rng.uniform(0.03, 0.10)
        z = np.empty((3, 3), dtype=complex)
        for i in range(3):
            for j in range(i, 3):
                if i == j:
                    val = complex(r_self * rng.uniform(0.95, 1.05),
                                  x_self * rng.uniform(0.95, 1.05))
                else:
                    val = complex(r_self * rng.uniform(0.3, 0.5), x_self * rng.uniform(0.3, 0.5))
                z[i, j] = z[j, i] = val
        lines.append(Line(f"{parent}-{k}", str(parent), str(k), z))
        ph_active, ph_passive = rng.choice(3, size=2, replace=False)
        customers.append(Customer(f"a{k}", str(k), PHASES[ph_active], CustomerKind.ACTIVE))
        customers.append(Customer(
            f"p{k}", str(k), PHASES[ph_passive], CustomerKind.PASSIVE,
            p_forecast=round(float(rng.uniform(*passive_forecast)), 3),
            q_forecast=round(float(rng.uniform(0.1, 0.5)), 3),
        ))
    network = NetworkModel(
        name=name or f"random-{n_buses}-{seed}",
        s_base_kva=s_kva,
        v_base_volt=v_volt,
        v_ref_polar=((1.0, 0.0), (1.0, -120.0), (1.0, 120.0)),
        buses=tuple(buses),
        lines=tuple(lines),
        customers=tuple(customers),
    )
    return validate_network(network)
