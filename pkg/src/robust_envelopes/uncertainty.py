from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError
from scipy.stats import chi2

from .conic import Affine, ConicProgram, add_norm_epigraph, solve
from .csv_io import read_text_file
from .lintopf import LinearSystem
from .models import (
    BallRecord,
    Coupling,
    DemandUncertainty,
    ImpedanceUncertainty,
    Parameterization,
    UncertaintyFile,
)
from .norms import NormKind


logger = logging.getLogger(__name__)

__all__ = [
    "AffineNormBall",
    "NormKind",
    "UncertainComponent",
    "UncertaintyError",
    "UncertaintyModel",
    "UnsupportedUncertaintyError",
    "build_uncertainty_model",
    "chi_square_radius",
    "extreme_points",
    "load_uncertainty",
    "read_uncertainty_file",
    "membership",
    "sample",
    "support",
    "support_intersection",
    "vertices",
]

MEMBERSHIP_TOL = 1e-9
MAX_REJECTION_TRIES = 1_000_000


class UncertaintyError(ValueError):
    """Raised for malformed uncertainty sets or values outside their affine span."""


class UnsupportedUncertaintyError(UncertaintyError):
    """Raised when a set is valid but outside what a reformulation supports."""


@dataclass(frozen=True, eq=False)
class AffineNormBall:
    """{center + map @ x : ||x|| <= radius}."""

    center: np.ndarray
    map: np.ndarray
    radius: float
    norm: NormKind

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).reshape(-1)
        mapping = np.atleast_2d(np.asarray(self.map, dtype=float))
        if mapping.shape[0] != center.size:
            raise UncertaintyError(
                f"map has {mapping.shape[0]} rows but the center has {center.size} entries"
            )
        if self.radius < 0 or not np.isfinite(self.radius):
            raise UncertaintyError(f"radius must be finite and >= 0 (got {self.radius})")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "map", mapping)
        object.__setattr__(self, "norm", NormKind.parse(
            self.norm.value if isinstance(self.norm, NormKind) else self.norm))

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def latent_dim(self) -> int:
        return self.map.shape[1]

    def same_shape(self, other: "AffineNormBall") -> bool:
        return (self.map.shape == other.map.shape and np.array_equal(self.center, other.center)
                and np.array_equal(self.map, other.map))


def support(ball: AffineNormBall, y: np.ndarray) -> float:
    """sup of y'e over the ball: center'y + radius * ||map'y||_dual."""
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != ball.dim:
        raise UncertaintyError(f"support direction has {y.size} entries, ball has {ball.dim}")
    return float(ball.center @ y + ball.radius * ball.norm.dual.evaluate(ball.map.T @ y))


def support_intersection(balls: Sequence[AffineNormBall], y: np.ndarray,
                         solver=None) -> Tuple[float, List[np.ndarray]]:
    """Support of an intersection of balls by the optimal split y = sum_j tau_j.

    Returns the value and the split directions. One ball needs no split.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(balls) == 1:
        return support(balls[0], y), [y]
    program = ConicProgram("support-split")
    taus = [program.add_variables(y.size, f"tau{j}") for j in range(1, len(balls))]
    free = Affine.constant(y)
    for tau in taus:
        free = free - Affine.variables(tau)
    parts = [free] + [Affine.variables(tau) for tau in taus]
    total = Affine.constant(0.0)
    for j, (ball, part) in enumerate(zip(balls, parts)):
        bound = program.add_variables(1, f"a{j}")
        add_norm_epigraph(program, ball.norm.dual, part.map(ball.map.T),
                          Affine.variables(bound), name=f"dual{j}")
        total = total + part.dot(ball.center) + Affine.variables(bound) * ball.radius
    program.maximize(-total)
    report = solve(program, solver)
    if not report.optimal:
        raise UncertaintyError(f"support split LP ended {report.status.value}")
    return -report.objective, [part.evaluate(report.x) for part in parts]


def chi_square_radius(n: int, epsilon: float) -> float:
    """sqrt of the (1 - epsilon) chi-square quantile with n degrees of freedom."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    return float(math.sqrt(chi2.ppf(1.0 - epsilon, n)))


def vertices(n: int, rho1: float, n_t: int = 1) -> np.ndarray:
    """Extreme points of {||x||_inf <= rho1, ||x||_1 <= n_t * rho1}: +/- rho1 e_k for n_t = 1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n_t != 1:
        count = 2 ** n_t * math.comb(n, n_t) if n_t <= n else 2 ** n
        raise UnsupportedUncertaintyError(
            f"only n_t = 1 is supported; n_t = {n_t} has 2^n_t * C(n, n_t) = {count} extreme points"
        )
    out = np.zeros((2 * n, n))
    for k in range(n):
        out[2 * k, k] = rho1
        out[2 * k + 1, k] = -rho1
    return out


@dataclass(frozen=True, eq=False)
class UncertainComponent:
    """Uncertain entries ``indices`` of a parameter vector, limited to an intersection of balls.

    ``structure`` maps physical parameters onto the entries (R/X tied across the real
    expansion); ``parameters`` holds their nominal values.
    """

    name: str
    nominal: np.ndarray
    indices: np.ndarray
    balls: Tuple[AffineNormBall, ...]
    structure: np.ndarray
    parameters: np.ndarray
    labels: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not 1 <= len(self.balls) <= 2:
            raise UncertaintyError(f"{self.name}: one or two balls expected")
        for ball in self.balls:
            if ball.dim != self.indices.size:
                raise UncertaintyError(
                    f"{self.name}: ball dimension {ball.dim} != {self.indices.size} entries"
                )

    @property
    def size(self) -> int:
        return self.indices.size

    @property
    def shared_latent(self) -> bool:
        return len(self.balls) == 2 and self.balls[0].same_shape(self.balls[1])

    @property
    def nominal_entries(self) -> np.ndarray:
        return self.nominal[self.indices]

    @property
    def is_nominal_point(self) -> bool:
        """True when every ball collapses onto the nominal entries."""
        return all(b.radius == 0 and np.allclose(b.center, self.nominal_entries, atol=0, rtol=0)
                   for b in self.balls)

    def expand(self, entries: np.ndarray) -> np.ndarray:
        entries = np.atleast_2d(entries)
        out = np.tile(self.nominal, (entries.shape[0], 1))
        out[:, self.indices] = entries
        return out

    def support(self, y: np.ndarray) -> float:
        return support_intersection(self.balls, y)[0]


@dataclass(frozen=True)
class UncertaintyModel:
    impedance: Optional[UncertainComponent] = None
    demand_p: Optional[UncertainComponent] = None
    demand_q: Optional[UncertainComponent] = None

    def component(self, name: str) -> UncertainComponent:
        found = {"E": self.impedance, "p2": self.demand_p, "q2": self.demand_q}.get(name)
        if found is None:
            raise UncertaintyError(f"uncertainty model has no {name!r} component")
        return found

    def describe(self) -> Dict[str, object]:
        out: Dict[str, object] = {}
        for key, comp in (("E", self.impedance), ("p2", self.demand_p), ("q2", self.demand_q)):
            if comp is not None:
                out[key] = {
                    "entries": comp.size,
                    "balls": [{"norm": b.norm.value, "radius": b.radius} for b in comp.balls],
                    "shared_latent": comp.shared_latent,
                }
        return out


def _ball_from_record(record: BallRecord, nominal_entries: np.ndarray,
                      structure: np.ndarray, parameters: np.ndarray) -> AffineNormBall:
    if isinstance(record.center, str):
        center = nominal_entries
    else:
        center = np.asarray(record.center, dtype=float)
        if center.size != nominal_entries.size:
            raise UncertaintyError(
                f"center has {center.size} entries, {nominal_entries.size} expected"
            )
    if record.map == "diag-of-center":
        mapping = structure @ np.diag(parameters)
    elif record.map == "identity":
        mapping = structure
    else:
        mapping = np.asarray(record.map, dtype=float)
    return AffineNormBall(center, mapping, record.radius, NormKind.parse(record.norm))


def _impedance_structure(
    ls: LinearSystem,
    lines: Union[str, Sequence[str]],
    coupling: Coupling,
    parameterization: Parameterization,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, Tuple[str, ...]]:
    """(vec(E) indices, structure, parameter values, labels) for the designated entries."""
    network = ls.network
    m = ls.ordering.m
    n2 = 2 * m
    known = {line.id for line in network.lines}
    chosen = set(known) if lines == "all" else set(lines)
    unknown = chosen - known
    if unknown:
        raise UncertaintyError(f"unknown line(s): {', '.join(sorted(unknown))}")

    def vec_index(row: int, col: int) -> int:
        return col * n2 + row

    params: List[Tuple[str, List[Tuple[int, float]]]] = []
    for bus in network.bfs_order:
        line = network.feeding_line[bus]
        if line.id not in chosen:
            continue
        phases = network.bus_map[bus].phases
        for a, pa in enumerate(phases):
            for pb in phases[a:]:
                if coupling == Coupling.SELF and pa != pb:
                    continue
                if coupling == Coupling.MUTUAL and pa == pb:
                    continue
                k = ls.ordering.index[(bus, pa)]
                j = ls.ordering.index[(bus, pb)]
                pairs = {(k, j), (j, k)}
                r_entries = [(vec_index(r, c), 1.0) for r, c in pairs]
                r_entries += [(vec_index(m + r, m + c), 1.0) for r, c in pairs]
                x_entries = [(vec_index(m + r, c), 1.0) for r, c in pairs]
                x_entries += [(vec_index(r, m + c), -1.0) for r, c in pairs]
                tag = f"{line.id}:{pa.value}{pb.value}"
                params.append((f"R[{tag}]", r_entries))
                params.append((f"X[{tag}]", x_entries))
    if not params:
        raise UncertaintyError("no impedance entries selected")

    indices = np.array(sorted({i for _, entries in params for i, _ in entries}), dtype=np.int64)
    position = {int(i): s for s, i in enumerate(indices)}
    vec_e = ls.E.reshape(-1, order="F")
    if parameterization == Parameterization.ENTRIES:
        labels = tuple(f"E[{int(i) % n2},{int(i) // n2}]" for i in indices)
        return indices, np.eye(indices.size), vec_e[indices], labels

    structure = np.zeros((indices.size, len(params)))
    values = np.zeros(len(params))
    for col, (_, entries) in enumerate(params):
        for i, sign in entries:
            structure[position[i], col] = sign
        first, sign = entries[0]
        values[col] = vec_e[first] * sign
    return indices, structure, values, tuple(label for label, _ in params)


def impedance_component(ls: LinearSystem, spec: ImpedanceUncertainty) -> UncertainComponent:
    indices, structure, params, labels = _impedance_structure(
        ls, spec.lines, spec.coupling, spec.parameterization)
    nominal = ls.E.reshape(-1, order="F").copy()
    balls = tuple(_ball_from_record(b, nominal[indices], structure, params) for b in spec.balls)
    return UncertainComponent("E", nominal, indices, balls, structure, params, labels)


def demand_component(ls: LinearSystem, spec: DemandUncertainty, reactive: bool = False
                     ) -> UncertainComponent:
    p2, q2 = ls.forecasts()
    nominal = (q2 if reactive else p2).copy()
    passive = list(ls.ordering.passive)
    chosen = passive if spec.customers == "passive" else list(spec.customers)
    missing = [c for c in chosen if c not in passive]
    if missing:
        raise UncertaintyError(f"not passive customers: {', '.join(missing)}")
    indices = np.array(sorted(passive.index(c) for c in chosen), dtype=np.int64)
    structure = np.eye(indices.size)
    params = nominal[indices]
    balls = tuple(_ball_from_record(b, nominal[indices], structure, params) for b in spec.balls)
    name = "q2" if reactive else "p2"
    return UncertainComponent(name, nominal, indices, balls, structure, params,
                              tuple(passive[i] for i in indices))


def build_uncertainty_model(ls: LinearSystem, doc: UncertaintyFile) -> UncertaintyModel:
    return UncertaintyModel(
        impedance=impedance_component(ls, doc.impedance) if doc.impedance else None,
        demand_p=demand_component(ls, doc.demand_p) if doc.demand_p else None,
        demand_q=demand_component(ls, doc.demand_q, reactive=True) if doc.demand_q else None,
    )


def read_uncertainty_file(path: Path) -> UncertaintyFile:
    path = Path(path)
    if not path.exists():
        raise UncertaintyError(f"Uncertainty file not found: {path}")
    try:
        return UncertaintyFile.model_validate(json.loads(read_text_file(path)))
    except (json.JSONDecodeError, ValidationError) as exc:
        raise UncertaintyError(f"{path}: {exc}") from exc


def load_uncertainty(path: Path, ls: LinearSystem) -> UncertaintyModel:
    model = build_uncertainty_model(ls, read_uncertainty_file(path))
    logger.info("loaded uncertainty model %s", model.describe())
    return model


def _latent(ball: AffineNormBall, entries: np.ndarray) -> np.ndarray:
    delta = entries - ball.center
    x, *_ = np.linalg.lstsq(ball.map, delta, rcond=None)
    if np.linalg.norm(ball.map @ x - delta) > MEMBERSHIP_TOL * (1.0 + np.linalg.norm(delta)):
        raise UncertaintyError("value lies outside the affine span of the uncertainty set")
    return x


def membership(model: UncertaintyModel, component: str, value: np.ndarray) -> bool:
    """True iff ``value`` (full vector: vec(E), p2 or q2) lies in the component's set."""
    comp = model.component(component)
    value = np.asarray(value, dtype=float).reshape(-1)
    if value.size != comp.nominal.size:
        raise UncertaintyError(
            f"{component}: expected {comp.nominal.size} entries, got {value.size}")
    fixed = np.ones(value.size, dtype=bool)
    fixed[comp.indices] = False
    if np.any(np.abs(value[fixed] - comp.nominal[fixed]) > MEMBERSHIP_TOL):
        raise UncertaintyError(f"{component}: value changes entries that are not uncertain")
    entries = value[comp.indices]
    return all(b.norm.evaluate(_latent(b, entries)) <= b.radius + MEMBERSHIP_TOL
               for b in comp.balls)


def _uniform_ball(rng: np.random.Generator, norm: NormKind, radius: float, k: int) -> np.ndarray:
    if k == 0:
        return np.zeros(0)
    if norm is NormKind.LINF:
        return rng.uniform(-radius, radius, size=k)
    if norm is NormKind.L2:
        direction = rng.standard_normal(k)
        direction /= np.linalg.norm(direction) or 1.0
        return direction * radius * rng.uniform() ** (1.0 / k)
    weights = rng.exponential(size=k + 1)
    signs = rng.choice([-1.0, 1.0], size=k)
    return signs * radius * weights[:k] / weights.sum()


def sample(model: UncertaintyModel, component: str, seed: Union[int, np.random.Generator] = 42,
           size: Optional[int] = None) -> np.ndarray:
    """Uniform latent draws from the first ball, rejected against the second.

    Returns one full vector, or ``size`` of them stacked.
    """
    comp = model.component(component)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    first, rest = comp.balls[0], comp.balls[1:]
    out = np.empty((size or 1, comp.size))
    for n in range(out.shape[0]):
        for _ in range(MAX_REJECTION_TRIES):
            entries = first.center + first.map @ _uniform_ball(rng, first.norm, first.radius,
                                                              first.latent_dim)
            if all(b.norm.evaluate(_latent(b, entries)) <= b.radius + MEMBERSHIP_TOL
                   for b in rest):
                out[n] = entries
                break
        else:
            raise UncertaintyError(
                f"{component}: rejection sampling failed after {MAX_REJECTION_TRIES} tries"
            )
    full = comp.expand(out)
    return full[0] if size is None else full


def extreme_points(comp: UncertainComponent) -> Tuple[np.ndarray, np.ndarray]:
    """Latent extreme points of a cross-polytope style set and the map taking them to entries.

    Accepts one L1 ball, or an LInf ball intersected with an L1 ball of the same center and
    map whose radius does not exceed the box radius (n_t = 1).
    """
    norms = [b.norm for b in comp.balls]
    if len(comp.balls) == 1 and norms[0] is NormKind.L1:
        ball = comp.balls[0]
        return vertices(ball.latent_dim, ball.radius), ball.map
    if len(comp.balls) == 2 and comp.shared_latent and set(norms) == {NormKind.L1, NormKind.LINF}:
        box = comp.balls[norms.index(NormKind.LINF)]
        cross = comp.balls[norms.index(NormKind.L1)]
        if box.radius == 0:
            return np.zeros((1, box.latent_dim)), box.map
        n_t = int(math.ceil(cross.radius / box.radius - 1e-12))
        if n_t <= 1:
            return vertices(box.latent_dim, min(box.radius, cross.radius)), box.map
        return vertices(box.latent_dim, box.radius, n_t), box.map
    raise UnsupportedUncertaintyError(
        f"{comp.name}: extreme points need an L1 ball or an Inf-norm box cut by an L1 ball "
        f"with shared center and map (got {', '.join(n.value for n in norms)})"
    )
