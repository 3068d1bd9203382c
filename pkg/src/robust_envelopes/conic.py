from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
from scipy.optimize import linprog
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt, wait_exponential

from .norms import NormKind


logger = logging.getLogger(__name__)

DUMP_HEADER = "# conic-program v1"


class ProgramError(ValueError):
    """Raised when a program is malformed (bad indices, overlapping cones, bad dump file)."""


class BackendError(RuntimeError):
    """Raised for unknown, duplicate or failing solver backends."""


class TransientBackendError(BackendError):
    """A backend failure worth retrying (licence checkout, busy worker, ...)."""


class SolverStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical-failure"


class ConeKind(str, Enum):
    NONNEG = "nonneg"
    SOC = "soc"


@dataclass(frozen=True)
class Cone:
    kind: ConeKind
    indices: Tuple[int, ...]


@dataclass(frozen=True)
class SolverOptions:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iter: int = 200
    presolve: bool = True
    backend: str = "bundled"
    regularization: float = 1e-10
    refinement_steps: int = 3
    step_fraction: float = 0.99


@dataclass
class SolverReport:
    status: SolverStatus
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    objective: float
    primal_residual: float = float("nan")
    dual_residual: float = float("nan")
    gap: float = float("nan")
    relative_gap: float = float("nan")
    iterations: int = 0
    wall_time: float = 0.0
    backend: str = "bundled"
    message: str = ""
    trace: List[Dict[str, float]] = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == SolverStatus.OPTIMAL


class Affine:
    """Vector-valued affine expression ``coef @ x[cols] + const`` over program variables."""

    __slots__ = ("cols", "coef", "const")

    def __init__(self, cols: Iterable[int], coef: np.ndarray, const: Union[np.ndarray, float]):
        cols = np.asarray(list(cols) if not isinstance(cols, np.ndarray) else cols, dtype=np.int64)
        const = np.atleast_1d(np.asarray(const, dtype=float)).reshape(-1)
        coef = np.asarray(coef, dtype=float).reshape(const.size, cols.size)
        if cols.size and (np.unique(cols).size != cols.size or np.any(np.diff(cols) < 0)):
            uniq, inverse = np.unique(cols, return_inverse=True)
            merged = np.zeros((const.size, uniq.size))
            np.add.at(merged.T, inverse, coef.T)
            cols, coef = uniq, merged
        self.cols = cols
        self.coef = coef
        self.const = const

    @classmethod
    def variables(cls, cols: Iterable[int]) -> "Affine":
        cols = np.asarray(list(cols) if not isinstance(cols, np.ndarray) else cols, dtype=np.int64)
        return cls(cols, np.eye(cols.size), np.zeros(cols.size))

    @classmethod
    def constant(cls, values: Union[np.ndarray, float, Sequence[float]]) -> "Affine":
        values = np.atleast_1d(np.asarray(values, dtype=float)).reshape(-1)
        return cls(np.zeros(0, dtype=np.int64), np.zeros((values.size, 0)), values)

    @classmethod
    def vstack(cls, parts: Sequence["Affine"]) -> "Affine":
        if not parts:
            return cls.constant(np.zeros(0))
        cols = np.unique(np.concatenate([p.cols for p in parts]))
        blocks = [p._coef_on(cols) for p in parts]
        return cls(cols, np.vstack(blocks), np.concatenate([p.const for p in parts]))

    @property
    def rows(self) -> int:
        return self.const.size

    def _coef_on(self, cols: np.ndarray) -> np.ndarray:
        out = np.zeros((self.rows, cols.size))
        if self.cols.size:
            out[:, np.searchsorted(cols, self.cols)] = self.coef
        return out

    def _coerce(self, other: Any) -> "Affine":
        if isinstance(other, Affine):
            return other
        values = np.broadcast_to(np.asarray(other, dtype=float), (self.rows,))
        return Affine.constant(values.copy())

    def __add__(self, other: Any) -> "Affine":
        other = self._coerce(other)
        if other.rows != self.rows:
            raise ProgramError(f"Row mismatch in affine sum: {self.rows} vs {other.rows}")
        cols = np.union1d(self.cols, other.cols).astype(np.int64)
        return Affine(cols, self._coef_on(cols) + other._coef_on(cols), self.const + other.const)

    __radd__ = __add__

    def __neg__(self) -> "Affine":
        return Affine(self.cols, -self.coef, -self.const)

    def __sub__(self, other: Any) -> "Affine":
        return self + (-self._coerce(other))

    def __rsub__(self, other: Any) -> "Affine":
        return self._coerce(other) - self

    def __mul__(self, scalar: float) -> "Affine":
        return Affine(self.cols, self.coef * float(scalar), self.const * float(scalar))

    __rmul__ = __mul__

    def map(self, matrix: np.ndarray) -> "Affine":
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        return Affine(self.cols, matrix @ self.coef, matrix @ self.const)

    def take(self, rows: Union[Sequence[int], np.ndarray]) -> "Affine":
        rows = np.asarray(rows, dtype=np.int64)
        return Affine(self.cols, self.coef[rows], self.const[rows])

    def scale_rows(self, factors: np.ndarray) -> "Affine":
        factors = np.asarray(factors, dtype=float).reshape(-1)
        return Affine(self.cols, self.coef * factors[:, None], self.const * factors)

    def dot(self, weights: np.ndarray) -> "Affine":
        return self.map(np.asarray(weights, dtype=float).reshape(1, -1))

    def sum(self) -> "Affine":
        return self.map(np.ones((1, self.rows)))

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return self.coef @ np.asarray(x, dtype=float)[self.cols] + self.const


@dataclass(frozen=True)
class ConicData:
    """Interchange form handed to every backend: maximize c@x, A x = b, x[cone] in cone."""

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    cones: Tuple[Cone, ...]
    names: Tuple[str, ...]

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def has_soc(self) -> bool:
        return any(cone.kind == ConeKind.SOC for cone in self.cones)


class ConicProgram:
    def __init__(self, name: str = "program"):
        self.name = name
        self._names: List[str] = []
        self._cone_member: List[bool] = []
        self._objective: Dict[int, float] = {}
        self._eq_rows: List[int] = []
        self._eq_cols: List[int] = []
        self._eq_vals: List[float] = []
        self._rhs: List[float] = []
        self.cones: List[Cone] = []

    @property
    def n_vars(self) -> int:
        return len(self._names)

    @property
    def n_equalities(self) -> int:
        return len(self._rhs)

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(self._names)

    def add_variables(self, count: int, name: str, nonneg: bool = False) -> np.ndarray:
        start = self.n_vars
        if count == 1:
            self._names.append(name)
        else:
            self._names.extend(f"{name}[{k}]" for k in range(count))
        self._cone_member.extend([False] * count)
        idx = np.arange(start, start + count, dtype=np.int64)
        if nonneg and count:
            self.add_cone(ConeKind.NONNEG, idx)
        return idx

    def add_soc(self, dim: int, name: str) -> np.ndarray:
        """New variables (t, u) constrained to ||u||_2 <= t."""
        idx = self.add_variables(dim, name)
        self.add_cone(ConeKind.SOC, idx)
        return idx

    def add_cone(self, kind: ConeKind, indices: Iterable[int]) -> None:
        indices = tuple(int(i) for i in indices)
        if not indices:
            return
        for i in indices:
            if i < 0 or i >= self.n_vars:
                raise ProgramError(f"Cone index {i} out of range")
            if self._cone_member[i]:
                raise ProgramError(f"Variable {self._names[i]} already belongs to a cone")
            self._cone_member[i] = True
        self.cones.append(Cone(ConeKind(kind), indices))

    def add_equality(self, expr: Affine, rhs: Union[float, np.ndarray] = 0.0) -> None:
        rhs_vec = np.broadcast_to(np.asarray(rhs, dtype=float), (expr.rows,)) - expr.const
        self._check_cols(expr.cols)
        for r in range(expr.rows):
            row_id = len(self._rhs)
            nz = np.nonzero(expr.coef[r])[0]
            self._eq_rows.extend([row_id] * nz.size)
            self._eq_cols.extend(int(c) for c in expr.cols[nz])
            self._eq_vals.extend(float(v) for v in expr.coef[r, nz])
            self._rhs.append(float(rhs_vec[r]))

    def add_inequality(self, expr: Affine, upper: Union[float, np.ndarray] = 0.0,
                       name: str = "slack") -> np.ndarray:
        """expr <= upper, through nonnegative slacks."""
        slack = self.add_variables(expr.rows, name, nonneg=True)
        self.add_equality(expr + Affine.variables(slack), upper)
        return slack

    def maximize(self, expr: Affine) -> None:
        if expr.rows != 1:
            raise ProgramError("Objective must be scalar")
        self._check_cols(expr.cols)
        self._objective = {int(c): float(v) for c, v in zip(expr.cols, expr.coef[0]) if v != 0.0}

    def with_objective(self, expr: Affine) -> "ConicProgram":
        clone = copy.copy(self)
        clone.maximize(expr)
        return clone

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(self.n_vars)
        for i, v in self._objective.items():
            c[i] = v
        return c

    def equality_system(self) -> Tuple[np.ndarray, np.ndarray]:
        A = np.zeros((self.n_equalities, self.n_vars))
        if self._eq_vals:
            np.add.at(A, (np.asarray(self._eq_rows), np.asarray(self._eq_cols)),
                      np.asarray(self._eq_vals))
        return A, np.asarray(self._rhs, dtype=float)

    def data(self) -> ConicData:
        A, b = self.equality_system()
        return ConicData(self.objective_vector(), A, b, tuple(self.cones), self.names)

    def _check_cols(self, cols: np.ndarray) -> None:
        if cols.size and (cols.min() < 0 or cols.max() >= self.n_vars):
            raise ProgramError("Expression references an unknown variable")


def add_norm_epigraph(program: ConicProgram, norm: NormKind, argument: Affine,
                      bound: Affine, name: str = "epi") -> ConicProgram:
    """Constrain ``norm(argument) <= bound`` with LP rows (L1, LInf) or one second-order cone."""
    norm = NormKind.parse(norm.value if isinstance(norm, NormKind) else norm)
    if bound.rows != 1:
        raise ProgramError("Epigraph bound must be scalar")
    k = argument.rows
    if norm is NormKind.L1:
        pos = program.add_variables(k, f"{name}.pos", nonneg=True)
        neg = program.add_variables(k, f"{name}.neg", nonneg=True)
        program.add_equality(argument - Affine.variables(pos) + Affine.variables(neg))
        total = Affine.variables(np.concatenate([pos, neg])).sum()
        program.add_inequality(total - bound, 0.0, name=f"{name}.sum")
    elif norm is NormKind.LINF:
        program.add_inequality(argument - Affine.vstack([bound] * k), 0.0, name=f"{name}.up")
        program.add_inequality(-argument - Affine.vstack([bound] * k), 0.0, name=f"{name}.lo")
    else:
        cone = program.add_soc(k + 1, f"{name}.soc")
        program.add_equality(Affine.variables(cone[:1]) - bound)
        if k:
            program.add_equality(Affine.variables(cone[1:]) - argument)
    return program


BackendFn = Callable[[ConicData, SolverOptions], SolverReport]
_BACKENDS: Dict[str, BackendFn] = {}


def backend_register(name: str, solve_fn: BackendFn) -> None:
    key = name.strip().lower()
    if key in _BACKENDS:
        raise BackendError(f"Backend already registered: {name}")
    _BACKENDS[key] = solve_fn


def available_backends() -> List[str]:
    return sorted(_BACKENDS)


def presolve_equalities(A: np.ndarray, b: np.ndarray, tol: float = 1e-10
                        ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
    """Drop dependent equality rows. Returns (A, b, kept rows, consistent)."""
    if A.shape[0] == 0:
        return A, b, np.arange(0), True
    _, R, piv = scipy.linalg.qr(A.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    scale = max(1.0, diag[0]) if diag.size else 1.0
    rank = int(np.sum(diag > tol * scale))
    keep = np.sort(piv[:rank])
    consistent = True
    if rank < A.shape[0]:
        x_ls = scipy.linalg.lstsq(A[keep], b[keep])[0]
        resid = np.linalg.norm(A @ x_ls - b)
        consistent = resid <= 1e-8 * (1.0 + np.linalg.norm(b))
    return A[keep], b[keep], keep, consistent


def solve(program: ConicProgram, options: Optional[SolverOptions] = None) -> SolverReport:
    """Solve ``program`` with the configured backend."""
    options = options or SolverOptions()
    key = options.backend.strip().lower()
    if key not in _BACKENDS:
        raise BackendError(
            f"Unknown backend {options.backend!r}; available: {', '.join(available_backends())}"
        )
    data = program.data()
    started = time.perf_counter()
    kept = np.arange(data.A.shape[0])
    if options.presolve:
        A, b, kept, consistent = presolve_equalities(data.A, data.b)
        if not consistent:
            return SolverReport(
                status=SolverStatus.INFEASIBLE, x=np.full(data.n, np.nan),
                y=np.zeros(data.A.shape[0]), z=np.zeros(0), objective=float("nan"),
                wall_time=time.perf_counter() - started, backend=key,
                message="inconsistent equality system",
            )
        if kept.size != data.A.shape[0]:
            logger.debug("presolve removed %d dependent rows", data.A.shape[0] - kept.size)
        data = ConicData(data.c, A, b, data.cones, data.names)

    for attempt in Retrying(
        wait=wait_exponential(multiplier=0.1, min=0.1, max=2),
        stop=stop_after_attempt(3),
        retry=retry_if_exception_type(TransientBackendError),
        reraise=True,
    ):
        with attempt:
            report = _BACKENDS[key](data, options)

    if report.y.size == kept.size and kept.size != program.n_equalities:
        full = np.zeros(program.n_equalities)
        full[kept] = report.y
        report.y = full
    report.wall_time = time.perf_counter() - started
    report.backend = key
    logger.debug(
        "%s: %s objective=%.10g iterations=%d in %.3fs",
        program.name, report.status.value, report.objective, report.iterations, report.wall_time,
    )
    return report


def _highs_backend(data: ConicData, options: SolverOptions) -> SolverReport:
    if data.has_soc:
        raise BackendError("highs backend handles LP only (program has second-order cones)")
    bounds: List[Tuple[Optional[float], Optional[float]]] = [(None, None)] * data.n
    for cone in data.cones:
        for i in cone.indices:
            bounds[i] = (0.0, None)
    res = linprog(
        -data.c,
        A_eq=data.A if data.A.shape[0] else None,
        b_eq=data.b if data.A.shape[0] else None,
        bounds=bounds,
        method="highs",
        options={"primal_feasibility_tolerance": max(options.feas_tol, 1e-10),
                 "dual_feasibility_tolerance": max(options.feas_tol, 1e-10)},
    )
    status = {0: SolverStatus.OPTIMAL, 2: SolverStatus.INFEASIBLE,
              3: SolverStatus.UNBOUNDED}.get(res.status, SolverStatus.NUMERICAL_FAILURE)
    x = np.asarray(res.x) if res.x is not None else np.full(data.n, np.nan)
    y = np.zeros(data.A.shape[0])
    if status == SolverStatus.OPTIMAL and data.A.shape[0]:
        y = -np.asarray(res.eqlin.marginals)
    residual = float(np.linalg.norm(data.A @ x - data.b)) if res.x is not None else float("nan")
    return SolverReport(
        status=status, x=x, y=y, z=np.zeros(0),
        objective=float(data.c @ x) if status == SolverStatus.OPTIMAL else float("nan"),
        primal_residual=residual, gap=0.0, relative_gap=0.0,
        iterations=int(getattr(res, "nit", 0)), message=str(res.message),
    )


def dump_program(program: ConicProgram) -> str:
    """Plain-text interchange form: one record per line, floats written with repr()."""
    lines = [DUMP_HEADER, f"name {program.name}", f"vars {program.n_vars}"]
    lines.extend(f"var {i} {name}" for i, name in enumerate(program.names))
    c = program.objective_vector()
    lines.extend(f"obj {i} {float(c[i])!r}" for i in np.nonzero(c)[0])
    lines.append(f"rows {program.n_equalities}")
    lines.extend(
        f"eq {r} {col} {float(v)!r}"
        for r, col, v in zip(program._eq_rows, program._eq_cols, program._eq_vals)
    )
    lines.extend(f"rhs {r} {float(v)!r}" for r, v in enumerate(program._rhs) if v != 0.0)
    for cone in program.cones:
        lines.append(f"{cone.kind.value} " + " ".join(str(i) for i in cone.indices))
    return "\n".join(lines) + "\n"


def load_program(text: str) -> ConicProgram:
    records = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    program = ConicProgram()
    names: Dict[int, str] = {}
    rows = 0
    objective: Dict[int, float] = {}
    rhs: Dict[int, float] = {}
    eq: List[Tuple[int, int, float]] = []
    cones: List[Tuple[str, List[int]]] = []
    n_vars = 0
    try:
        for rec in records:
            tag = rec[0]
            if tag == "name":
                program.name = " ".join(rec[1:])
            elif tag == "vars":
                n_vars = int(rec[1])
            elif tag == "var":
                names[int(rec[1])] = " ".join(rec[2:])
            elif tag == "obj":
                objective[int(rec[1])] = float(rec[2])
            elif tag == "rows":
                rows = int(rec[1])
            elif tag == "eq":
                eq.append((int(rec[1]), int(rec[2]), float(rec[3])))
            elif tag == "rhs":
                rhs[int(rec[1])] = float(rec[2])
            elif tag in {ConeKind.NONNEG.value, ConeKind.SOC.value}:
                cones.append((tag, [int(v) for v in rec[1:]]))
            else:
                raise ProgramError(f"Unknown record {tag!r}")
    except (IndexError, ValueError) as exc:
        raise ProgramError(f"Malformed program dump: {exc}") from exc

    program._names = [names.get(i, f"x{i}") for i in range(n_vars)]
    program._cone_member = [False] * n_vars
    for kind, idx in cones:
        program.add_cone(ConeKind(kind), idx)
    program._objective = objective
    program._eq_rows = [r for r, _, _ in eq]
    program._eq_cols = [c for _, c, _ in eq]
    program._eq_vals = [v for _, _, v in eq]
    program._rhs = [rhs.get(r, 0.0) for r in range(rows)]
    return program


def write_program(program: ConicProgram, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_program(program), encoding="utf-8")
    return path


def _bundled_backend(data: ConicData, options: SolverOptions) -> SolverReport:
    from .interior_point import hsde_solve

    return hsde_solve(data, options)


backend_register("bundled", _bundled_backend)
backend_register("highs", _highs_backend)
