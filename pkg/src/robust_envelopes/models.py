from __future__ import annotations

from enum import Enum
from typing import List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


NETWORK_VERSION = "utopf-net/1"
UNCERTAINTY_VERSION = "utopf-unc/1"


class Phase(str, Enum):
    A = "a"
    B = "b"
    C = "c"


class CustomerKind(str, Enum):
    ACTIVE = "active"
    PASSIVE = "passive"


class Coupling(str, Enum):
    SELF = "self"
    MUTUAL = "mutual"
    ALL = "all"


class Parameterization(str, Enum):
    PHYSICAL = "physical"
    ENTRIES = "entries"


class EnvelopeMode(str, Enum):
    DET = "det"
    IMPEDANCE = "impedance"
    DEMAND = "demand"
    BILINEAR = "bilinear"


class AllocationPolicy(str, Enum):
    EQUAL = "equal"
    PROPORTIONAL = "proportional"
    WEIGHTED = "weighted"


class Direction(str, Enum):
    EXPORT = "export"
    IMPORT = "import"


def _enum_text(value: object) -> str:
    if isinstance(value, Enum):
        value = value.value
    return str(value).strip().lower()


def _parse_phases(value: Union[str, List[str]]) -> str:
    raw = list(value) if isinstance(value, str) else [str(v) for v in value]
    phases = [p.strip().lower() for p in raw if p.strip()]
    if not phases:
        raise ValueError("phase set must not be empty")
    if len(set(phases)) != len(phases):
        raise ValueError(f"duplicate phase in {value!r}")
    for p in phases:
        Phase(p)
    return "".join(sorted(phases))


class BaseRecord(BaseModel):
    s_kva: float = Field(gt=0)
    v_volt: float = Field(gt=0)


class PolarVoltage(BaseModel):
    mag: float = Field(gt=0)
    angle_deg: float = 0.0


class BusRecord(BaseModel):
    id: str
    vmin: float = 0.95
    vmax: float = 1.05
    is_reference: bool = False
    phases: str = "abc"

    @field_validator("id", mode="before")
    @classmethod
    def coerce_id(cls, v: object) -> str:
        return str(v).strip()

    @field_validator("phases", mode="before")
    @classmethod
    def validate_phases(cls, v: Union[str, List[str]]) -> str:
        return _parse_phases(v)

    @model_validator(mode="after")
    def check_limits(self) -> "BusRecord":
        if not 0 < self.vmin < self.vmax:
            raise ValueError(f"bus {self.id}: need 0 < vmin < vmax (got {self.vmin}, {self.vmax})")
        return self


class LineRecord(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    id: Optional[str] = None
    from_bus: str = Field(alias="from")
    to_bus: str = Field(alias="to")
    z: List[List[Tuple[float, float]]]

    @field_validator("from_bus", "to_bus", mode="before")
    @classmethod
    def coerce_bus(cls, v: object) -> str:
        return str(v).strip()

    @field_validator("z")
    @classmethod
    def validate_shape(cls, v: List[List[Tuple[float, float]]]) -> List[List[Tuple[float, float]]]:
        if len(v) != 3 or any(len(row) != 3 for row in v):
            raise ValueError("z must be a 3x3 array of [re_ohm, im_ohm] pairs")
        return v


class CustomerRecord(BaseModel):
    id: str
    bus: str
    phase: Phase
    kind: CustomerKind
    p_bounds: Tuple[float, float] = (-7.0, 7.0)
    q_bounds: Tuple[float, float] = (-1.0, 1.0)
    p_forecast: float = 0.0
    q_forecast: float = 0.0
    weight: float = Field(default=1.0, gt=0)

    @field_validator("id", "bus", mode="before")
    @classmethod
    def coerce_ids(cls, v: object) -> str:
        return str(v).strip()

    @field_validator("phase", mode="before")
    @classmethod
    def normalize_phase(cls, v: object) -> str:
        return _enum_text(v)

    @field_validator("p_bounds", "q_bounds")
    @classmethod
    def validate_bounds(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if not v[0] < v[1]:
            raise ValueError(f"degenerate bounds {v}")
        return v


class NetworkFile(BaseModel):
    version: str = NETWORK_VERSION
    name: str = "network"
    base: BaseRecord
    v_ref: List[PolarVoltage]
    buses: List[BusRecord]
    lines: List[LineRecord] = Field(default_factory=list)
    customers: List[CustomerRecord] = Field(default_factory=list)

    @field_validator("version")
    @classmethod
    def validate_version(cls, v: str) -> str:
        if v != NETWORK_VERSION:
            raise ValueError(f"unsupported network file version {v!r} (expected {NETWORK_VERSION})")
        return v

    @field_validator("v_ref")
    @classmethod
    def validate_v_ref(cls, v: List[PolarVoltage]) -> List[PolarVoltage]:
        if len(v) != 3:
            raise ValueError("v_ref needs one entry per phase (a, b, c)")
        return v


class BallRecord(BaseModel):
    norm: str = "inf"
    radius: float = Field(ge=0)
    center: Union[str, List[float]] = "nominal"
    map: Union[str, List[List[float]]] = "diag-of-center"

    @field_validator("norm", mode="before")
    @classmethod
    def normalize_norm(cls, v: object) -> str:
        text = _enum_text(v)
        if text not in {"1", "2", "inf", "l1", "l2", "linf"}:
            raise ValueError(f"unsupported norm {v!r}")
        return text

    @field_validator("center")
    @classmethod
    def validate_center(cls, v: Union[str, List[float]]) -> Union[str, List[float]]:
        if isinstance(v, str) and v != "nominal":
            raise ValueError("center must be 'nominal' or a vector")
        return v

    @field_validator("map")
    @classmethod
    def validate_map(cls, v: Union[str, List[List[float]]]) -> Union[str, List[List[float]]]:
        if isinstance(v, str) and v not in {"diag-of-center", "identity"}:
            raise ValueError("map must be 'diag-of-center', 'identity' or a matrix")
        return v


class ImpedanceUncertainty(BaseModel):
    lines: Union[str, List[str]] = "all"
    coupling: Coupling = Coupling.ALL
    parameterization: Parameterization = Parameterization.PHYSICAL
    balls: List[BallRecord]

    @field_validator("balls")
    @classmethod
    def validate_balls(cls, v: List[BallRecord]) -> List[BallRecord]:
        if not 1 <= len(v) <= 2:
            raise ValueError("one or two balls per component")
        return v


class DemandUncertainty(BaseModel):
    customers: Union[str, List[str]] = "passive"
    balls: List[BallRecord]

    @field_validator("balls")
    @classmethod
    def validate_balls(cls, v: List[BallRecord]) -> List[BallRecord]:
        if not 1 <= len(v) <= 2:
            raise ValueError("one or two balls per component")
        return v


class UncertaintyFile(BaseModel):
    version: str = UNCERTAINTY_VERSION
    impedance: Optional[ImpedanceUncertainty] = None
    demand_p: Optional[DemandUncertainty] = None
    demand_q: Optional[DemandUncertainty] = None

    @field_validator("version")
    @classmethod
    def validate_version(cls, v: str) -> str:
        if v != UNCERTAINTY_VERSION:
            raise ValueError(
                f"unsupported uncertainty file version {v!r} (expected {UNCERTAINTY_VERSION})"
            )
        return v


class SolverRecord(BaseModel):
    backend: Optional[str] = None
    gap_tol: Optional[float] = Field(default=None, gt=0)
    feas_tol: Optional[float] = Field(default=None, gt=0)
    max_iter: Optional[int] = Field(default=None, ge=1)


class RunSpec(BaseModel):
    """RDOE run spec: everything a robust envelope run needs besides the output directory."""

    network: str
    uncertainty: Optional[str] = None
    mode: EnvelopeMode = EnvelopeMode.DET
    norm: Optional[str] = None
    radius: Optional[float] = Field(default=None, ge=0)
    demand_norm: Optional[str] = None
    demand_radius: Optional[float] = Field(default=None, ge=0)
    allocation: AllocationPolicy = AllocationPolicy.EQUAL
    direction: Direction = Direction.EXPORT
    q_control: List[str] = Field(default_factory=list)
    solver: SolverRecord = Field(default_factory=SolverRecord)

    @field_validator("q_control")
    @classmethod
    def validate_q_control(cls, v: List[str]) -> List[str]:
        flags = sorted({s.strip().lower() for s in v if s.strip()})
        for flag in flags:
            if flag not in {"q1", "q2"}:
                raise ValueError(f"unknown q_control flag {flag!r} (expected q1, q2)")
        return flags
