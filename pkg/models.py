from __future__ import annotations  # MUST be first

# models.py

from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Dict, List, Literal, Optional, Tuple
import uuid

from pydantic import BaseModel, ConfigDict, Field, model_validator

EXPERIMENT_NAMES = (
    "simulate",
    "energy-audit",
    "steklov",
    "lipschitz",
    "absorb",
    "quasistab",
    "stationary",
    "attractor",
    "dimension",
    "holder",
    "selftest",
)

ExperimentName = Literal[
    "simulate", "energy-audit", "steklov", "lipschitz", "absorb", "quasistab",
    "stationary", "attractor", "dimension", "holder", "selftest",
]

MAX_MODES_3D = 8


# ----------------------------------------------------
# Helper: Create timezone-aware ISO timestamps
# ----------------------------------------------------
def now_utc_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ----------------------------------------------------
# Configuration blocks
# ----------------------------------------------------

class SolverConfig(StrictModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    dt: float = Field(1e-2, gt=0)
    scheme: Literal["implicit_midpoint", "semi_implicit_imex"] = "implicit_midpoint"
    newton_tol: float = Field(1e-10, gt=0)
    newton_max_iters: int = Field(50, ge=1)
    t_end: float = Field(1.0, ge=0)
    observer_stride: int = Field(1, ge=1)
    max_halvings: int = Field(5, ge=0)


class BasisBlock(StrictModel):
    dim: int = Field(1, ge=1, le=3)
    modes_per_axis: int = Field(8, ge=1)
    quad_oversample: int = Field(3, ge=3)

    @model_validator(mode="after")
    def _desk_scale_3d(self) -> "BasisBlock":
        if self.dim == 3 and self.modes_per_axis > MAX_MODES_3D:
            raise ValueError(f"3D runs are limited to modes_per_axis <= {MAX_MODES_3D}")
        return self


class ProfileBlock(StrictModel):
    g_linear: float = 0.0
    g_quintic: float = 1.0
    f_terms: List[Tuple[float, float]] = Field(default_factory=list)
    audit_range: float = Field(10.0, ge=10.0)
    audit_samples: int = Field(20001, ge=10_000)


class ForcingBlock(StrictModel):
    preset: Optional[Literal["zero", "mode1", "smooth"]] = "zero"
    norm: float = Field(0.0, ge=0)
    coefficients: Optional[List[float]] = None

    @model_validator(mode="after")
    def _one_source(self) -> "ForcingBlock":
        if self.coefficients is not None and self.preset not in (None, "zero"):
            raise ValueError("give either a forcing preset or explicit coefficients, not both")
        return self


class InitialBlock(StrictModel):
    kind: Literal["zero", "random", "sine", "checkpoint"] = "random"
    radius: float = Field(1.0, ge=0)
    velocity_only: bool = False
    # checkpoint.json of an earlier run; used when kind is "checkpoint"
    path: Optional[str] = None

    @model_validator(mode="after")
    def _checkpoint_needs_path(self) -> "InitialBlock":
        if self.kind == "checkpoint" and not self.path:
            raise ValueError("initial.kind \"checkpoint\" requires initial.path")
        return self


class ExperimentBlock(StrictModel):
    name: ExperimentName = "simulate"
    ensemble_size: int = Field(16, ge=1)
    pairs: int = Field(8, ge=1)
    gap: float = Field(1e-4, gt=0)
    rescaled_gap: Optional[float] = Field(1e-5, gt=0)
    dwell: float = Field(1.0, gt=0)
    steklov_base_steps: int = Field(32, ge=1)
    steklov_levels: int = Field(5, ge=2)
    lyapunov_eps: Optional[float] = Field(None, gt=0)
    dt_study: Optional[List[float]] = None
    restarts: int = Field(16, ge=0)
    burn_in: float = Field(0.0, ge=0)
    sample_count: int = Field(1000, ge=1)
    radii_count: int = Field(12, ge=3)
    s_exponent: float = Field(1.0, gt=0, le=1)
    h2_tolerance: float = Field(1e-2, gt=0)
    residual_tol: float = Field(1e-5, gt=0)


class RunConfig(StrictModel):
    version: Literal[1] = 1
    basis: BasisBlock = Field(default_factory=BasisBlock)
    profile: ProfileBlock = Field(default_factory=ProfileBlock)
    forcing: ForcingBlock = Field(default_factory=ForcingBlock)
    initial: InitialBlock = Field(default_factory=InitialBlock)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    experiment: ExperimentBlock = Field(default_factory=ExperimentBlock)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    output_dir: str = "out"


# ----------------------------------------------------
# Reports
# ----------------------------------------------------

class BoundCheck(BaseModel):
    name: str
    formula: str
    bound: float
    observed: float
    passed: bool


class ExperimentReport(BaseModel):
    experiment: str
    inputs: Dict[str, Any] = Field(default_factory=dict)
    constants: Dict[str, Any] = Field(default_factory=dict)
    bounds: List[BoundCheck] = Field(default_factory=list)
    artifacts: List[str] = Field(default_factory=list)
    notes: List[str] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(b.passed for b in self.bounds)

    def add_bound(self, name: str, formula: str, bound: float, observed: float,
                  passed: bool) -> BoundCheck:
        check = BoundCheck(name=name, formula=formula, bound=float(bound),
                           observed=float(observed), passed=bool(passed))
        self.bounds.append(check)
        return check


class StageLogEntryPydantic(BaseModel):
    step: int
    stage_name: str
    entry_keys: List[str] = Field(default_factory=list)
    exit_keys: List[str] = Field(default_factory=list)
    decision: List[str] = Field(default_factory=list)
    duration: Optional[float] = None
    timestamp: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))

    model_config = {"from_attributes": True}


class RunRecordPydantic(BaseModel):
    run_id: str = Field(default_factory=lambda: str(uuid.uuid4()))
    experiment: str
    config_hash: str
    log: List[StageLogEntryPydantic] = Field(default_factory=list)
    status: str = "running"
    error: Optional[Dict[str, Any]] = None
    created_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))
    completed_at: Optional[datetime] = None

    model_config = {"from_attributes": True}


# ----------------------------------------------------
# Dataclasses (internal runtime state for the engine)
# ----------------------------------------------------

def _as_datetime(value: Any) -> Optional[datetime]:
    if value is None:
        return None
    if isinstance(value, str):
        return datetime.fromisoformat(value)
    return value


@dataclass
class StageLogEntry:
    step: int
    stage_name: str
    entry_keys: List[str]
    exit_keys: List[str]
    decision: List[str] = field(default_factory=list)
    duration: Optional[float] = None
    timestamp: Optional[str] = None

    def __post_init__(self):
        if self.timestamp is None:
            self.timestamp = now_utc_iso()

    def to_pydantic(self) -> StageLogEntryPydantic:
        return StageLogEntryPydantic(
            step=self.step,
            stage_name=self.stage_name,
            entry_keys=list(self.entry_keys),
            exit_keys=list(self.exit_keys),
            decision=list(self.decision),
            duration=self.duration,
            timestamp=_as_datetime(self.timestamp) or datetime.now(timezone.utc),
        )

    @staticmethod
    def from_pydantic(p: StageLogEntryPydantic) -> "StageLogEntry":
        return StageLogEntry(
            step=p.step,
            stage_name=p.stage_name,
            entry_keys=list(p.entry_keys),
            exit_keys=list(p.exit_keys),
            decision=list(p.decision),
            duration=p.duration,
            timestamp=p.timestamp.isoformat(),
        )


@dataclass
class RunRecord:
    run_id: str
    experiment: str
    config_hash: str
    log: List[StageLogEntry] = field(default_factory=list)
    status: str = "running"
    error: Optional[Dict[str, Any]] = None
    created_at: Optional[str] = None
    completed_at: Optional[str] = None

    def __post_init__(self):
        if not self.run_id:
            self.run_id = str(uuid.uuid4())
        if self.created_at is None:
            self.created_at = now_utc_iso()

    def to_pydantic(self) -> RunRecordPydantic:
        return RunRecordPydantic(
            run_id=self.run_id,
            experiment=self.experiment,
            config_hash=self.config_hash,
            log=[le.to_pydantic() for le in self.log],
            status=self.status,
            error=self.error,
            created_at=_as_datetime(self.created_at) or datetime.now(timezone.utc),
            completed_at=_as_datetime(self.completed_at),
        )

    @staticmethod
    def from_pydantic(p: RunRecordPydantic) -> "RunRecord":
        return RunRecord(
            run_id=p.run_id,
            experiment=p.experiment,
            config_hash=p.config_hash,
            log=[StageLogEntry.from_pydantic(le) for le in p.log],
            status=p.status,
            error=p.error,
            created_at=p.created_at.isoformat(),
            completed_at=(p.completed_at.isoformat() if p.completed_at else None),
        )
