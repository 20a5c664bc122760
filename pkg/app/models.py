from sqlmodel import SQLModel, Field
from datetime import datetime
from typing import Optional, List, Dict
from enum import Enum

import numpy as np
from pydantic import model_validator

from app.torusgrid import fourier_field

ENGINE_NAME = "iia-flow"
ENGINE_VERSION = "0.1.0"


class Command(str, Enum):
    """Subcommand that produced a run."""

    VERIFY = "verify"
    FLOW = "flow"
    GRID = "grid"
    ORACLE = "oracle"
    SYMBOL = "symbol"


# Persistent models (stored in the run ledger)
class RunRecord(SQLModel, table=True):
    """One executed command with its configuration echo and summary."""

    __tablename__ = "runs"  # type: ignore[assignment]

    id: Optional[int] = Field(default=None, primary_key=True)
    command: Command
    model: str = Field(max_length=500)
    seed: int = Field(default=0)
    passed: bool = Field(default=False)
    exit_code: int = Field(default=0)
    config_json: str = Field(default="{}")
    summary_json: str = Field(default="{}")
    created_at: datetime = Field(default_factory=datetime.utcnow)


# Non-persistent schemas (configuration and reports)
class FourierMode(SQLModel, table=False):
    mode: int = Field(ge=1)
    cos: float = Field(default=0.0)
    sin: float = Field(default=0.0)


class FieldSpec(SQLModel, table=False):
    """Periodic initial field as a finite Fourier series in x^1."""

    mean: float
    modes: List[FourierMode] = Field(default_factory=list)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return fourier_field(x, self.mean, [(m.mode, m.cos, m.sin) for m in self.modes])


class GridFields(SQLModel, table=False):
    """Torus initial data; defaults to a 0.1-amplitude single mode in a."""

    a: FieldSpec = Field(default_factory=lambda: FieldSpec(mean=2.0, modes=[FourierMode(mode=1, sin=0.1)]))
    b: FieldSpec = Field(default_factory=lambda: FieldSpec(mean=2.0))
    c: FieldSpec = Field(default_factory=lambda: FieldSpec(mean=0.0))
    d: FieldSpec = Field(default_factory=lambda: FieldSpec(mean=0.0))


class FlowControls(SQLModel, table=False):
    max_growth: float = Field(default=0.2, gt=0)
    dt_floor: float = Field(default=1e-12, gt=0)
    gate_tolerance: float = Field(default=1e-9, gt=0)
    error_tolerance: float = Field(default=1e-10, gt=0)


class RunConfig(SQLModel, table=False):
    """Validated configuration of one command; JSON documents and flags both land here."""

    command: Command
    model: str = Field(default="nil", max_length=500)
    params: List[float] = Field(default_factory=list)
    dt: float = Field(default=1e-3, gt=0)
    t_max: float = Field(default=1.0, gt=0)
    n: int = Field(default=64, ge=8)
    trials: int = Field(default=20, ge=1)
    seed: int = Field(default=0)
    tolerance: float = Field(default=1e-9, gt=0)
    oracle_tolerance: float = Field(default=1e-6, gt=0)
    harmonic_tolerance: float = Field(default=1e-6, gt=0)
    p_values: List[float] = Field(default_factory=lambda: [-1.0, 0.5, 1.0])
    output: Optional[str] = Field(default=None)
    grid: GridFields = Field(default_factory=GridFields)
    snapshot_times: List[float] = Field(default_factory=list)
    controls: FlowControls = Field(default_factory=FlowControls)
    canonical: bool = Field(default=False)
    covector: Optional[List[float]] = Field(default=None)

    @model_validator(mode="after")
    def check_shapes(self) -> "RunConfig":
        if self.covector is not None and len(self.covector) != 6:
            raise ValueError("covector needs 6 components")
        if any(t < 0 for t in self.snapshot_times):
            raise ValueError("snapshot times must be nonnegative")
        return self


class IdentitySummary(SQLModel, table=False):
    engine: str = ENGINE_NAME
    version: str = ENGINE_VERSION
    config: RunConfig
    trials: int
    passed: bool
    max_residuals: Dict[str, float] = Field(default_factory=dict)
    failures: List[str] = Field(default_factory=list)
    normal_frame_dimension: Optional[int] = None


class OracleSummary(SQLModel, table=False):
    max_state_deviation: float
    max_norm_n_deviation: float
    checked_until: float
    predicted_blowup: Optional[float] = None
    detected_blowup: Optional[List[float]] = None
    bracket_contains_prediction: Optional[bool] = None
    bracket_relative_width: Optional[float] = None
    min_norm_n_sq: float = 0.0
    ratio_drift: Optional[float] = None
    harmonic_residual: Optional[float] = None


class FlowSummary(SQLModel, table=False):
    engine: str = ENGINE_NAME
    version: str = ENGINE_VERSION
    config: RunConfig
    ansatz: str
    parameters: List[str]
    status: str
    final_time: float
    final_params: List[float]
    final_direction: List[float] = Field(default_factory=list)
    blowup_bracket: Optional[List[float]] = None
    halvings: int = 0
    monotonicity: Dict[str, bool] = Field(default_factory=dict)
    derivative_check: Dict[str, float] = Field(default_factory=dict)
    oracle: Optional[OracleSummary] = None
    passed: bool = True


class GridSummary(SQLModel, table=False):
    engine: str = ENGINE_NAME
    version: str = ENGINE_VERSION
    config: RunConfig
    n: int
    dt: float
    final_time: float
    evaluator_discrepancy: float
    decay_rate: Optional[float] = None
    first_mode_final: float
    sup_norm_n_sq_final: float
    mean_drift: float
    d_constant: bool
    positivity_nondecreasing: bool
    terminal_residuals: Dict[str, float] = Field(default_factory=dict)
    verdicts: Dict[str, bool] = Field(default_factory=dict)
    snapshots: List[str] = Field(default_factory=list)
    passed: bool = True


class SymbolSummary(SQLModel, table=False):
    engine: str = ENGINE_NAME
    version: str = ENGINE_VERSION
    config: RunConfig
    eigenvalues: List[float]
    passed: bool
