import math
from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.exceptions import ConfigError

U64_MAX = 2**64 - 1


class ScenarioKind(str, Enum):
    """Enumeration of runnable scenarios."""

    OPTIMIZE = "optimize"
    DRIFT_LOG = "drift_log"
    BATCH = "batch"


class RunStatus(str, Enum):
    """Enumeration of possible run outcomes."""

    COMPLETED = "completed"
    FAILED = "failed"


class StrictModel(BaseModel):
    """Base for config sections: unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid", frozen=True)


class LcvrChannelConfig(StrictModel):
    """Calibration and timing of one liquid crystal variable retarder."""

    delta_max: float = Field(
        1.5 * math.pi + 0.1,
        gt=0,
        description="Asymptotic retardance of the parametric curve at 0 V, radians",
    )
    v_min: float = Field(1.0, description="Lowest drive voltage, volts")
    v_max: float = Field(6.0, description="Highest drive voltage, volts")
    v_c: float = Field(2.2, gt=0, description="Half-retardance voltage, volts")
    exponent: float = Field(4.0, gt=0, description="Steepness of the response curve")
    response_time: float = Field(0.005, ge=0, description="Settling time, seconds")
    calibration_file: Optional[str] = Field(
        None,
        description="Optional 'voltage retardance' table; overrides the parametric curve",
    )

    @model_validator(mode="after")
    def check_range(self):
        if not self.v_min < self.v_max:
            raise ValueError(f"v_min ({self.v_min}) must be below v_max ({self.v_max})")
        return self


class LcvrConfig(StrictModel):
    channels: List[LcvrChannelConfig] = Field(
        default_factory=lambda: [LcvrChannelConfig() for _ in range(4)],
        min_length=4,
        max_length=4,
        description="Plates 1..4 in the order light traverses them",
    )


class FiberConfig(StrictModel):
    """One fiber arm."""

    length_km: float = Field(10.0, ge=0)
    loss_db: float = Field(7.0, ge=0, description="Link attenuation, dB")
    drift_sigma: float = Field(
        0.004, ge=0, description="Random-walk scale of the rotation, rad/sqrt(s)"
    )
    jump_rate: float = Field(1.0 / 43200.0, ge=0, description="Jumps per second")
    jump_angle_scale: float = Field(0.5, ge=0, description="Jump angle scale, rad")
    initial_rotation: str = Field(
        "haar", pattern="^(haar|identity)$", description="Starting rotation"
    )


def _local_arm() -> "FiberConfig":
    return FiberConfig(
        length_km=0.0, loss_db=0.0, drift_sigma=0.0, jump_rate=0.0, jump_angle_scale=0.0
    )


class LinkConfig(StrictModel):
    """Both arms of the entanglement distribution link; the compensator sits on arm A."""

    arm_a: FiberConfig = Field(default_factory=FiberConfig)
    arm_b: FiberConfig = Field(default_factory=_local_arm)
    min_initial_qber: float = Field(
        0.4,
        ge=0,
        le=1,
        description="Redraw starting rotations until the uncompensated polarization QBER reaches this",
    )


class DetectionConfig(StrictModel):
    coincidence_rate: float = Field(
        670.0, ge=0, description="Coincidences per second at reference_loss_db"
    )
    reference_loss_db: float = Field(
        7.0, ge=0, description="Total link loss at which coincidence_rate was measured"
    )
    sift_ratio: float = Field(0.5, gt=0, le=1)
    accumulation_time: float = Field(2.0, gt=0, description="Seconds per QBER block")
    intrinsic_error: float = Field(0.04, ge=0, lt=0.5)


class SearchConfig(StrictModel):
    points_per_iteration: int = Field(10, ge=1)
    shrink_gain: float = Field(6.5, gt=0, description="A, volts")
    shrink_exponent: float = Field(2.0, description="B")
    qber_threshold: float = Field(0.04, ge=0, le=1)
    bounds: List[Tuple[float, float]] = Field(
        default_factory=lambda: [(1.0, 6.0)] * 4, min_length=4, max_length=4
    )
    r_min: float = Field(0.2, gt=0, description="Smallest search box, volts")
    r_max: float = Field(3.0, gt=0, description="Largest search box, volts")
    initial_center: Optional[List[float]] = Field(
        default_factory=lambda: [2.5] * 4,
        description="First search center; null starts at the bounds midpoint",
    )

    @model_validator(mode="after")
    def check_ranges(self):
        for low, high in self.bounds:
            if not low < high:
                raise ValueError(f"bound [{low}, {high}] needs low < high")
        if self.r_min > self.r_max:
            raise ValueError(f"r_min ({self.r_min}) exceeds r_max ({self.r_max})")
        if self.initial_center is not None:
            if len(self.initial_center) != 4:
                raise ValueError(
                    f"initial_center needs 4 voltages, got {len(self.initial_center)}"
                )
            for index, (value, (low, high)) in enumerate(
                zip(self.initial_center, self.bounds)
            ):
                if not low <= value <= high:
                    raise ValueError(
                        f"initial_center.{index} = {value} lies outside [{low}, {high}]"
                    )
        return self


class DisturbanceConfig(StrictModel):
    """Scripted fiber jump on arm A."""

    at_s: float = Field(..., gt=0, description="Simulated time of the jump")
    qber_increase: float = Field(
        0.03, gt=0, le=0.5, description="Rise of the true QBER caused by the jump"
    )


class ScenarioConfig(StrictModel):
    """Complete description of a simulation run or batch."""

    kind: ScenarioKind = ScenarioKind.OPTIMIZE
    seed: int = Field(0, ge=0, le=U64_MAX)
    duration_s: float = Field(1200.0, gt=0, description="Simulated seconds")
    batch_size: int = Field(1, ge=1)
    batch_kind: ScenarioKind = Field(
        ScenarioKind.OPTIMIZE, description="Scenario repeated by a batch"
    )
    workers: int = Field(1, ge=1, description="Parallel processes for batches")
    output_prefix: str = Field("runs/run", min_length=1)
    drift_sample_period_s: float = Field(60.0, gt=0)
    convergence_margin: float = Field(
        0.02, gt=0, description="Converged when best estimate <= floor + margin"
    )
    success_iterations: int = Field(50, ge=1)
    disturbances: List[DisturbanceConfig] = Field(default_factory=list)

    lcvr: LcvrConfig = Field(default_factory=LcvrConfig)
    link: LinkConfig = Field(default_factory=LinkConfig)
    detection: DetectionConfig = Field(default_factory=DetectionConfig)
    search: SearchConfig = Field(default_factory=SearchConfig)

    @model_validator(mode="after")
    def check_cross_sections(self):
        if self.batch_kind == ScenarioKind.BATCH:
            raise ValueError("batch_kind must be optimize or drift_log")
        for index, (low, high) in enumerate(self.search.bounds):
            channel = self.lcvr.channels[index]
            if low < channel.v_min or high > channel.v_max:
                raise ValueError(
                    f"search.bounds.{index} [{low}, {high}] leaves the control "
                    f"range [{channel.v_min}, {channel.v_max}] of lcvr.channels.{index}"
                )
        return self

    @property
    def floor(self) -> float:
        return self.detection.intrinsic_error

    @property
    def converged_level(self) -> float:
        return self.detection.intrinsic_error + self.convergence_margin


def _issue_path(location) -> str:
    return ".".join(str(part) for part in location)


def validate_scenario(data: dict) -> ScenarioConfig:
    """Build a ScenarioConfig, turning pydantic errors into a ConfigError with field paths."""
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(
            [(_issue_path(error["loc"]), error["msg"]) for error in exc.errors()]
        ) from None


class RunSummary(BaseModel):
    """Outcome of one scenario run."""

    seed: int = Field(..., description="Seed the run was executed with")
    kind: ScenarioKind = ScenarioKind.OPTIMIZE
    status: RunStatus = RunStatus.COMPLETED
    error_message: Optional[str] = None
    initial_qber: Optional[float] = Field(
        None, description="Estimated QBER before compensation"
    )
    final_qber: Optional[float] = Field(
        None, description="Best estimate of the last completed iteration"
    )
    iters_to_floor: Optional[int] = Field(
        None, description="First iteration whose best estimate reached floor + margin"
    )
    recovered_jumps: int = 0
    jump_recovery_times: List[float] = Field(default_factory=list)
    jumps: int = Field(0, description="Jump events of arm A during the run")
    iterations: int = 0
    elapsed_s: float = 0.0


class BatchSummary(BaseModel):
    """Aggregates over the runs of a batch."""

    root_seed: int
    runs: List[RunSummary]
    failed_runs: int
    median_iters_to_floor: Optional[float] = None
    success_fraction: float
    final_qber_quantiles: Dict[str, float] = Field(default_factory=dict)
