"""
Stochastic shrinking-hypercube search over the four LCVR voltages and the
control loop that keeps running it against a drifting plant.

Each iteration evaluates K points drawn uniformly in a box of side R around
the current center; the best point becomes the next center and
R = A * (q_min - q_threshold)^B, clamped to [r_min, r_max].
"""

from dataclasses import dataclass, field, replace
from typing import Callable, List, NamedTuple, Optional, Protocol, Sequence

import numpy as np

from app.exceptions import (
    ContractViolationError,
    ControlLoopError,
    PolCompError,
    SearchIterationError,
)
from app.logger import get_logger
from app.services.polcore import StokesVector
from app.services.qkd import QberEstimate

# Create logger for this module
logger = get_logger(__name__)

DEFAULT_BOUNDS = ((1.0, 6.0),) * 4


@dataclass(frozen=True)
class SearchConfig:
    points_per_iteration: int = 10
    shrink_gain: float = 6.5
    shrink_exponent: float = 2.0
    qber_threshold: float = 0.04
    bounds: Sequence[Sequence[float]] = DEFAULT_BOUNDS
    r_min: float = 0.05
    r_max: float = 5.0
    initial_center: Optional[Sequence[float]] = None

    def __post_init__(self):
        bounds = np.array(self.bounds, dtype=float)
        if bounds.shape != (4, 2):
            raise ContractViolationError(
                f"bounds must be 4 [low, high] pairs, got shape {bounds.shape}"
            )
        if np.any(bounds[:, 0] >= bounds[:, 1]):
            raise ContractViolationError("each bound needs low < high")
        if self.points_per_iteration < 1:
            raise ContractViolationError("points_per_iteration must be >= 1")
        if self.shrink_gain <= 0:
            raise ContractViolationError("shrink_gain must be positive")
        if not 0 < self.r_min <= self.r_max:
            raise ContractViolationError("need 0 < r_min <= r_max")
        object.__setattr__(self, "bounds", tuple(map(tuple, bounds.tolist())))
        if self.initial_center is not None:
            center = np.array(self.initial_center, dtype=float)
            if center.shape != (4,):
                raise ContractViolationError(
                    f"initial_center needs 4 voltages, got shape {center.shape}"
                )
            if np.any(center < bounds[:, 0]) or np.any(center > bounds[:, 1]):
                raise ContractViolationError(
                    f"initial_center {center.tolist()} lies outside the bounds"
                )
            object.__setattr__(self, "initial_center", tuple(center.tolist()))

    @property
    def lower(self) -> np.ndarray:
        return np.array([low for low, _ in self.bounds])

    @property
    def upper(self) -> np.ndarray:
        return np.array([high for _, high in self.bounds])

    @property
    def midpoint(self) -> np.ndarray:
        return (self.lower + self.upper) / 2.0

    @property
    def start_center(self) -> np.ndarray:
        """Center of the first iteration: initial_center, else the bounds midpoint."""
        if self.initial_center is None:
            return self.midpoint
        return np.array(self.initial_center)


@dataclass(frozen=True, eq=False)
class SearchState:
    center: np.ndarray
    range_v: float
    iteration: int = 0
    best_estimate: Optional[QberEstimate] = None
    elapsed: float = 0.0

    def __post_init__(self):
        center = np.array(self.center, dtype=float)
        center.setflags(write=False)
        object.__setattr__(self, "center", center)


class Objective(Protocol):
    """Anything that measures a QBER estimate for four voltages."""

    @property
    def time_cost(self) -> float:
        """Simulated seconds charged per evaluation (settling + accumulation)."""
        ...

    def evaluate(self, voltages: np.ndarray) -> QberEstimate: ...


EvaluationCallback = Callable[[np.ndarray, QberEstimate, float], None]


def initial_state(cfg: SearchConfig) -> SearchState:
    """First iteration: center at start_center, R = r_max."""
    return SearchState(center=cfg.start_center, range_v=cfg.r_max)


def shrink_radius(q_min: float, cfg: SearchConfig) -> float:
    """R = clamp(A * max(q_min - threshold, 0)^B, r_min, r_max)."""
    if not 0.0 <= q_min <= 1.0:
        raise ContractViolationError(f"q_min must be in [0, 1], got {q_min}")
    excess = max(q_min - cfg.qber_threshold, 0.0)
    radius = cfg.shrink_gain * excess**cfg.shrink_exponent
    return min(max(radius, cfg.r_min), cfg.r_max)


def sample_hypercube(
    center: np.ndarray, range_v: float, cfg: SearchConfig, rng: np.random.Generator
) -> np.ndarray:
    """K points uniform in [center - R/2, center + R/2]^4, clamped to the bounds."""
    center = np.asarray(center, dtype=float)
    half = range_v / 2.0
    points = rng.uniform(
        center - half, center + half, size=(cfg.points_per_iteration, center.size)
    )
    return np.clip(points, cfg.lower, cfg.upper)


def select_best(estimates: Sequence[QberEstimate]) -> int:
    """Index of the smallest estimate; empty estimates rank last, ties go to the lowest index."""
    values = np.array([np.inf if e.is_empty else e.value for e in estimates])
    if np.all(np.isinf(values)):
        return 0
    return int(np.argmin(values))


def search_iteration(
    state: SearchState,
    obj: Objective,
    cfg: SearchConfig,
    rng: np.random.Generator,
    on_evaluation: Optional[EvaluationCallback] = None,
) -> SearchState:
    points = sample_hypercube(state.center, state.range_v, cfg, rng)
    estimates: List[QberEstimate] = []
    try:
        for point in points:
            estimate = obj.evaluate(point)
            estimates.append(estimate)
            if on_evaluation is not None:
                on_evaluation(point, estimate, state.range_v)
    except PolCompError as exc:
        logger.warning(
            "Search iteration aborted", iteration=state.iteration + 1, error=str(exc)
        )
        raise SearchIterationError(state, exc) from exc

    best = select_best(estimates)
    best_estimate = estimates[best]
    new_range = shrink_radius(best_estimate.value, cfg)
    logger.debug(
        "Search iteration completed",
        iteration=state.iteration + 1,
        q_min=best_estimate.value,
        range_v=new_range,
        center=points[best].tolist(),
    )
    return replace(
        state,
        center=points[best],
        range_v=new_range,
        iteration=state.iteration + 1,
        best_estimate=best_estimate,
        elapsed=state.elapsed + len(points) * obj.time_cost,
    )


class TraceRecord(NamedTuple):
    """One row of a run trace."""

    elapsed_s: float
    qber_est: float
    qber_true: float
    voltages: tuple
    range_v: float
    stokes: StokesVector


class IterationRecord(NamedTuple):
    iteration: int
    elapsed_s: float
    q_min: float
    range_v: float
    center: tuple


@dataclass
class ControlTrace:
    """Time-ordered evaluation records plus one summary record per iteration."""

    records: List[TraceRecord] = field(default_factory=list)
    iterations: List[IterationRecord] = field(default_factory=list)
    final_state: Optional[SearchState] = None

    @property
    def baseline(self) -> TraceRecord:
        return self.records[0]


class Plant(Objective, Protocol):
    """Objective backed by a simulated link that also reports the hidden truth."""

    @property
    def elapsed(self) -> float: ...

    def measure(self, voltages: np.ndarray) -> QberEstimate: ...

    def reading(self) -> "TraceRecord": ...


def run_control_loop(
    plant: Plant,
    cfg: SearchConfig,
    duration: float,
    rng: np.random.Generator,
    state: Optional[SearchState] = None,
) -> ControlTrace:
    """
    Keep searching while another full iteration fits in `duration`.

    The first record is a baseline measurement at the starting center taken
    before the search; it does not advance the simulated clock.
    """
    if duration <= 0:
        raise ContractViolationError(f"duration must be positive, got {duration}")
    state = state or initial_state(cfg)
    trace = ControlTrace()

    plant.measure(state.center)
    trace.records.append(plant.reading()._replace(range_v=state.range_v))

    def record(point: np.ndarray, estimate: QberEstimate, range_v: float) -> None:
        trace.records.append(plant.reading()._replace(range_v=range_v))

    iteration_cost = cfg.points_per_iteration * plant.time_cost
    while state.elapsed + iteration_cost <= duration:
        try:
            state = search_iteration(state, plant, cfg, rng, on_evaluation=record)
        except SearchIterationError as exc:
            trace.final_state = exc.prior_state
            raise ControlLoopError(trace, exc.cause) from exc
        assert state.best_estimate is not None
        trace.iterations.append(
            IterationRecord(
                iteration=state.iteration,
                elapsed_s=state.elapsed,
                q_min=state.best_estimate.value,
                range_v=state.range_v,
                center=tuple(state.center.tolist()),
            )
        )

    trace.final_state = state
    logger.info(
        "Control loop finished",
        iterations=state.iteration,
        elapsed_s=state.elapsed,
        final_q_min=state.best_estimate.value if state.best_estimate else None,
    )
    return trace
