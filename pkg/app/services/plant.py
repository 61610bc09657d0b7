"""
Simulated compensation plant: LCVR stack on arm A, two drifting fiber arms,
singlet source and BBM92 receivers, with a simulated clock.
"""

import math
import os
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from app import schemas
from app.exceptions import ObjectiveError, PolCompError, ScenarioError
from app.logger import get_logger
from app.services import optimizer, qkd
from app.services.devices import (
    FiberChannel,
    LcvrChannel,
    LcvrStack,
    apply_jump,
    evolve_fiber,
    stack_unitary,
)
from app.services.parsing import load_calibration_table
from app.services.polcore import (
    H,
    IDENTITY_U,
    StokesVector,
    TwoPhotonState,
    Unitary2,
    apply_local,
    jones_to_stokes,
    random_axis,
    random_unitary,
    singlet,
)

# Create logger for this module
logger = get_logger(__name__)

MAX_START_ATTEMPTS = 1000
MAX_JUMP_AXIS_ATTEMPTS = 64
JUMP_SCAN_POINTS = 64


@dataclass(frozen=True)
class JumpEvent:
    elapsed_s: float
    arm: str
    scripted: bool = False
    angle: Optional[float] = None


class CompensationPlant:
    """
    Objective over the four drive voltages.

    Every evaluation charges settling plus accumulation time, evolves both
    fiber arms over that time, then samples one QBER block at the new voltages.
    """

    def __init__(
        self,
        stack: LcvrStack,
        fiber_a: FiberChannel,
        fiber_b: FiberChannel,
        detection: qkd.DetectionConfig,
        rng: np.random.Generator,
        disturbances: Sequence[schemas.DisturbanceConfig] = (),
        voltages: Optional[Sequence[float]] = None,
    ):
        self.stack = stack
        self.fiber_a = fiber_a
        self.fiber_b = fiber_b
        self.detection = detection
        self.rng = rng
        self.jump_events: List[JumpEvent] = []
        self._elapsed = 0.0
        self._pending = sorted(disturbances, key=lambda d: d.at_s)
        self.voltages = np.array(
            voltages if voltages is not None else [ch.v_min for ch in stack.channels],
            dtype=float,
        )
        self._last: Optional[optimizer.TraceRecord] = None

    @property
    def time_cost(self) -> float:
        return self.stack.response_time + self.detection.accumulation_time

    @property
    def elapsed(self) -> float:
        return self._elapsed

    def received_state(self, voltages: Sequence[float]) -> TwoPhotonState:
        """(T R_A tensor R_B) applied to the singlet."""
        compensator = stack_unitary(self.stack, voltages)
        return apply_local(
            compensator @ self.fiber_a.rotation, self.fiber_b.rotation, singlet()
        )

    def polarization_qber_at(self, voltages: Sequence[float]) -> float:
        return qkd.polarization_qber(self.received_state(voltages))

    def true_qber_at(self, voltages: Sequence[float]) -> float:
        return qkd.true_qber(self.polarization_qber_at(voltages), self.detection)

    def reference_stokes(self) -> StokesVector:
        """Stokes vector of |H> after fiber arm A."""
        return jones_to_stokes(self.fiber_a.rotation @ H)

    def advance(self, dt: float) -> None:
        """Evolve both arms by dt seconds and record any jumps."""
        jumps_a, jumps_b = self.fiber_a.jumps, self.fiber_b.jumps
        self.fiber_a = evolve_fiber(self.fiber_a, dt, self.rng)
        self.fiber_b = evolve_fiber(self.fiber_b, dt, self.rng)
        self._elapsed += dt
        for arm, new, old in (
            ("a", self.fiber_a.jumps, jumps_a),
            ("b", self.fiber_b.jumps, jumps_b),
        ):
            self.jump_events.extend(
                JumpEvent(elapsed_s=self._elapsed, arm=arm) for _ in range(new - old)
            )

    def inject_jump(self, qber_increase: float) -> JumpEvent:
        """
        Rotate arm A about a random axis by the angle that raises the true
        QBER at the current voltages by `qber_increase`.
        """
        baseline = self.true_qber_at(self.voltages)
        original = self.fiber_a

        def excess(angle: float, axis: np.ndarray) -> float:
            self.fiber_a = apply_jump(original, angle, axis)
            try:
                return self.true_qber_at(self.voltages) - baseline - qber_increase
            finally:
                self.fiber_a = original

        angles = np.linspace(0.0, math.pi, JUMP_SCAN_POINTS)
        for _ in range(MAX_JUMP_AXIS_ATTEMPTS):
            axis = random_axis(self.rng)
            values = [excess(angle, axis) for angle in angles]
            crossing = next((i for i, value in enumerate(values) if value >= 0), None)
            if crossing is None or crossing == 0:
                continue
            angle = brentq(
                excess, angles[crossing - 1], angles[crossing], args=(axis,), xtol=1e-12
            )
            self.fiber_a = apply_jump(original, angle, axis)
            event = JumpEvent(
                elapsed_s=self._elapsed, arm="a", scripted=True, angle=float(angle)
            )
            self.jump_events.append(event)
            logger.info(
                "Scripted fiber jump injected",
                elapsed_s=self._elapsed,
                angle=float(angle),
                qber_before=baseline,
                qber_after=self.true_qber_at(self.voltages),
            )
            return event
        raise ScenarioError(
            f"no jump axis raises the QBER by {qber_increase} from {baseline:.4f}"
        )

    def apply_due_disturbances(self) -> None:
        while self._pending and self._pending[0].at_s <= self._elapsed:
            disturbance = self._pending.pop(0)
            self.inject_jump(disturbance.qber_increase)

    def _read(self, voltages: np.ndarray, estimate: qkd.QberEstimate) -> None:
        self.voltages = np.array(voltages, dtype=float)
        q_true = self.true_qber_at(self.voltages)
        self._last = optimizer.TraceRecord(
            elapsed_s=self._elapsed,
            qber_est=estimate.value,
            qber_true=q_true,
            voltages=tuple(float(v) for v in self.voltages),
            range_v=0.0,
            stokes=self.reference_stokes(),
        )

    def _sample(self, voltages: np.ndarray) -> qkd.QberEstimate:
        try:
            q_true = self.true_qber_at(voltages)
        except PolCompError as exc:
            raise ObjectiveError(f"evaluation at {list(voltages)} failed: {exc}") from exc
        return qkd.sample_qber_estimate(q_true, self.detection, self.rng)

    def measure(self, voltages: np.ndarray) -> qkd.QberEstimate:
        """One accumulation block without advancing the clock."""
        estimate = self._sample(voltages)
        self._read(voltages, estimate)
        return estimate

    def evaluate(self, voltages: np.ndarray) -> qkd.QberEstimate:
        self.apply_due_disturbances()
        self.advance(self.time_cost)
        estimate = self._sample(voltages)
        self._read(voltages, estimate)
        return estimate

    def reading(self) -> optimizer.TraceRecord:
        if self._last is None:
            raise ObjectiveError("plant has not been measured yet")
        return self._last


def effective_coincidence_rate(cfg: schemas.ScenarioConfig) -> float:
    """Coincidence rate rescaled from the reference loss to the configured link loss."""
    total_loss = cfg.link.arm_a.loss_db + cfg.link.arm_b.loss_db
    return cfg.detection.coincidence_rate * 10 ** (
        -(total_loss - cfg.detection.reference_loss_db) / 10.0
    )


def build_detection(cfg: schemas.ScenarioConfig) -> qkd.DetectionConfig:
    return qkd.DetectionConfig(
        coincidence_rate=effective_coincidence_rate(cfg),
        sift_ratio=cfg.detection.sift_ratio,
        accumulation_time=cfg.detection.accumulation_time,
        intrinsic_error=cfg.detection.intrinsic_error,
    )


def build_search(cfg: schemas.ScenarioConfig) -> optimizer.SearchConfig:
    return optimizer.SearchConfig(**cfg.search.model_dump())


def build_stack(cfg: schemas.ScenarioConfig, base_dir: str = ".") -> LcvrStack:
    channels = []
    for channel in cfg.lcvr.channels:
        table = None
        if channel.calibration_file:
            path = channel.calibration_file
            if not os.path.isabs(path):
                path = os.path.join(base_dir, path)
            table = load_calibration_table(path)
        channels.append(
            LcvrChannel(
                delta_max=channel.delta_max,
                v_min=channel.v_min,
                v_max=channel.v_max,
                v_c=channel.v_c,
                exponent=channel.exponent,
                response_time=channel.response_time,
                table=table,
            )
        )
    return LcvrStack(tuple(channels))  # type: ignore[arg-type]


def _initial_rotation(arm: schemas.FiberConfig, rng: np.random.Generator) -> Unitary2:
    return random_unitary(rng) if arm.initial_rotation == "haar" else IDENTITY_U


def build_fiber(
    arm: schemas.FiberConfig, rotation: Unitary2 = IDENTITY_U
) -> FiberChannel:
    return FiberChannel(
        rotation=rotation,
        loss_db=arm.loss_db,
        length_km=arm.length_km,
        drift_sigma=arm.drift_sigma,
        jump_rate=arm.jump_rate,
        jump_angle_scale=arm.jump_angle_scale,
    )


def build_plant(
    cfg: schemas.ScenarioConfig,
    rng: np.random.Generator,
    start_voltages: Sequence[float],
    base_dir: str = ".",
) -> CompensationPlant:
    """
    Assemble the plant for a scenario. Starting rotations are redrawn until the
    uncompensated polarization QBER at `start_voltages` reaches
    link.min_initial_qber.
    """
    stack = build_stack(cfg, base_dir)
    detection = build_detection(cfg)
    plant: Optional[CompensationPlant] = None
    for attempt in range(1, MAX_START_ATTEMPTS + 1):
        plant = CompensationPlant(
            stack,
            build_fiber(cfg.link.arm_a, _initial_rotation(cfg.link.arm_a, rng)),
            build_fiber(cfg.link.arm_b, _initial_rotation(cfg.link.arm_b, rng)),
            detection,
            rng,
            disturbances=cfg.disturbances,
            voltages=start_voltages,
        )
        q_pol = plant.polarization_qber_at(start_voltages)
        redrawable = "haar" in (
            cfg.link.arm_a.initial_rotation,
            cfg.link.arm_b.initial_rotation,
        )
        if q_pol >= cfg.link.min_initial_qber or not redrawable:
            logger.debug("Plant assembled", attempts=attempt, initial_q_pol=q_pol)
            return plant
    logger.warning(
        "Starting condition not reached, keeping last draw",
        min_initial_qber=cfg.link.min_initial_qber,
        attempts=MAX_START_ATTEMPTS,
    )
    assert plant is not None
    return plant
