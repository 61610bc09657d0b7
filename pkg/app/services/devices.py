"""
Device models: the LCVR compensator stack and the drifting fiber arms.

Device values are immutable; evolution is a pure function of (state, dt, rng).
"""

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.linalg import polar
from scipy.optimize import brentq, least_squares

from app.exceptions import ContractViolationError, DecompositionError, VoltageRangeError
from app.logger import get_logger
from app.services.parsing import CalibrationTable
from app.services.polcore import (
    HADAMARD,
    IDENTITY_U,
    Unitary2,
    axis_rotation,
    random_axis,
    waveplate,
)

# Create logger for this module
logger = get_logger(__name__)

TWO_PI = 2.0 * math.pi

DEFAULT_DELTA_MAX = 1.5 * math.pi + 0.1
DEFAULT_V_C = 2.2
DEFAULT_EXPONENT = 4.0
DEFAULT_RESPONSE_TIME = 0.005

# Optic axes of plates 1..4, light traverses plate 1 first
STACK_AXES = (0.0, math.pi / 4, 0.0, math.pi / 4)

VOLTAGE_TOLERANCE = 1e-9
RETARDANCE_TOLERANCE = 1e-9
EULER_EPS = 1e-12
DECOMPOSITION_FIDELITY = 1.0 - 1e-9
DECOMPOSITION_SCAN_POINTS = 48
REFINE_GRID = (1.0 / 3.0, 2.0 / 3.0)


@dataclass(frozen=True, eq=False)
class LcvrChannel:
    """
    One liquid crystal variable retarder with its voltage calibration.

    Without a table the response is delta_max / (1 + (V / v_c)^exponent);
    with a table it is the monotone piecewise-cubic interpolant of the samples.
    """

    delta_max: float = DEFAULT_DELTA_MAX
    v_min: float = 1.0
    v_max: float = 6.0
    v_c: float = DEFAULT_V_C
    exponent: float = DEFAULT_EXPONENT
    response_time: float = DEFAULT_RESPONSE_TIME
    table: Optional[CalibrationTable] = None
    _interpolator: Optional[PchipInterpolator] = field(
        default=None, init=False, repr=False
    )

    def __post_init__(self):
        if not self.v_min < self.v_max:
            raise ContractViolationError(
                f"v_min ({self.v_min}) must be below v_max ({self.v_max})"
            )
        if self.table is not None:
            voltages = self.table.voltages
            if voltages[0] > self.v_min + VOLTAGE_TOLERANCE or (
                voltages[-1] < self.v_max - VOLTAGE_TOLERANCE
            ):
                raise ContractViolationError(
                    f"calibration table {self.table.source!r} covers "
                    f"[{voltages[0]}, {voltages[-1]}] V, control range is "
                    f"[{self.v_min}, {self.v_max}] V"
                )
            interpolator = PchipInterpolator(voltages, self.table.retardances)
            object.__setattr__(self, "_interpolator", interpolator)
            object.__setattr__(self, "delta_max", float(interpolator(self.v_min)))
        elif self.delta_max <= 0 or self.v_c <= 0 or self.exponent <= 0:
            raise ContractViolationError(
                "delta_max, v_c and exponent of the response curve must be positive"
            )

    @property
    def delta_min(self) -> float:
        """Smallest achievable retardance, reached at v_max."""
        return retardance_of_voltage(self, self.v_max)

    @property
    def delta_top(self) -> float:
        """Largest achievable retardance, reached at v_min."""
        return retardance_of_voltage(self, self.v_min)


def retardance_of_voltage(ch: LcvrChannel, v: float) -> float:
    """Retardance in radians for drive voltage v; strictly decreasing in v."""
    if not (ch.v_min - VOLTAGE_TOLERANCE <= v <= ch.v_max + VOLTAGE_TOLERANCE):
        raise VoltageRangeError(v, ch.v_min, ch.v_max)
    v = min(max(v, ch.v_min), ch.v_max)
    if ch._interpolator is not None:
        return max(float(ch._interpolator(v)), 0.0)
    return ch.delta_max / (1.0 + (v / ch.v_c) ** ch.exponent)


def voltage_of_retardance(ch: LcvrChannel, delta: float) -> float:
    """Inverse calibration by root finding; delta is clipped to the channel's range."""
    hi, lo = ch.delta_top, ch.delta_min
    if delta >= hi:
        return ch.v_min
    if delta <= lo:
        return ch.v_max
    return float(
        brentq(
            lambda v: retardance_of_voltage(ch, v) - delta,
            ch.v_min,
            ch.v_max,
            xtol=1e-14,
            rtol=4 * np.finfo(float).eps,
        )
    )


@dataclass(frozen=True, eq=False)
class LcvrStack:
    """Four LCVRs with optic axes at 0, 45, 0, 45 degrees."""

    channels: Tuple[LcvrChannel, LcvrChannel, LcvrChannel, LcvrChannel] = field(
        default_factory=lambda: tuple(LcvrChannel() for _ in range(4))  # type: ignore[return-value]
    )

    def __post_init__(self):
        channels = tuple(self.channels)
        if len(channels) != 4:
            raise ContractViolationError(
                f"an LCVR stack has exactly 4 channels, got {len(channels)}"
            )
        object.__setattr__(self, "channels", channels)

    @property
    def axes(self) -> Tuple[float, ...]:
        return STACK_AXES

    @property
    def response_time(self) -> float:
        """Settling time after a voltage change; plates switch in parallel."""
        return max(ch.response_time for ch in self.channels)

    def retardances(self, voltages: Sequence[float]) -> List[float]:
        if len(voltages) != 4:
            raise ContractViolationError(f"expected 4 voltages, got {len(voltages)}")
        return [
            retardance_of_voltage(ch, float(v))
            for ch, v in zip(self.channels, voltages)
        ]


def plates_unitary(retardances: Sequence[float]) -> Unitary2:
    """Product W4 @ W3 @ W2 @ W1 for the given plate retardances."""
    total = IDENTITY_U
    for delta, theta in zip(retardances, STACK_AXES):
        total = waveplate(delta, theta) @ total
    return total


def stack_unitary(stack: LcvrStack, voltages: Sequence[float]) -> Unitary2:
    """Compensator transform T for the four drive voltages."""
    return plates_unitary(stack.retardances(voltages))


def _zxz_branches(matrix: np.ndarray) -> List[Tuple[float, float, float]]:
    """
    Angles (a, b, c) in [0, 2pi) with matrix ∝ Rz(a) Rx(b) Rz(c), both branches.

    Rz(t) = exp(-i t sigma_z / 2) is a retarder at 0 deg, Rx(t) one at 45 deg.
    The second branch (a + pi, -b, c + pi) describes the same transform.
    """
    su = matrix / np.sqrt(np.linalg.det(matrix))
    alpha, beta = su[0, 0], su[0, 1]
    b = 2.0 * math.atan2(abs(beta), abs(alpha))
    if abs(beta) < EULER_EPS:
        a, c = -2.0 * float(np.angle(alpha)), 0.0
    elif abs(alpha) < EULER_EPS:
        a, c = -2.0 * float(np.angle(1j * beta)), 0.0
    else:
        angle_sum = -2.0 * float(np.angle(alpha))
        angle_diff = -2.0 * float(np.angle(1j * beta))
        a, c = (angle_sum + angle_diff) / 2.0, (angle_sum - angle_diff) / 2.0

    branches = [(a, b, c), (a + math.pi, -b, c + math.pi)]
    return [
        (a_ % TWO_PI, b_ % TWO_PI, c_ % TWO_PI) for a_, b_, c_ in branches
    ]


def _fit_to_channel(ch: LcvrChannel, delta: float) -> Optional[float]:
    """A retardance equivalent to delta (mod 2pi) that the channel can reach."""
    lo, hi = ch.delta_min, ch.delta_top
    for k in range(-1, int(hi // TWO_PI) + 2):
        candidate = delta + k * TWO_PI
        if lo - RETARDANCE_TOLERANCE <= candidate <= hi + RETARDANCE_TOLERANCE:
            return min(max(candidate, lo), hi)
    return None


def _decomposition_attempts(stack: LcvrStack) -> Iterator[Tuple[int, float]]:
    """(parked plate index, parked retardance) in order of preference."""
    last, first = stack.channels[3], stack.channels[0]
    yield 3, last.delta_min
    yield 0, first.delta_min
    for park in np.linspace(last.delta_min, last.delta_top, DECOMPOSITION_SCAN_POINTS):
        yield 3, float(park)
    for park in np.linspace(first.delta_min, first.delta_top, DECOMPOSITION_SCAN_POINTS):
        yield 0, float(park)


def _phase_aligned_residual(retardances: np.ndarray, target: np.ndarray) -> np.ndarray:
    matrix = plates_unitary(retardances).matrix
    overlap = np.trace(target.conj().T @ matrix)
    phase = overlap / abs(overlap) if abs(overlap) > EULER_EPS else 1.0
    difference = matrix * np.conj(phase) - target
    return np.concatenate([difference.real.ravel(), difference.imag.ravel()])


def _euler_solutions(stack: LcvrStack, target: Unitary2) -> Iterator[np.ndarray]:
    """Candidate retardances from three-plate Euler solves with one plate parked."""
    for parked, park_delta in _decomposition_attempts(stack):
        if parked == 3:
            # W3 W2 W1 = W4^dagger T  ~  Rz(d3) Rx(d2) Rz(d1)
            residual = waveplate(park_delta, STACK_AXES[3]).dagger @ target
            branches = [(c, b, a) for a, b, c in _zxz_branches(residual.matrix)]
            free = (0, 1, 2)
        else:
            # W4 W3 W2 = T W1^dagger  ~  Rx(d4) Rz(d3) Rx(d2)
            residual = target @ waveplate(park_delta, STACK_AXES[0]).dagger
            conjugated = HADAMARD @ residual.matrix @ HADAMARD
            branches = [(c, b, a) for a, b, c in _zxz_branches(conjugated)]
            free = (1, 2, 3)

        for branch in branches:
            fitted = [
                _fit_to_channel(stack.channels[i], delta)
                for i, delta in zip(free, branch)
            ]
            if any(delta is None for delta in fitted):
                continue
            retardances = np.zeros(4)
            retardances[parked] = park_delta
            retardances[list(free)] = fitted
            yield retardances


def _refined_solutions(stack: LcvrStack, target: Unitary2) -> Iterator[np.ndarray]:
    """Bounded least-squares fits of all four retardances from a grid of starts."""
    lower = np.array([ch.delta_min for ch in stack.channels])
    upper = np.array([ch.delta_top for ch in stack.channels])
    for fractions in itertools.product(REFINE_GRID, repeat=4):
        start = lower + np.array(fractions) * (upper - lower)
        fit = least_squares(
            _phase_aligned_residual,
            start,
            bounds=(lower, upper),
            args=(target.matrix,),
            xtol=1e-14,
            ftol=1e-14,
            gtol=1e-14,
        )
        yield fit.x


def decompose_to_voltages(stack: LcvrStack, target: Unitary2) -> np.ndarray:
    """
    Drive voltages whose stack transform equals `target` up to global phase.

    Tries three-plate Euler decompositions with the remaining plate parked,
    preferring plate 4 parked at its minimum retardance; targets none of them
    reaches are fitted numerically over all four plates.
    """
    if not target.is_unitary(tol=1e-9):
        raise ContractViolationError("decomposition target is not unitary")

    candidates = itertools.chain(
        (("euler", r) for r in _euler_solutions(stack, target)),
        (("refined", r) for r in _refined_solutions(stack, target)),
    )
    for method, retardances in candidates:
        voltages = np.array(
            [
                voltage_of_retardance(ch, float(delta))
                for ch, delta in zip(stack.channels, retardances)
            ]
        )
        fidelity = stack_unitary(stack, voltages).fidelity(target)
        if fidelity >= DECOMPOSITION_FIDELITY:
            logger.debug("Decomposition found", method=method, fidelity=fidelity)
            return voltages

    raise DecompositionError(
        "target unreachable within the retardance ranges of the stack"
    )


@dataclass(frozen=True, eq=False)
class FiberChannel:
    """
    One fiber arm: current rotation plus the parameters of its random drift.

    drift_sigma is in rad/sqrt(s), jump_rate in events/s; `jumps` counts the
    jump events applied so far.
    """

    rotation: Unitary2 = IDENTITY_U
    loss_db: float = 0.0
    length_km: float = 0.0
    drift_sigma: float = 0.0
    jump_rate: float = 0.0
    jump_angle_scale: float = 0.0
    jumps: int = 0

    def __post_init__(self):
        if self.loss_db < 0:
            raise ContractViolationError(f"loss_db must be >= 0, got {self.loss_db}")
        if self.drift_sigma < 0 or self.jump_rate < 0 or self.jump_angle_scale < 0:
            raise ContractViolationError("drift and jump parameters must be >= 0")

    @property
    def is_static(self) -> bool:
        return self.drift_sigma == 0 and self.jump_rate == 0


def reorthonormalize(u: Unitary2) -> Unitary2:
    """Nearest unitary (polar factor)."""
    unitary, _ = polar(u.matrix)
    return Unitary2(unitary)


def evolve_fiber(f: FiberChannel, dt: float, rng: np.random.Generator) -> FiberChannel:
    """
    Advance the fiber rotation by dt seconds of drift plus Poisson-timed jumps.
    """
    if dt <= 0:
        raise ContractViolationError(f"dt must be positive, got {dt}")
    if f.is_static:
        return f

    rotation = f.rotation
    if f.drift_sigma > 0:
        eta = abs(rng.normal(0.0, f.drift_sigma * math.sqrt(dt)))
        rotation = axis_rotation(eta, random_axis(rng)) @ rotation

    jumps = int(rng.poisson(f.jump_rate * dt)) if f.jump_rate > 0 else 0
    for _ in range(jumps):
        angle = abs(rng.normal(0.0, f.jump_angle_scale))
        rotation = axis_rotation(angle, random_axis(rng)) @ rotation
    if jumps:
        logger.debug("Fiber jump", count=jumps, total=f.jumps + jumps)

    return replace(f, rotation=reorthonormalize(rotation), jumps=f.jumps + jumps)


def apply_jump(f: FiberChannel, angle: float, axis) -> FiberChannel:
    """Apply one jump rotation of `angle` about Stokes `axis` and count it."""
    rotation = axis_rotation(angle, axis) @ f.rotation
    return replace(f, rotation=reorthonormalize(rotation), jumps=f.jumps + 1)
