import math
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import minimize

from app.exceptions import ContractViolationError, DecompositionError, VoltageRangeError
from app.services.devices import (
    FiberChannel,
    LcvrChannel,
    LcvrStack,
    apply_jump,
    decompose_to_voltages,
    evolve_fiber,
    plates_unitary,
    retardance_of_voltage,
    stack_unitary,
    voltage_of_retardance,
)
from app.services.parsing import load_calibration_table
from app.services.polcore import (
    IDENTITY_U,
    Unitary2,
    random_unitary,
    rotation_angle,
    waveplate,
)


CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def tabulated_stack(zero_table_file):
    table = load_calibration_table(str(zero_table_file))
    return LcvrStack(tuple(LcvrChannel(table=table) for _ in range(4)))


def test_default_curve_endpoints():
    ch = LcvrChannel()
    assert retardance_of_voltage(ch, 1.0) == pytest.approx(1.5 * math.pi, abs=0.15)
    assert retardance_of_voltage(ch, 6.0) == pytest.approx(0.0, abs=0.15)


def test_retardance_strictly_decreasing():
    ch = LcvrChannel()
    values = [retardance_of_voltage(ch, v) for v in np.linspace(1.0, 6.0, 101)]
    assert all(a > b for a, b in zip(values, values[1:]))


@pytest.mark.parametrize("voltage", [0.5, 7.0])
def test_voltage_outside_range_rejected(voltage):
    with pytest.raises(VoltageRangeError):
        retardance_of_voltage(LcvrChannel(), voltage)


def test_voltage_of_retardance_inverts_curve():
    ch = LcvrChannel()
    for v in np.linspace(1.1, 5.9, 25):
        assert voltage_of_retardance(ch, retardance_of_voltage(ch, v)) == pytest.approx(
            v, abs=1e-8
        )


def test_voltage_of_retardance_clips_to_range():
    ch = LcvrChannel()
    assert voltage_of_retardance(ch, 10.0) == ch.v_min
    assert voltage_of_retardance(ch, 0.0) == ch.v_max


def test_tabulated_channel_follows_samples(tabulated_stack):
    ch = tabulated_stack.channels[0]
    assert retardance_of_voltage(ch, 2.0) == pytest.approx(3.0)
    assert ch.delta_min == pytest.approx(0.0)
    assert ch.delta_top == pytest.approx(4.8)


def test_table_must_cover_control_range(zero_table_file):
    table = load_calibration_table(str(zero_table_file))
    with pytest.raises(ContractViolationError):
        LcvrChannel(v_min=0.5, table=table)


def test_stack_needs_four_channels():
    with pytest.raises(ContractViolationError):
        LcvrStack((LcvrChannel(),) * 3)  # type: ignore[arg-type]


def test_stack_unitary_is_unitary():
    stack = LcvrStack()
    assert stack_unitary(stack, [1.5, 2.5, 3.5, 4.5]).is_unitary(1e-12)
    assert stack.response_time == pytest.approx(0.005)


def test_zero_retardance_plates_give_identity():
    assert plates_unitary([0.0, 0.0, 0.0, 0.0]).fidelity(IDENTITY_U) == pytest.approx(1.0)


def explicit_retarder(delta, theta):
    c, s, e = math.cos(theta), math.sin(theta), np.exp(1j * delta)
    return np.array(
        [[c * c + e * s * s, c * s * (1 - e)], [c * s * (1 - e), s * s + e * c * c]]
    )


def test_stack_unitary_matches_explicit_chain(rng):
    stack = LcvrStack()
    for _ in range(200):
        voltages = rng.uniform(1.0, 6.0, size=4)
        chain = np.eye(2, dtype=complex)
        for ch, v, theta in zip(stack.channels, voltages, (0.0, math.pi / 4) * 2):
            chain = explicit_retarder(retardance_of_voltage(ch, v), theta) @ chain
        np.testing.assert_allclose(stack_unitary(stack, voltages).matrix, chain, atol=1e-12)


@pytest.mark.parametrize("plate, theta", [(0, 0.0), (1, math.pi / 4)])
def test_single_active_plate_reduces_to_waveplate(tabulated_stack, plate, theta):
    voltages = [6.0] * 4
    voltages[plate] = voltage_of_retardance(tabulated_stack.channels[plate], math.pi)
    reduced = stack_unitary(tabulated_stack, voltages)
    assert reduced.fidelity(waveplate(math.pi, theta)) >= 1 - 1e-9


@pytest.mark.parametrize("calibration", [None, "lcvr_measured.txt"])
def test_retardance_continuous_over_one_millivolt(calibration):
    ch = LcvrChannel()
    if calibration is not None:
        ch = LcvrChannel(table=load_calibration_table(str(CONFIG_DIR / calibration)))
    grid = np.arange(1.0, 6.0 - 1e-9, 0.001)
    steps = [
        abs(retardance_of_voltage(ch, v + 0.001) - retardance_of_voltage(ch, v))
        for v in grid
    ]
    assert max(steps) <= 0.01


def test_decompose_identity_with_zero_ending_table(tabulated_stack):
    voltages = decompose_to_voltages(tabulated_stack, IDENTITY_U)
    np.testing.assert_allclose(voltages, [6.0, 6.0, 6.0, 6.0], atol=1e-9)


def best_reachable_fidelity(stack, target, starts=48, seed=0):
    """Multi-start bounded search of the retardance box for the closest stack transform."""
    lower = [ch.delta_min for ch in stack.channels]
    upper = [ch.delta_top for ch in stack.channels]
    starts_rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(starts):
        fit = minimize(
            lambda r: 1.0 - plates_unitary(r).fidelity(target),
            starts_rng.uniform(lower, upper),
            method="L-BFGS-B",
            bounds=list(zip(lower, upper)),
        )
        best = max(best, 1.0 - float(fit.fun))
    return best


def decompose_or_confirm_unreachable(stack, target) -> bool:
    """True when the target round-trips; False when it is confirmed out of reach."""
    try:
        voltages = decompose_to_voltages(stack, target)
    except DecompositionError:
        assert best_reachable_fidelity(stack, target) < 1 - 1e-6
        return False
    assert np.all((voltages >= 1.0) & (voltages <= 6.0))
    assert stack_unitary(stack, voltages).fidelity(target) >= 1 - 1e-6
    return True


def test_decompose_round_trip_haar_targets(rng):
    # The default curve spans about 4.53 rad, so a small share of U(2) is out of reach
    stack = LcvrStack()
    reached = [decompose_or_confirm_unreachable(stack, random_unitary(rng)) for _ in range(100)]
    assert reached.count(False) <= 3


@pytest.mark.slow
@pytest.mark.parametrize("seed, unreachable_at_least", [(3, 1), (11, 2)])
def test_decompose_seeds_with_unreachable_targets(seed, unreachable_at_least):
    stack = LcvrStack()
    draws = np.random.default_rng(seed)
    reached = [
        decompose_or_confirm_unreachable(stack, random_unitary(draws)) for _ in range(100)
    ]
    assert unreachable_at_least <= reached.count(False) <= 4


def test_decompose_reproduces_stack_setting():
    stack = LcvrStack()
    target = stack_unitary(stack, [2.0, 3.0, 1.7, 4.4])
    voltages = decompose_to_voltages(stack, target)
    assert stack_unitary(stack, voltages).fidelity(target) >= 1 - 1e-6


def test_decompose_rejects_non_unitary():
    with pytest.raises(ContractViolationError):
        decompose_to_voltages(LcvrStack(), Unitary2(np.array([[2.0, 0.0], [0.0, 1.0]])))


def test_static_fiber_does_not_change(rng):
    fiber = FiberChannel(rotation=random_unitary(rng))
    assert evolve_fiber(fiber, 10.0, rng) is fiber


def test_fiber_evolution_stays_unitary(rng):
    fiber = FiberChannel(drift_sigma=0.004, jump_rate=0.01, jump_angle_scale=0.5)
    for _ in range(500):
        fiber = evolve_fiber(fiber, 2.0, rng)
    assert fiber.rotation.is_unitary(1e-10)


def test_fiber_drift_is_small_over_short_steps(rng):
    fiber = FiberChannel(drift_sigma=0.004)
    evolved = evolve_fiber(fiber, 2.0, rng)
    # |N(0, 0.004 * sqrt(2))| stays far below 0.05 rad
    assert rotation_angle(evolved.rotation @ fiber.rotation.dagger) < 0.05
    assert evolved.jumps == 0


def test_fiber_rejects_non_positive_step(rng):
    with pytest.raises(ContractViolationError):
        evolve_fiber(FiberChannel(drift_sigma=0.004), 0.0, rng)


def test_jump_count_matches_rate(rng):
    # 72 h at one jump per hour
    counts = []
    for _ in range(40):
        fiber = FiberChannel(jump_rate=1.0 / 3600.0, jump_angle_scale=0.5)
        for _ in range(72):
            fiber = evolve_fiber(fiber, 3600.0, rng)
        counts.append(fiber.jumps)
    assert np.mean(counts) == pytest.approx(72.0, abs=6.0)


def test_apply_jump_counts_and_rotates():
    fiber = apply_jump(FiberChannel(), 0.8, (0.0, 1.0, 0.0))
    assert fiber.jumps == 1
    assert rotation_angle(fiber.rotation) == pytest.approx(0.8)


def mean_drift_angles(dt, checkpoints, runs, rng):
    """Ensemble mean of the accumulated rotation angle at each checkpoint time."""
    steps = {round(t / dt): t for t in checkpoints}
    angles = {t: [] for t in checkpoints}
    for _ in range(runs):
        fiber = FiberChannel(drift_sigma=0.004)
        for step in range(1, max(steps) + 1):
            fiber = evolve_fiber(fiber, dt, rng)
            if step in steps:
                angles[steps[step]].append(rotation_angle(fiber.rotation))
    return {t: float(np.mean(values)) for t, values in angles.items()}


@pytest.mark.slow
def test_drift_angle_grows_as_sqrt_time(rng):
    coarse = mean_drift_angles(10.0, (100.0, 400.0), 1000, rng)
    fine = mean_drift_angles(1.0, (100.0, 400.0), 1000, rng)
    assert coarse[400.0] / coarse[100.0] == pytest.approx(2.0, rel=0.1)
    for t in (100.0, 400.0):
        assert coarse[t] == pytest.approx(fine[t], rel=0.1)
        # isotropic small-angle walk: E|angle| = sigma * sqrt(8 t / (3 pi))
        assert fine[t] == pytest.approx(0.004 * math.sqrt(8 * t / (3 * math.pi)), rel=0.1)
