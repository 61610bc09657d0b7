import numpy as np
import pytest

from app.exceptions import ObjectiveError, ScenarioError
from app.schemas import ScenarioConfig, validate_scenario
from app.services import qkd
from app.services.devices import FiberChannel, LcvrStack, decompose_to_voltages
from app.services.plant import (
    CompensationPlant,
    build_plant,
    build_search,
    build_stack,
    effective_coincidence_rate,
)
from app.services.polcore import random_unitary
from tests.conftest import static_link_data

START = np.array([3.5, 3.5, 3.5, 3.5])


def make_plant(rng, fiber_a=None, fiber_b=None, **kwargs):
    return CompensationPlant(
        LcvrStack(),
        fiber_a or FiberChannel(rotation=random_unitary(rng)),
        fiber_b or FiberChannel(rotation=random_unitary(rng)),
        qkd.DetectionConfig(),
        rng,
        voltages=START,
        **kwargs,
    )


def test_default_rate_is_reference_rate(default_config):
    assert effective_coincidence_rate(default_config) == pytest.approx(670.0)


def test_rate_scales_with_loss():
    cfg = validate_scenario({"link": {"arm_a": {"loss_db": 10.0}}})
    assert effective_coincidence_rate(cfg) == pytest.approx(670.0 * 10 ** -0.3)


def test_evaluation_charges_time(rng):
    plant = make_plant(rng)
    plant.evaluate(START)
    plant.evaluate(START)
    assert plant.time_cost == pytest.approx(2.005)
    assert plant.elapsed == pytest.approx(2 * 2.005)
    assert plant.reading().elapsed_s == pytest.approx(2 * 2.005)


def test_measure_does_not_advance_clock(rng):
    plant = make_plant(rng)
    estimate = plant.measure(START)
    assert plant.elapsed == 0.0
    assert 0.0 <= estimate.value <= 1.0
    record = plant.reading()
    assert record.voltages == (3.5, 3.5, 3.5, 3.5)
    assert record.stokes.s0 == 1.0


def test_reading_before_measurement_fails(rng):
    with pytest.raises(ObjectiveError):
        make_plant(rng).reading()


def test_out_of_range_voltages_fail_evaluation(rng):
    with pytest.raises(ObjectiveError):
        make_plant(rng).evaluate(np.array([0.2, 3.0, 3.0, 3.0]))


def test_exact_compensation_reaches_floor(rng):
    plant = make_plant(rng)
    target = plant.fiber_b.rotation @ plant.fiber_a.rotation.dagger
    voltages = decompose_to_voltages(plant.stack, target)
    assert plant.polarization_qber_at(voltages) == pytest.approx(0.0, abs=1e-6)
    assert plant.true_qber_at(voltages) == pytest.approx(0.04, abs=1e-6)


def test_static_plant_reports_no_jumps(rng):
    plant = make_plant(rng)
    before = plant.fiber_a.rotation.matrix.copy()
    plant.advance(3600.0)
    np.testing.assert_array_equal(plant.fiber_a.rotation.matrix, before)
    assert plant.jump_events == []


def test_random_jumps_are_recorded(rng):
    fiber = FiberChannel(jump_rate=0.01, jump_angle_scale=0.5)
    plant = make_plant(rng, fiber_a=fiber)
    for _ in range(100):
        plant.advance(10.0)
    assert len(plant.jump_events) == plant.fiber_a.jumps > 0
    assert all(event.arm == "a" and not event.scripted for event in plant.jump_events)


def test_injected_jump_raises_qber_by_requested_amount(rng):
    plant = make_plant(rng)
    target = plant.fiber_b.rotation @ plant.fiber_a.rotation.dagger
    plant.voltages = decompose_to_voltages(plant.stack, target)
    before = plant.true_qber_at(plant.voltages)
    event = plant.inject_jump(0.03)
    assert event.scripted and event.arm == "a"
    assert plant.true_qber_at(plant.voltages) - before == pytest.approx(0.03, abs=1e-6)


def test_unreachable_jump_is_reported(rng):
    plant = make_plant(rng)
    with pytest.raises(ScenarioError):
        plant.inject_jump(1.0)


def test_scripted_disturbance_fires_at_boundary(rng):
    cfg = validate_scenario(
        static_link_data(disturbances=[{"at_s": 5.0, "qber_increase": 0.03}])
    )
    plant = make_plant(rng, disturbances=cfg.disturbances)
    for _ in range(3):
        plant.evaluate(START)
    assert plant.jump_events == []
    plant.evaluate(START)
    assert len(plant.jump_events) == 1
    assert plant.jump_events[0].elapsed_s == pytest.approx(3 * 2.005)


def test_build_plant_meets_start_condition(default_config, rng):
    search = build_search(default_config)
    plant = build_plant(default_config, rng, search.start_center)
    assert plant.polarization_qber_at(search.start_center) >= 0.4
    assert plant.detection.coincidence_rate == pytest.approx(670.0)


def test_build_plant_with_identity_start(rng):
    cfg = validate_scenario(
        {
            "link": {
                "arm_a": {"initial_rotation": "identity"},
                "arm_b": {"initial_rotation": "identity", "drift_sigma": 0.0},
            }
        }
    )
    plant = build_plant(cfg, rng, build_search(cfg).midpoint)
    np.testing.assert_array_equal(plant.fiber_a.rotation.matrix, np.eye(2))


def test_build_stack_resolves_calibration_files(tmp_path, zero_table_file):
    cfg = ScenarioConfig.model_validate(
        {
            "lcvr": {
                "channels": [{"calibration_file": zero_table_file.name}] * 4,
            }
        }
    )
    stack = build_stack(cfg, base_dir=str(zero_table_file.parent))
    assert all(ch.table is not None for ch in stack.channels)
    assert stack.channels[0].delta_min == pytest.approx(0.0)
