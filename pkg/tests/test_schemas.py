import json
from pathlib import Path

import pytest

from app.exceptions import ConfigError
from app.schemas import ScenarioConfig, ScenarioKind, validate_scenario
from app.services.plant import build_stack
from app.storage import crud

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def test_defaults(default_config):
    assert default_config.kind == ScenarioKind.OPTIMIZE
    assert default_config.floor == 0.04
    assert default_config.converged_level == pytest.approx(0.06)
    assert len(default_config.lcvr.channels) == 4
    assert default_config.search.bounds == [(1.0, 6.0)] * 4
    assert default_config.link.arm_b.loss_db == 0.0
    assert default_config.search.r_min == 0.2
    assert default_config.search.r_max == 3.0
    assert default_config.search.initial_center == [2.5] * 4


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError) as excinfo:
        validate_scenario({"detection": {"coincidence_rte": 500}})
    assert excinfo.value.issues[0][0] == "detection.coincidence_rte"


def test_channel_error_carries_field_path():
    channels = [{}, {}, {"v_min": 7.0}, {}]
    with pytest.raises(ConfigError) as excinfo:
        validate_scenario({"lcvr": {"channels": channels}})
    assert excinfo.value.issues[0][0] == "lcvr.channels.2"
    assert "lcvr.channels.2" in str(excinfo.value)


@pytest.mark.parametrize(
    "data, path",
    [
        ({"search": {"bounds": [[1.0, 6.0]] * 3}}, "search.bounds"),
        ({"detection": {"intrinsic_error": 0.5}}, "detection.intrinsic_error"),
        ({"seed": 2**64}, "seed"),
        ({"link": {"arm_a": {"initial_rotation": "random"}}}, "link.arm_a.initial_rotation"),
        ({"disturbances": [{"qber_increase": 0.03}]}, "disturbances.0.at_s"),
        ({"search": {"initial_center": [2.5] * 3}}, "search"),
        ({"search": {"initial_center": [0.5, 2.5, 2.5, 2.5]}}, "search"),
    ],
)
def test_invalid_fields_are_reported_by_path(data, path):
    with pytest.raises(ConfigError) as excinfo:
        validate_scenario(data)
    assert path in [issue_path for issue_path, _ in excinfo.value.issues]


def test_search_bounds_must_fit_channel_range():
    with pytest.raises(ConfigError, match="search.bounds.0"):
        validate_scenario({"search": {"bounds": [[0.5, 6.0]] + [[1.0, 6.0]] * 3}})


def test_batch_cannot_repeat_batches():
    with pytest.raises(ConfigError):
        validate_scenario({"batch_kind": "batch"})


def test_config_round_trip():
    cfg = validate_scenario(
        {
            "seed": 2**64 - 1,
            "kind": "drift_log",
            "disturbances": [{"at_s": 300.0}],
            "search": {"bounds": [[1.5, 5.5]] * 4},
        }
    )
    reloaded = validate_scenario(json.loads(cfg.model_dump_json()))
    assert reloaded == cfg
    assert isinstance(reloaded, ScenarioConfig)


@pytest.mark.parametrize("name", ["default.json", "jump_recovery.json", "drift_72h.json"])
def test_shipped_configs_are_valid(name):
    path = CONFIG_DIR / name
    cfg = crud.load_config(str(path))
    stack = build_stack(cfg, base_dir=str(CONFIG_DIR))
    assert len(stack.channels) == 4
