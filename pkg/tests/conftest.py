import numpy as np
import pytest

from app.schemas import ScenarioConfig, validate_scenario

# Measured-style table whose retardance reaches exactly zero at the top voltage
ZERO_ENDING_TABLE = """\
# voltage_V retardance_rad
1.0 4.80
1.5 4.00
2.0 3.00
2.5 2.00
3.0 1.20
4.0 0.50
5.0 0.15
6.0 0.00
"""


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def zero_table_file(tmp_path):
    path = tmp_path / "lcvr_zero.txt"
    path.write_text(ZERO_ENDING_TABLE, encoding="utf-8")
    return path


def static_link_data(**overrides) -> dict:
    """Config dict for a link that neither drifts nor jumps."""
    quiet_arm = {"drift_sigma": 0.0, "jump_rate": 0.0}
    data = {
        "link": {"arm_a": dict(quiet_arm)},
    }
    data.update(overrides)
    return data


@pytest.fixture
def static_config() -> ScenarioConfig:
    return validate_scenario(static_link_data(seed=7, duration_s=200.0))


@pytest.fixture
def default_config() -> ScenarioConfig:
    return ScenarioConfig()
