"""
Pytest configuration and fixtures.
"""

from pathlib import Path

import numpy as np
import pytest

from slat_bp import CellMap, GmComponent, ImuModel, RangingNoiseModel, ScenarioConfig

# Directory for test output files
TEST_OUTPUT_DIR = Path(__file__).parent / "test_output"

TUNNEL_GM = [
    GmComponent(weight=0.30, mean=2.0, sigma=0.8),
    GmComponent(weight=0.25, mean=6.0, sigma=1.2),
    GmComponent(weight=0.20, mean=11.0, sigma=1.5),
    GmComponent(weight=0.15, mean=17.0, sigma=2.0),
    GmComponent(weight=0.10, mean=25.0, sigma=3.0),
]


@pytest.fixture(scope="session", autouse=True)
def setup_test_output_dir():
    """Create test output directory if it doesn't exist."""
    TEST_OUTPUT_DIR.mkdir(exist_ok=True)
    yield


@pytest.fixture
def output_dir(request) -> Path:
    """Directory for files written by one test, under tests/test_output/."""
    test_name = request.node.name.replace("test_", "").replace("[", "_").replace("]", "_")
    path = TEST_OUTPUT_DIR / test_name
    path.mkdir(parents=True, exist_ok=True)
    for stale in path.rglob("*"):
        if stale.is_file():
            stale.unlink()
    return path


@pytest.fixture
def line_map() -> CellMap:
    """Five cells on a straight line, 5 m apart, D = 5."""
    centers = [[5.0 * i, 0.0, 0.0] for i in range(5)]
    return CellMap(centers, [[5.0, 5.0, 5.0]] * 5)


@pytest.fixture
def square_map() -> CellMap:
    """Four cells on the corners of a 4 m x 3 m rectangle, D = 2."""
    centers = [[0.0, 0.0, 0.0], [4.0, 0.0, 0.0], [0.0, 3.0, 0.0], [4.0, 3.0, 0.0]]
    return CellMap(centers, [[2.0, 2.0, 2.0]] * 4)


@pytest.fixture
def tunnel_imu() -> ImuModel:
    return ImuModel(sigma_u=0.5, D=5.0, Ts=1.0)


@pytest.fixture
def tunnel_ranging() -> RangingNoiseModel:
    """Reference ranging model: sigma_w0 = 1 m, D = 5 m, d_max = 30 m."""
    return RangingNoiseModel.from_probabilities(
        p_nlos=0.17, p_obs=0.03, sigma_w0=1.0, gm=TUNNEL_GM, d_max=30.0, D=5.0
    )


@pytest.fixture
def small_config() -> ScenarioConfig:
    """A quick scenario: 12 cells, 5 sensors, 10 slots, 4 runs."""
    return ScenarioConfig(
        N_c=12,
        N_s=5,
        N_T=10,
        N_MC=4,
        d_th=15.0,
        nlos_db_size=300,
        seed=7,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
