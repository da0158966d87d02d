import pytest

from edge_offload_sim.config import ExperimentConfig, build_config

TINY = {
    "seeds": [0, 1],
    "duration_s": 20,
    "area": {"width_m": 500, "height_m": 500},
    "topology": {"bs_count": 20, "mh_count": 4},
    "population": {"car_passengers": 2, "buses": 1, "passengers_per_bus": 2, "pedestrians": 2},
}


@pytest.fixture
def tiny_settings() -> dict:
    return {**TINY}


@pytest.fixture
def tiny_config() -> ExperimentConfig:
    """Six users over a 500 m square for 20 s, two seeds and the three default privacy levels."""
    return build_config(TINY)
