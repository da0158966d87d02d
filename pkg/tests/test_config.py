import math
from pathlib import Path

import pytest

from edge_offload_sim.config import ExperimentConfig, build_config, config_hash, load_config
from edge_offload_sim.enums import ApplicationName, MechanismKind, MobilitySource, MobilityType
from edge_offload_sim.exceptions import ConfigError


def test_defaults_are_full_scale():
    """An empty document gives the full-scale experiment."""
    config = build_config({})
    assert config.seeds == list(range(30))
    assert config.n_timesteps == 3600
    assert config.population.total == 1250
    assert config.topology.bs_count == 475
    assert config.topology.mh_count == 95
    assert config.epsilons == [math.inf, 0.1, 0.01]
    assert config.privacy.mechanism == MechanismKind.PLANAR_LAPLACE
    assert config.mobility.source == MobilitySource.SYNTHETIC
    assert config.applications.requirements[ApplicationName.VR].throughput_bps == 132e6
    assert config.applications.mix[MobilityType.PEDESTRIAN][ApplicationName.VR] == 0.0


def test_unknown_keys_are_reported():
    """Every unknown or invalid key shows up in the error's problems."""
    with pytest.raises(ConfigError) as exc:
        build_config({"sedes": [1], "topology": {"bs_count": -1}})
    problems = "\n".join(exc.value.problems)
    assert "sedes" in problems
    assert "topology.bs_count" in problems


@pytest.mark.parametrize("mix,message", [
    ({"pedestrian": {"video": 60, "ar": 30, "vr": 10}}, "vr must be 0"),
    ({"car": {"video": 50, "ar": 15, "vr": 15}}, "sums to 80"),
    ({"bus": {"video": 110, "ar": -10, "vr": 0}}, "negative"),
])
def test_application_mix_validation(mix, message):
    full = {
        "car": {"video": 70, "ar": 15, "vr": 15},
        "bus": {"video": 70, "ar": 15, "vr": 15},
        "pedestrian": {"video": 70, "ar": 30, "vr": 0},
    }
    full.update(mix)
    with pytest.raises(ConfigError) as exc:
        build_config({"applications": {"mix": full}})
    assert message in str(exc.value)


@pytest.mark.parametrize("seeds", [[], [-1, 2], [3, 3]])
def test_seed_validation(seeds):
    with pytest.raises(ConfigError):
        build_config({"seeds": seeds})


@pytest.mark.parametrize("levels,expected", [
    (["0.01", "inf", 0.1], [math.inf, 0.1, 0.01]),
    ([0.5], [0.5]),
])
def test_privacy_levels_are_parsed_and_ordered(levels, expected):
    config = build_config({"privacy": {"epsilon_per_meter": levels}})
    assert config.epsilons == expected


@pytest.mark.parametrize("levels", [[0.1, 0.1], ["zero"], [0], []])
def test_privacy_levels_rejected(levels):
    with pytest.raises(ConfigError):
        build_config({"privacy": {"epsilon_per_meter": levels}})


def test_trace_source_needs_path():
    with pytest.raises(ConfigError) as exc:
        build_config({"mobility": {"source": "fcd-xml"}})
    assert "trace_path" in str(exc.value)


def test_overrides_replace_file_values():
    config = build_config({"seeds": [1, 2], "privacy": {"mechanism": "uniform_disk"}}, {"seeds": [7]})
    assert config.seeds == [7]
    assert config.privacy.mechanism == MechanismKind.UNIFORM_DISK


def test_load_config_from_toml(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text(
        'seeds = [0, 1]\nduration_s = 60\n\n[mobility]\nsource = "positions-csv"\ntrace_path = "traces/t.csv"\n'
    )
    config = load_config(path)
    assert config.seeds == [0, 1]
    assert config.n_timesteps == 60
    assert config.mobility.trace_path == (tmp_path / "traces" / "t.csv").resolve()


def test_load_config_without_file_uses_defaults():
    assert load_config(None) == ExperimentConfig()


@pytest.mark.parametrize("content", [None, "seeds = [0,"])
def test_load_config_errors(tmp_path, content):
    """A missing file or broken TOML is a configuration error."""
    path = tmp_path / "exp.toml"
    if content is not None:
        path.write_text(content)
    with pytest.raises(ConfigError):
        load_config(path)


def test_config_hash_ignores_key_order_and_output():
    """The hash depends on the experiment, not on how it was written or where outputs go."""
    a = build_config({"seeds": [0, 1], "duration_s": 60, "output": {"out_dir": "a"}})
    b = build_config({"duration_s": 60, "output": {"out_dir": "b"}, "seeds": [0, 1]})
    c = build_config({"seeds": [0, 1], "duration_s": 61})
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(c)
    assert len(config_hash(a)) == 64


CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_shipped_full_scale_config_matches_defaults():
    """configs/full.toml spells out every default."""
    config = load_config(CONFIGS / "full.toml")
    defaults = ExperimentConfig()
    assert config.model_dump(exclude={"output"}) == defaults.model_dump(exclude={"output"})
    assert config_hash(config) == config_hash(defaults)


def test_shipped_desk_config():
    config = load_config(CONFIGS / "desk.toml")
    assert config.population.total == 125
    assert config.n_timesteps * config.population.total * len(config.seeds) * len(config.epsilons) == 675_000
