import json

import pytest
from typer.testing import CliRunner

from edge_offload_sim import __version__
from edge_offload_sim.__main__ import app, parse_epsilons, parse_seeds
from edge_offload_sim.exceptions import ConfigError

runner = CliRunner()

TINY_TOML = """
seeds = [0, 1]
duration_s = 10

[area]
width_m = 500
height_m = 500

[topology]
bs_count = 20
mh_count = 4

[population]
car_passengers = 2
buses = 1
passengers_per_bus = 2
pedestrians = 2
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY_TOML)
    return path


@pytest.mark.parametrize("text,expected", [
    ("0,1,2", [0, 1, 2]),
    ("0-3", [0, 1, 2, 3]),
    ("5, 0-1", [5, 0, 1]),
])
def test_parse_seeds(text, expected):
    assert parse_seeds(text) == expected


@pytest.mark.parametrize("text", ["", "a", "3-1", ","])
def test_parse_seeds_rejects(text):
    with pytest.raises(ConfigError):
        parse_seeds(text)


def test_parse_epsilons():
    assert parse_epsilons("inf,0.1") == [float("inf"), 0.1]
    with pytest.raises(ConfigError):
        parse_epsilons(" , ")


def test_version():
    result = runner.invoke(app, ["--version"])
    assert result.exit_code == 0
    assert __version__ in result.stdout


@pytest.mark.parametrize("args", [
    ["run", "--seeds", ""],
    ["run", "--epsilons", "0"],
    ["generate", "--config", "missing.toml"],
])
def test_configuration_errors_exit_with_1(tmp_path, args):
    result = runner.invoke(app, [*args, "--out-dir", str(tmp_path), "--quiet"])
    assert result.exit_code == 1


def test_unknown_config_key_exits_with_1(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("seedz = [1]\n")
    result = runner.invoke(app, ["generate", "-c", str(path), "-o", str(tmp_path / "out")])
    assert result.exit_code == 1


def test_all_writes_outcomes_report_and_manifests(tmp_path, config_file):
    """The all command generates, runs and reports, and every manifest lists its files."""
    out = tmp_path / "out"
    result = runner.invoke(app, ["all", "-c", str(config_file), "-o", str(out), "--threads", "1", "--quiet"])
    assert result.exit_code == 0, result.output

    run_manifest = json.loads((out / "manifest-run.json").read_text())
    outcomes = [a for a in run_manifest["artifacts"] if a.startswith("outcomes/")]
    assert len(outcomes) == 2 * 3
    assert run_manifest["seeds"] == [0, 1]
    assert run_manifest["epsilons"] == ["inf", "0.1", "0.01"]
    assert run_manifest["tool_version"] == __version__

    generate_manifest = json.loads((out / "manifest-generate.json").read_text())
    assert "artifacts/topology/bs.csv" in generate_manifest["artifacts"]
    assert generate_manifest["config_hash"] == run_manifest["config_hash"]

    report_manifest = json.loads((out / "manifest-report.json").read_text())
    assert "report/table3.csv" in report_manifest["artifacts"]
    for name in report_manifest["artifacts"]:
        assert (out / name).exists()

    report = json.loads((out / "report" / "report.json").read_text())
    assert report["n_requests"] == 6 * 10 * 2
    assert report["config_hash"] == run_manifest["config_hash"]


def test_all_twice_gives_identical_reports(tmp_path, config_file):
    """Two end-to-end runs of one configuration write byte-identical reports, whatever the thread count."""
    first, second = tmp_path / "first", tmp_path / "second"
    for out, threads in ((first, "1"), (second, "2")):
        result = runner.invoke(app, ["all", "-c", str(config_file), "-o", str(out), "-t", threads, "-q"])
        assert result.exit_code == 0, result.output

    names = sorted(p.name for p in (first / "report").iterdir())
    assert "report.json" in names
    assert "fig8.csv" in names
    assert names == sorted(p.name for p in (second / "report").iterdir())
    for name in names:
        assert (first / "report" / name).read_bytes() == (second / "report" / name).read_bytes(), name


def test_rerun_without_overwrite_exits_with_2(tmp_path, config_file):
    out = tmp_path / "out"
    args = ["run", "-c", str(config_file), "-o", str(out), "-t", "1", "-q"]
    assert runner.invoke(app, args).exit_code == 0
    assert runner.invoke(app, args).exit_code == 2
    assert runner.invoke(app, [*args, "--overwrite"]).exit_code == 0


def test_run_on_artifacts_from_other_settings_exits_with_1(tmp_path, config_file):
    """Changing the topology after generate makes run refuse the old artifacts until --overwrite."""
    out = tmp_path / "out"
    assert runner.invoke(app, ["generate", "-c", str(config_file), "-o", str(out), "-q"]).exit_code == 0
    config_file.write_text(TINY_TOML.replace("bs_count = 20", "bs_count = 40"))
    args = ["run", "-c", str(config_file), "-o", str(out), "-t", "1", "-q"]
    assert runner.invoke(app, args).exit_code == 1
    assert runner.invoke(app, [*args, "--overwrite"]).exit_code == 0
    assert len((out / "artifacts" / "topology" / "bs.csv").read_text().splitlines()) == 40 + 1


def test_report_without_outcomes_exits_with_2(tmp_path, config_file):
    result = runner.invoke(app, ["report", "-c", str(config_file), "-o", str(tmp_path / "empty"), "-q"])
    assert result.exit_code == 2


def test_seed_override_limits_the_grid(tmp_path, config_file):
    out = tmp_path / "out"
    args = ["run", "-c", str(config_file), "-o", str(out), "-s", "1", "-e", "inf", "-t", "1", "-q"]
    result = runner.invoke(app, args)
    assert result.exit_code == 0
    assert sorted(p.name for p in (out / "outcomes").iterdir()) == ["seed=1_eps=inf.csv"]
