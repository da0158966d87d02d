import pytest

from edge_offload_sim import __version__
from edge_offload_sim.exceptions import ArtifactIOError
from edge_offload_sim.manifest import (
    ArtifactStamp,
    RunManifest,
    read_manifest,
    read_stamp,
    stamp_path,
    write_manifest,
    write_stamp,
)


def _manifest() -> RunManifest:
    return RunManifest(command="run", config_hash="abc", seeds=[0, 1], epsilons=["inf", "0.1"])


def test_add_stores_relative_paths_once(tmp_path):
    manifest = _manifest()
    paths = [tmp_path / "outcomes" / "seed=1_eps=inf.csv", tmp_path / "outcomes" / "seed=0_eps=inf.csv"]
    manifest.add(paths, tmp_path)
    manifest.add(paths[:1], tmp_path)
    assert manifest.artifacts == ["outcomes/seed=1_eps=inf.csv", "outcomes/seed=0_eps=inf.csv"]


def test_write_then_read(tmp_path):
    """Artifacts are sorted on write and the tool version is recorded."""
    manifest = _manifest()
    manifest.add([tmp_path / "b.csv", tmp_path / "a.csv"], tmp_path)
    path = write_manifest(manifest, tmp_path / "out")
    assert path.name == "manifest-run.json"
    loaded = read_manifest(tmp_path / "out", "run")
    assert loaded is not None
    assert loaded.artifacts == ["a.csv", "b.csv"]
    assert loaded.tool_version == __version__


def test_read_missing_manifest(tmp_path):
    assert read_manifest(tmp_path, "report") is None


def test_read_corrupt_manifest(tmp_path):
    (tmp_path / "manifest-generate.json").write_text("{not json", encoding="utf-8")
    with pytest.raises(ArtifactIOError):
        read_manifest(tmp_path, "generate")


def test_stamp_write_then_read(tmp_path):
    path = write_stamp(ArtifactStamp(artifact_hash="abc"), tmp_path)
    assert path == stamp_path(tmp_path) == tmp_path / "artifacts" / "stamp.json"
    assert read_stamp(tmp_path) == ArtifactStamp(artifact_hash="abc", tool_version=__version__)


def test_read_missing_and_corrupt_stamp(tmp_path):
    assert read_stamp(tmp_path) is None
    stamp_path(tmp_path).parent.mkdir(parents=True)
    stamp_path(tmp_path).write_text("{not json", encoding="utf-8")
    with pytest.raises(ArtifactIOError):
        read_stamp(tmp_path)
