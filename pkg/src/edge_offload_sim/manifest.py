"""Per-command manifests listing every file a command produced."""

from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field

from edge_offload_sim import __version__
from edge_offload_sim.exceptions import ArtifactIOError


class RunManifest(BaseModel):
    """What a command produced, and from which configuration."""

    model_config = ConfigDict(extra="forbid")

    command: str
    config_hash: str
    seeds: list[int]
    epsilons: list[str]
    artifacts: list[str] = Field(default_factory=list)
    tool_version: str = __version__
    wall_clock_s: float = 0.0

    def add(self, paths: list[Path], root: Path) -> None:
        for path in paths:
            rel = path.relative_to(root).as_posix() if path.is_relative_to(root) else str(path)
            if rel not in self.artifacts:
                self.artifacts.append(rel)


def manifest_path(out_dir: Path, command: str) -> Path:
    return out_dir / f"manifest-{command}.json"


def write_manifest(manifest: RunManifest, out_dir: Path) -> Path:
    path = manifest_path(out_dir, manifest.command)
    manifest.artifacts.sort()
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        path.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(path, str(e)) from e
    return path


def read_manifest(out_dir: Path, command: str) -> RunManifest | None:
    path = manifest_path(out_dir, command)
    if not path.exists():
        return None
    try:
        return RunManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise ArtifactIOError(path, str(e)) from e


class ArtifactStamp(BaseModel):
    """Settings hash of the topology and trace files under an output folder."""

    model_config = ConfigDict(extra="forbid")

    artifact_hash: str
    tool_version: str = __version__


def stamp_path(out_dir: Path) -> Path:
    return out_dir / "artifacts" / "stamp.json"


def write_stamp(stamp: ArtifactStamp, out_dir: Path) -> Path:
    path = stamp_path(out_dir)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(stamp.model_dump_json(indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(path, str(e)) from e
    return path


def read_stamp(out_dir: Path) -> ArtifactStamp | None:
    path = stamp_path(out_dir)
    if not path.exists():
        return None
    try:
        return ArtifactStamp.model_validate_json(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise ArtifactIOError(path, str(e)) from e
