"""Experiment configuration: TOML file validated by pydantic models."""

import hashlib
import json
import math
import sys
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from edge_offload_sim.enums import ApplicationName, MechanismKind, MobilitySource, MobilityType
from edge_offload_sim.exceptions import ConfigError
from edge_offload_sim.link_model import LatencyParams, RadioParams
from edge_offload_sim.mobility import PopulationSpec, SyntheticMobilityParams
from edge_offload_sim.privacy import INF, parse_epsilon
from edge_offload_sim.topology import Area, TopologyConfig


class AppRequirement(BaseModel):
    """Network demands of one application."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    throughput_mbps: float = Field(gt=0)
    latency_ms: float = Field(gt=0)

    @property
    def throughput_bps(self) -> float:
        return self.throughput_mbps * 1e6


def _default_requirements() -> dict[ApplicationName, AppRequirement]:
    return {
        ApplicationName.VIDEO: AppRequirement(throughput_mbps=70, latency_ms=10),
        ApplicationName.AR: AppRequirement(throughput_mbps=100, latency_ms=30),
        ApplicationName.VR: AppRequirement(throughput_mbps=132, latency_ms=14),
    }


def _default_mix() -> dict[MobilityType, dict[ApplicationName, float]]:
    vehicles = {ApplicationName.VIDEO: 70.0, ApplicationName.AR: 15.0, ApplicationName.VR: 15.0}
    return {
        MobilityType.CAR_PASSENGER: dict(vehicles),
        MobilityType.BUS_PASSENGER: dict(vehicles),
        MobilityType.PEDESTRIAN: {ApplicationName.VIDEO: 70.0, ApplicationName.AR: 30.0, ApplicationName.VR: 0.0},
    }


class ApplicationsConfig(BaseModel):
    """Application demands and the percentage of each mobility type using each application."""

    model_config = ConfigDict(extra="forbid")

    requirements: dict[ApplicationName, AppRequirement] = Field(default_factory=_default_requirements)
    mix: dict[MobilityType, dict[ApplicationName, float]] = Field(default_factory=_default_mix)

    @model_validator(mode="after")
    def _check_mix(self) -> "ApplicationsConfig":
        problems = []
        missing = [a.value for a in ApplicationName if a not in self.requirements]
        if missing:
            problems.append(f"requirements missing for {', '.join(missing)}")
        for mobility in MobilityType:
            row = self.mix.get(mobility)
            if row is None:
                problems.append(f"mix missing for {mobility.value}")
                continue
            if any(v < 0 for v in row.values()):
                problems.append(f"mix.{mobility.value} has negative percentages")
            if not math.isclose(sum(row.values()), 100.0, abs_tol=1e-9):
                problems.append(f"mix.{mobility.value} sums to {sum(row.values())}, expected 100")
        if self.mix.get(MobilityType.PEDESTRIAN, {}).get(ApplicationName.VR, 0.0) != 0.0:
            problems.append("mix.pedestrian.vr must be 0")
        if problems:
            raise ValueError("; ".join(problems))
        return self


class MobilityConfig(BaseModel):
    """Where positions come from."""

    model_config = ConfigDict(extra="forbid")

    source: MobilitySource = MobilitySource.SYNTHETIC
    trace_path: Path | None = None
    synthetic: SyntheticMobilityParams = Field(default_factory=SyntheticMobilityParams)

    @model_validator(mode="after")
    def _check_trace(self) -> "MobilityConfig":
        if self.source != MobilitySource.SYNTHETIC and self.trace_path is None:
            raise ValueError(f"trace_path is required for source {self.source.value}")
        return self


class PrivacyConfig(BaseModel):
    """Obfuscation mechanism and the privacy levels of the grid."""

    model_config = ConfigDict(extra="forbid")

    mechanism: MechanismKind = MechanismKind.PLANAR_LAPLACE
    epsilon_per_meter: list[float] = Field(default_factory=lambda: [INF, 0.1, 0.01], min_length=1)
    uniform_disk_radius_factor: float = Field(default=3.0, gt=0)

    @field_validator("epsilon_per_meter", mode="before")
    @classmethod
    def _parse(cls, value: Any) -> Any:
        if isinstance(value, list):
            try:
                return [parse_epsilon(v) for v in value]
            except ConfigError as e:
                raise ValueError(str(e)) from e
        return value

    @field_validator("epsilon_per_meter")
    @classmethod
    def _order(cls, value: list[float]) -> list[float]:
        if len(set(value)) != len(value):
            raise ValueError("privacy levels must be distinct")
        # Weakest protection first: inf, then decreasing epsilon.
        return sorted(value, reverse=True)


class PfConfig(BaseModel):
    """Proportional-fair sharing options."""

    model_config = ConfigDict(extra="forbid")

    iterate_after_denial: bool = False
    max_iterations: int = Field(default=10, ge=1)


class OutputConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    out_dir: Path = Path("./output")
    overwrite: bool = False


class ExperimentConfig(BaseModel):
    """Everything a run depends on. An empty file yields the full-scale configuration."""

    model_config = ConfigDict(extra="forbid")

    seeds: list[int] = Field(default_factory=lambda: list(range(30)), min_length=1)
    duration_s: float = Field(default=3600.0, gt=0)
    resolution_s: float = Field(default=1.0, gt=0)
    resample_topology_per_seed: bool = False
    threads: int | None = Field(default=None, ge=1)
    area: Area = Field(default_factory=Area)
    topology: TopologyConfig = Field(default_factory=TopologyConfig)
    population: PopulationSpec = Field(default_factory=PopulationSpec)
    mobility: MobilityConfig = Field(default_factory=MobilityConfig)
    applications: ApplicationsConfig = Field(default_factory=ApplicationsConfig)
    radio: RadioParams = Field(default_factory=RadioParams)
    latency: LatencyParams = Field(default_factory=LatencyParams)
    privacy: PrivacyConfig = Field(default_factory=PrivacyConfig)
    pf: PfConfig = Field(default_factory=PfConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @field_validator("seeds")
    @classmethod
    def _check_seeds(cls, value: list[int]) -> list[int]:
        if any(s < 0 for s in value):
            raise ValueError("seeds must be non-negative")
        if len(set(value)) != len(value):
            raise ValueError("seeds must be distinct")
        return value

    @property
    def n_timesteps(self) -> int:
        return int(self.duration_s // self.resolution_s)

    @property
    def epsilons(self) -> list[float]:
        return self.privacy.epsilon_per_meter


def _merge(base: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _problems(error: ValidationError) -> list[str]:
    return [f"{'.'.join(str(p) for p in e['loc']) or '<root>'}: {e['msg']}" for e in error.errors()]


def build_config(data: dict[str, Any], overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """
    Validate raw config data.

    Args:
        data: Parsed config document
        overrides: Nested values that replace the document's (CLI flags)

    Raises:
        ConfigError: Listing every invalid or unknown key
    """
    try:
        return ExperimentConfig.model_validate(_merge(data, overrides or {}))
    except ValidationError as e:
        raise ConfigError("Invalid configuration", _problems(e)) from e


def load_config(path: Path | None, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Read and validate a TOML config file; without a path the defaults apply."""
    data: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except FileNotFoundError as e:
            raise ConfigError(f"Config file not found: {path}") from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid TOML: {e}") from e
    config = build_config(data, overrides)
    if path is not None and config.mobility.trace_path is not None and not config.mobility.trace_path.is_absolute():
        # Trace paths are relative to the config file.
        config.mobility.trace_path = (path.parent / config.mobility.trace_path).resolve()
    return config


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON form; independent of key order and of where outputs go."""
    canonical = json.dumps(config.model_dump(mode="python", exclude={"output", "threads"}), sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


ARTIFACT_SECTIONS = {
    "area",
    "topology",
    "population",
    "mobility",
    "duration_s",
    "resolution_s",
    "resample_topology_per_seed",
}


def artifact_hash(config: ExperimentConfig) -> str:
    """
    SHA-256 of the settings the topology and trace files are built from.

    An external trace counts by its content, not by where it lives. Seeds, privacy levels and the
    admission settings are left out; they never change an artifact.

    Raises:
        ConfigError: If an external trace file cannot be read
    """
    sections = config.model_dump(mode="python", include=ARTIFACT_SECTIONS)
    sections["mobility"].pop("trace_path", None)
    path = config.mobility.trace_path
    if config.mobility.source != MobilitySource.SYNTHETIC and path is not None:
        try:
            with open(path, "rb") as f:
                if sys.version_info >= (3, 11):
                    sections["trace_sha256"] = hashlib.file_digest(f, "sha256").hexdigest()
                else:
                    sections["trace_sha256"] = hashlib.sha256(f.read()).hexdigest()
        except OSError as e:
            raise ConfigError(f"Trace file not readable: {path} ({e})") from e
    canonical = json.dumps(sections, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
