"""Experiment grid: artifact generation, per-(seed, epsilon) runs and outcome files."""

import shutil
import time
from collections.abc import Callable, Iterable
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import pandas as pd

from edge_offload_sim import rng
from edge_offload_sim.config import ExperimentConfig, artifact_hash
from edge_offload_sim.engine import (
    APPLICATION_CODES,
    MOBILITY_CODES,
    OffloadEngine,
    StepOutcomes,
    application_types,
    assign_applications,
)
from edge_offload_sim.enums import MobilitySource, TraceFormat
from edge_offload_sim.exceptions import (
    ArtifactIOError,
    ConfigError,
    InvariantViolation,
    OutputExistsError,
    TraceGapError,
)
from edge_offload_sim.manifest import ArtifactStamp, read_stamp, stamp_path, write_stamp
from edge_offload_sim.mobility import (
    MobilityTrace,
    UserAgent,
    build_population,
    fcd_entities,
    generate_synthetic,
    ingest_trace,
    round_robin_assignment,
    save_trace_csv,
    validate_trace,
)
from edge_offload_sim.privacy import PrivacyMechanism, epsilon_label
from edge_offload_sim.sim_logging import log
from edge_offload_sim.topology import BS_FILE, MH_FILE, Area, build_topology, load_topology, save_topology

OUTCOME_COLUMNS = [
    "seed",
    "epsilon",
    "t",
    "user_id",
    "mobility",
    "app",
    "true_bs",
    "presumed_bs",
    "selected_mh",
    "ideal_mh",
    "accepted",
    "reason_latency",
    "reason_throughput",
    "reason_capacity",
    "achieved_latency_ms",
    "ideal_latency_ms",
    "allocated_mbps",
]
FLOAT_FORMAT = "%.6f"
CHUNK_ROWS = 250_000


def topology_seed(config: ExperimentConfig, seed: int) -> int:
    return seed if config.resample_topology_per_seed else config.topology.seed


def topology_dir(out_dir: Path, config: ExperimentConfig, seed: int) -> Path:
    base = out_dir / "artifacts" / "topology"
    return base / f"seed={seed}" if config.resample_topology_per_seed else base


def trace_file(out_dir: Path, config: ExperimentConfig, seed: int) -> Path:
    base = out_dir / "artifacts" / "traces"
    if config.mobility.source == MobilitySource.SYNTHETIC:
        return base / f"seed={seed}.csv"
    return base / "ingested.csv"


def outcome_file(out_dir: Path, seed: int, epsilon: float) -> Path:
    return out_dir / "outcomes" / f"seed={seed}_eps={epsilon_label(epsilon)}.csv"


def artifact_files(out_dir: Path, config: ExperimentConfig, seeds: Iterable[int]) -> list[Path]:
    """Topology and trace files the given seeds need, without duplicates, then the settings stamp."""
    files: list[Path] = []
    for seed in seeds:
        directory = topology_dir(out_dir, config, seed)
        for path in (directory / BS_FILE, directory / MH_FILE, trace_file(out_dir, config, seed)):
            if path not in files:
                files.append(path)
    files.append(stamp_path(out_dir))
    return files


def _speed_caps(config: ExperimentConfig, users: list[UserAgent]) -> np.ndarray:
    return np.array([config.mobility.synthetic.speed_cap(u.mobility) for u in sorted(users, key=lambda u: u.id)])


def _ingest(config: ExperimentConfig) -> MobilityTrace:
    path = config.mobility.trace_path
    if path is None or not path.exists():
        raise ConfigError(f"Trace file not found: {path}")
    expected = np.array([u.id for u in build_population(config.population)], dtype=np.int64)
    if config.mobility.source == MobilitySource.FCD_XML:
        entities = fcd_entities(path)
        assignment = round_robin_assignment(entities["car"], entities["bus"], entities["person"], config.population)
        trace = ingest_trace(path, TraceFormat.FCD_XML, config.area, assignment, config.resolution_s)
    else:
        trace = ingest_trace(path, TraceFormat.POSITIONS_CSV, config.area, resolution_s=config.resolution_s)
        if not np.array_equal(trace.user_ids, expected):
            raise ConfigError(
                f"Trace {path} has {trace.n_users} users; the population expects ids 0..{expected.size - 1}"
            )
    if trace.n_timesteps < config.n_timesteps:
        raise TraceGapError(int(trace.user_ids[0]), trace.n_timesteps)
    positions = trace.positions[: config.n_timesteps].copy()
    return MobilityTrace(trace.user_ids, positions, config.resolution_s, trace.clipped)


def generate_artifacts(
    config: ExperimentConfig, out_dir: Path, seeds: list[int], overwrite: bool = False, missing_only: bool = False
) -> list[Path]:
    """
    Write the topology and trace files of the given seeds.

    Args:
        config: Experiment configuration
        out_dir: Output root
        seeds: Master seeds
        overwrite: Replace existing artifacts
        missing_only: Only produce artifacts that do not exist yet

    Returns:
        list[Path]: Every file written

    Raises:
        OutputExistsError: If artifacts exist and neither overwrite nor missing_only is set
        ConfigError: If existing artifacts were built from other settings and overwrite is off
    """
    current = artifact_hash(config)
    stamp = read_stamp(out_dir)
    artifacts_dir = out_dir / "artifacts"
    if stamp is not None:
        stale = stamp.artifact_hash != current
    else:
        # Unstamped files come from unknown settings.
        stale = artifacts_dir.exists() and any(artifacts_dir.rglob("*.csv"))
    if stale:
        if not overwrite:
            raise ConfigError(
                f"Artifacts under {artifacts_dir} were generated from different settings; use --overwrite"
            )
        log.info("Removing artifacts built from other settings under %s", artifacts_dir)
        try:
            shutil.rmtree(artifacts_dir)
        except OSError as e:
            raise ArtifactIOError(artifacts_dir, str(e)) from e
    existing = [p for p in artifact_files(out_dir, config, seeds) if p.exists()]
    if existing and not (overwrite or missing_only):
        raise OutputExistsError(f"{len(existing)} artifact files already exist under {out_dir}; use --overwrite")

    written: list[Path] = []
    ingested: MobilityTrace | None = None
    for seed in seeds:
        directory = topology_dir(out_dir, config, seed)
        present = (directory / BS_FILE).exists() and (directory / MH_FILE).exists()
        if directory / BS_FILE not in written and not (missing_only and present):
            topo_rng = rng.stream(topology_seed(config, seed), rng.TAG_TOPOLOGY)
            topology = build_topology(config.topology, config.area, topo_rng)
            written.extend(save_topology(topology, directory))

        path = trace_file(out_dir, config, seed)
        if (missing_only and path.exists()) or path in written:
            continue
        if config.mobility.source == MobilitySource.SYNTHETIC:
            trace = generate_synthetic(
                config.population,
                config.area,
                config.duration_s,
                rng.stream(seed, rng.TAG_MOBILITY),
                config.mobility.synthetic,
                config.resolution_s,
            )
            check = validate_trace(trace, config.area, _speed_caps(config, build_population(config.population)))
            if not check.ok:
                raise InvariantViolation(f"Synthetic trace of seed {seed} breaks its invariants: {check}")
        else:
            if ingested is None:
                ingested = _ingest(config)
            trace = ingested
        try:
            written.append(save_trace_csv(trace, path))
        except OSError as e:
            raise ArtifactIOError(path, str(e)) from e
        log.debug("Wrote trace of seed %d to %s", seed, path)
    if written:
        _cached_trace.cache_clear()
        written.append(write_stamp(ArtifactStamp(artifact_hash=current), out_dir))
    return written


@lru_cache(maxsize=2)
def _cached_trace(path: Path, mtime_ns: int, area: Area, resolution_s: float) -> MobilityTrace:
    return ingest_trace(path, TraceFormat.POSITIONS_CSV, area, resolution_s=resolution_s)


def _load_trace(path: Path, area: Area, resolution_s: float) -> MobilityTrace:
    if not path.exists():
        raise ArtifactIOError(path, "trace artifact missing")
    return _cached_trace(path, path.stat().st_mtime_ns, area, resolution_s)


def run_users(config: ExperimentConfig, seed: int) -> list[UserAgent]:
    """Population of a seed with its application assignment, identical for every privacy level."""
    return assign_applications(
        build_population(config.population), config.applications.mix, rng.stream(seed, rng.TAG_APPLICATIONS)
    )


class OutcomeWriter:
    """Buffers step outcomes and appends them to a CSV in chunks; the file appears complete or not at all."""

    def __init__(self, path: Path, seed: int, epsilon: float):
        self.path = path
        self.partial = path.with_suffix(".csv.partial")
        self.seed = seed
        self.label = epsilon_label(epsilon)
        self.rows = 0
        self._pending: list[StepOutcomes] = []
        self._pending_rows = 0
        self._header = True
        self._mobility: np.ndarray | None = None
        self._apps: np.ndarray | None = None

    def __enter__(self) -> "OutcomeWriter":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.partial.unlink(missing_ok=True)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is None:
            self.flush()
            self.partial.replace(self.path)
        else:
            self.partial.unlink(missing_ok=True)

    def bind(self, engine: OffloadEngine) -> None:
        self._mobility = np.array([m.value for m in MOBILITY_CODES])[engine.mobility_codes]
        self._apps = np.array([a.value for a in APPLICATION_CODES])[engine.app_codes]

    def append(self, outcomes: StepOutcomes) -> None:
        self._pending.append(outcomes)
        self._pending_rows += len(outcomes)
        if self._pending_rows >= CHUNK_ROWS:
            self.flush()

    def flush(self) -> None:
        if not self._pending and not self._header:
            return
        steps = self._pending
        n_users = len(steps[0]) if steps else 0

        def col(name: str) -> np.ndarray:
            return np.concatenate([getattr(s, name) for s in steps]) if steps else np.empty(0)

        accepted = np.concatenate([s.accepted for s in steps]) if steps else np.empty(0, dtype=bool)
        frame = pd.DataFrame(
            {
                "seed": self.seed,
                "epsilon": self.label,
                "t": np.repeat([s.timestep for s in steps], n_users).astype(np.int64),
                "user_id": col("user_ids"),
                "mobility": np.tile(self._mobility, len(steps)) if steps else np.empty(0, dtype=str),
                "app": np.tile(self._apps, len(steps)) if steps else np.empty(0, dtype=str),
                "true_bs": col("true_bs"),
                "presumed_bs": col("presumed_bs"),
                "selected_mh": col("selected_mh"),
                "ideal_mh": col("ideal_mh"),
                "accepted": accepted.astype(np.int8),
                "reason_latency": col("reason_latency").astype(np.int8),
                "reason_throughput": col("reason_throughput").astype(np.int8),
                "reason_capacity": col("reason_capacity").astype(np.int8),
                "achieved_latency_ms": col("achieved_latency_ms"),
                "ideal_latency_ms": col("ideal_latency_ms"),
                "allocated_mbps": col("allocated_bps") / 1e6,
            },
            columns=OUTCOME_COLUMNS,
        )
        try:
            frame.to_csv(
                self.partial,
                mode="w" if self._header else "a",
                header=self._header,
                index=False,
                float_format=FLOAT_FORMAT,
            )
        except OSError as e:
            raise ArtifactIOError(self.partial, str(e)) from e
        self.rows += len(frame)
        self._header = False
        self._pending = []
        self._pending_rows = 0


@dataclass(frozen=True)
class RunTask:
    """One (seed, epsilon) cell of the grid; picklable so it can run in a worker process."""

    config: ExperimentConfig
    out_dir: Path
    seed: int
    epsilon: float


@dataclass(frozen=True)
class RunResult:
    seed: int
    epsilon: float
    path: Path
    rows: int
    clipped_reports: int
    capacity_denials: int
    pf_extra_rounds: int
    wall_clock_s: float


def run_single(task: RunTask) -> RunResult:
    """Run one (seed, epsilon) cell end to end from the artifacts on disk."""
    start = time.perf_counter()
    config = task.config
    topology = load_topology(topology_dir(task.out_dir, config, task.seed), config.area)
    trace = _load_trace(trace_file(task.out_dir, config, task.seed), config.area, config.resolution_s)
    engine = OffloadEngine(
        topology,
        run_users(config, task.seed),
        application_types(config.applications),
        config.radio,
        config.latency,
        config.pf,
    )
    mechanism = PrivacyMechanism(config.privacy.mechanism, task.epsilon, config.privacy.uniform_disk_radius_factor)
    state = engine.new_state(task.seed)
    path = outcome_file(task.out_dir, task.seed, task.epsilon)
    with OutcomeWriter(path, task.seed, task.epsilon) as writer:
        writer.bind(engine)
        for t in range(config.n_timesteps):
            writer.append(engine.step(t, trace, mechanism, state))
    return RunResult(
        seed=task.seed,
        epsilon=task.epsilon,
        path=path,
        rows=writer.rows,
        clipped_reports=state.clipped_reports,
        capacity_denials=state.capacity_denials,
        pf_extra_rounds=state.pf_extra_rounds,
        wall_clock_s=time.perf_counter() - start,
    )


def run_experiment(
    config: ExperimentConfig,
    out_dir: Path,
    threads: int = 1,
    overwrite: bool = False,
    on_result: Callable[[RunResult], None] | None = None,
) -> tuple[list[RunResult], list[Path]]:
    """
    Run every (seed, epsilon) cell of the grid.

    Missing artifacts are generated first; every privacy level of a seed reuses the same topology,
    trace and application assignment.

    Args:
        config: Experiment configuration; its seeds and privacy levels define the grid
        out_dir: Output root
        threads: Worker processes; 1 runs in-process
        overwrite: Replace existing outcome files
        on_result: Called in the parent process as each cell finishes

    Returns:
        tuple: Results in (seed, epsilon) grid order, and the artifact files generated on the way

    Raises:
        OutputExistsError: If outcome files (complete or partial) exist and overwrite is off
        ConfigError: If existing artifacts were generated from different settings and overwrite is off
    """
    tasks = [RunTask(config, out_dir, seed, eps) for seed in config.seeds for eps in config.epsilons]
    finals = [outcome_file(out_dir, task.seed, task.epsilon) for task in tasks]
    prior = [p for f in finals for p in (f, f.with_suffix(".csv.partial")) if p.exists()]
    if prior and not overwrite:
        raise OutputExistsError(f"{len(prior)} outcome files already exist under {out_dir}; use --overwrite")

    generated = generate_artifacts(config, out_dir, config.seeds, overwrite=overwrite, missing_only=True)
    if generated:
        log.info("Generated %d missing artifact files", len(generated))

    results: dict[tuple[int, float], RunResult] = {}
    if threads <= 1 or len(tasks) == 1:
        for task in tasks:
            result = run_single(task)
            results[(task.seed, task.epsilon)] = result
            if on_result:
                on_result(result)
    else:
        with ProcessPoolExecutor(max_workers=min(threads, len(tasks))) as pool:
            futures = [pool.submit(run_single, task) for task in tasks]
            for future in as_completed(futures):
                result = future.result()
                results[(result.seed, result.epsilon)] = result
                if on_result:
                    on_result(result)
    return [results[(t.seed, t.epsilon)] for t in tasks], generated
