"""Base station and MEC host deployment."""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from edge_offload_sim.exceptions import ArtifactIOError, ConfigError, InvariantViolation
from edge_offload_sim.sim_logging import log

TOPOLOGY_COLUMNS = ["id", "x", "y", "capacity_bps"]
BS_FILE = "bs.csv"
MH_FILE = "mh.csv"


class Area(BaseModel):
    """Rectangular service area with its origin at (0, 0)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    width_m: float = Field(default=2000.0, gt=0)
    height_m: float = Field(default=2000.0, gt=0)

    @property
    def km2(self) -> float:
        return self.width_m * self.height_m / 1e6

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Mask of points inside the area, borders included."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        return (
            (points[:, 0] >= 0.0)
            & (points[:, 0] <= self.width_m)
            & (points[:, 1] >= 0.0)
            & (points[:, 1] <= self.height_m)
        )

    def clip(self, points: np.ndarray) -> tuple[np.ndarray, int]:
        """Clip points to the area boundary; returns the clipped points and how many moved."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        outside = int((~self.contains(points)).sum())
        if outside == 0:
            return points, 0
        clipped = np.column_stack(
            (np.clip(points[:, 0], 0.0, self.width_m), np.clip(points[:, 1], 0.0, self.height_m))
        )
        return clipped, outside


class TopologyConfig(BaseModel):
    """How BSs and MHs are deployed.

    With fixed_count the exact counts are placed uniformly (an HPPP conditioned on its count);
    otherwise counts are Poisson with mean intensity * area.
    """

    model_config = ConfigDict(extra="forbid")

    fixed_count: bool = True
    bs_count: int = Field(default=475, ge=0)
    mh_count: int = Field(default=95, ge=0)
    bs_intensity_per_km2: float = Field(default=118.75, ge=0)
    mh_intensity_per_km2: float = Field(default=23.75, ge=0)
    bs_capacity_bps: float = Field(default=10e9, gt=0)
    mh_capacity_bps: float = Field(default=10.41e9, gt=0)
    seed: int = Field(default=0, ge=0, description="Topology seed used when topologies are not resampled per seed")


@dataclass(frozen=True)
class BaseStation:
    id: int
    x: float
    y: float
    capacity_bps: float = 10e9


@dataclass(frozen=True)
class MecHost:
    """MEC host; its residual throughput is per-timestep state held by the engine."""

    id: int
    x: float
    y: float
    capacity_bps: float = 10.41e9


def sample_hppp(intensity: float, area: Area, rng: np.random.Generator) -> np.ndarray:
    """
    Sample a homogeneous Poisson point process.

    Args:
        intensity: Points per km²
        area: Service area
        rng: Random stream

    Returns:
        np.ndarray: Points of shape (n, 2) with n ~ Poisson(intensity * km²)
    """
    if intensity < 0:
        raise ConfigError(f"HPPP intensity must be non-negative, got {intensity}")
    count = int(rng.poisson(intensity * area.km2)) if intensity > 0 else 0
    return sample_hppp_fixed_count(count, area, rng)


def sample_hppp_fixed_count(count: int, area: Area, rng: np.random.Generator) -> np.ndarray:
    """Exactly `count` i.i.d. uniform points over the area."""
    if count < 0:
        raise ConfigError(f"Point count must be non-negative, got {count}")
    return rng.uniform(0.0, 1.0, size=(count, 2)) * np.array([area.width_m, area.height_m])


def brute_force_nearest(points: np.ndarray, positions: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """
    Exhaustive nearest-neighbour scan.

    Returns row indices into `positions`; ties go to the lowest row.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    rows = np.empty(points.shape[0], dtype=np.int64)
    for start in range(0, points.shape[0], chunk):
        block = points[start : start + chunk]
        d2 = (positions[None, :, 0] - block[:, None, 0]) ** 2 + (positions[None, :, 1] - block[:, None, 1]) ** 2
        rows[start : start + chunk] = np.argmin(d2, axis=1)
    return rows


class GridIndex:
    """
    Uniform-grid nearest-neighbour index.

    Each cell keeps the entities that can be nearest to some point of the cell: those whose
    distance to the cell is at most the smallest farthest-corner distance from the cell to any
    entity. Candidates are stored by ascending id so ties resolve to the lowest id.
    """

    def __init__(self, ids: np.ndarray, positions: np.ndarray, area: Area, cell_size: float | None = None):
        ids = np.asarray(ids, dtype=np.int64)
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
        if ids.size == 0:
            raise ConfigError("Cannot build a spatial index over zero entities")
        order = np.argsort(ids, kind="stable")
        self.ids = ids[order]
        self.positions = positions[order]
        self.area = area
        # Cell edge of the order of the expected nearest-neighbour spacing, 1/sqrt(pi * density).
        self.cell_size = cell_size or 1.0 / math.sqrt(math.pi * self.ids.size / (area.width_m * area.height_m))
        self.nx = max(1, math.ceil(area.width_m / self.cell_size))
        self.ny = max(1, math.ceil(area.height_m / self.cell_size))
        self._candidates = self._build_candidates()

    def __len__(self) -> int:
        return int(self.ids.size)

    def _build_candidates(self, block: int = 256) -> np.ndarray:
        n_cells = self.nx * self.ny
        cells = np.arange(n_cells)
        x0 = (cells // self.ny) * self.cell_size
        y0 = (cells % self.ny) * self.cell_size
        px = self.positions[:, 0]
        py = self.positions[:, 1]
        lists: list[np.ndarray] = []
        for start in range(0, n_cells, block):
            cx0 = x0[start : start + block, None]
            cy0 = y0[start : start + block, None]
            cx1 = cx0 + self.cell_size
            cy1 = cy0 + self.cell_size
            dx_min = np.maximum(np.maximum(cx0 - px, px - cx1), 0.0)
            dy_min = np.maximum(np.maximum(cy0 - py, py - cy1), 0.0)
            d_min = dx_min**2 + dy_min**2
            dx_max = np.maximum(np.abs(px - cx0), np.abs(px - cx1))
            dy_max = np.maximum(np.abs(py - cy0), np.abs(py - cy1))
            bound = (dx_max**2 + dy_max**2).min(axis=1, keepdims=True)
            keep = d_min <= bound * (1.0 + 1e-9) + 1e-9
            lists.extend(np.nonzero(row)[0] for row in keep)
        width = max(len(c) for c in lists)
        table = np.full((n_cells, width), -1, dtype=np.int64)
        for cell, rows in enumerate(lists):
            table[cell, : len(rows)] = rows
        return table

    def query_rows(self, points: np.ndarray) -> np.ndarray:
        """Row (in id order) of the nearest entity for every point."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        rows = np.empty(points.shape[0], dtype=np.int64)
        inside = self.area.contains(points)
        if not inside.all():
            rows[~inside] = brute_force_nearest(points[~inside], self.positions)
        pts = points[inside]
        if pts.shape[0]:
            ci = np.minimum((pts[:, 0] / self.cell_size).astype(np.int64), self.nx - 1)
            cj = np.minimum((pts[:, 1] / self.cell_size).astype(np.int64), self.ny - 1)
            cand = self._candidates[ci * self.ny + cj]
            valid = cand >= 0
            safe = np.where(valid, cand, 0)
            d2 = (self.positions[safe, 0] - pts[:, 0, None]) ** 2 + (self.positions[safe, 1] - pts[:, 1, None]) ** 2
            d2[~valid] = np.inf
            best = np.argmin(d2, axis=1)
            rows[inside] = safe[np.arange(pts.shape[0]), best]
        return rows

    def query(self, points: np.ndarray) -> np.ndarray:
        """Id of the nearest entity for every point."""
        return self.ids[self.query_rows(points)]


def nearest(point: tuple[float, float] | np.ndarray, index: GridIndex) -> int:
    """
    Id of the entity nearest to a point; ties go to the lowest id.

    Raises:
        ConfigError: If the index is empty
    """
    if len(index) == 0:
        raise ConfigError("Nearest-neighbour query on an empty index")
    return int(index.query(np.asarray(point, dtype=np.float64).reshape(1, 2))[0])


@dataclass(frozen=True)
class Topology:
    """Immutable deployment of BSs and MHs with spatial indices and the ideal MH of every BS."""

    area: Area
    base_stations: tuple[BaseStation, ...]
    mec_hosts: tuple[MecHost, ...]
    bs_index: GridIndex = field(repr=False)
    mh_index: GridIndex = field(repr=False)
    ideal_mh: dict[int, int] = field(repr=False)

    @property
    def bs_positions(self) -> np.ndarray:
        return self.bs_index.positions

    @property
    def mh_positions(self) -> np.ndarray:
        return self.mh_index.positions

    @property
    def bs_capacities(self) -> np.ndarray:
        return np.array([b.capacity_bps for b in self.base_stations])

    @property
    def mh_capacities(self) -> np.ndarray:
        return np.array([m.capacity_bps for m in self.mec_hosts])

    @property
    def ideal_mh_rows(self) -> np.ndarray:
        """Ideal MH row for every BS row."""
        return self.mh_index.query_rows(self.bs_positions)

    @classmethod
    def from_entities(
        cls, area: Area, base_stations: list[BaseStation], mec_hosts: list[MecHost]
    ) -> "Topology":
        """Index the entities and compute the ideal MH table."""
        problems = []
        if not base_stations:
            problems.append("topology has zero base stations")
        if not mec_hosts:
            problems.append("topology has zero MEC hosts")
        for kind, entities in (("BS", base_stations), ("MH", mec_hosts)):
            ids = [e.id for e in entities]
            if len(set(ids)) != len(ids):
                problems.append(f"duplicate {kind} ids")
            pos = np.array([(e.x, e.y) for e in entities]).reshape(-1, 2)
            if entities and not area.contains(pos).all():
                problems.append(f"{kind} positions outside the area")
        if problems:
            raise ConfigError("Invalid topology", problems)

        bss = tuple(sorted(base_stations, key=lambda b: b.id))
        mhs = tuple(sorted(mec_hosts, key=lambda m: m.id))
        bs_index = GridIndex(np.array([b.id for b in bss]), np.array([(b.x, b.y) for b in bss]), area)
        mh_index = GridIndex(np.array([m.id for m in mhs]), np.array([(m.x, m.y) for m in mhs]), area)
        ideal_rows = mh_index.query_rows(bs_index.positions)
        if not np.array_equal(ideal_rows, brute_force_nearest(bs_index.positions, mh_index.positions)):
            raise InvariantViolation("Ideal MH table disagrees with the exhaustive nearest-MH scan")
        ideal = mh_index.ids[ideal_rows]
        return cls(
            area=area,
            base_stations=bss,
            mec_hosts=mhs,
            bs_index=bs_index,
            mh_index=mh_index,
            ideal_mh={int(b): int(m) for b, m in zip(bs_index.ids, ideal, strict=True)},
        )


def build_topology(config: TopologyConfig, area: Area, rng: np.random.Generator) -> Topology:
    """
    Deploy BSs and MHs over the area.

    Raises:
        ConfigError: If either set ends up empty
    """
    if config.fixed_count:
        bs_points = sample_hppp_fixed_count(config.bs_count, area, rng)
        mh_points = sample_hppp_fixed_count(config.mh_count, area, rng)
    else:
        bs_points = sample_hppp(config.bs_intensity_per_km2, area, rng)
        mh_points = sample_hppp(config.mh_intensity_per_km2, area, rng)
    log.debug("Deployed %d BSs and %d MHs", len(bs_points), len(mh_points))
    return Topology.from_entities(
        area,
        [BaseStation(i, float(x), float(y), config.bs_capacity_bps) for i, (x, y) in enumerate(bs_points)],
        [MecHost(i, float(x), float(y), config.mh_capacity_bps) for i, (x, y) in enumerate(mh_points)],
    )


def save_topology(topology: Topology, directory: Path) -> tuple[Path, Path]:
    """Write the bs.csv / mh.csv pair; returns both paths."""
    directory.mkdir(parents=True, exist_ok=True)
    bs_path = directory / BS_FILE
    mh_path = directory / MH_FILE
    try:
        for path, entities in ((bs_path, topology.base_stations), (mh_path, topology.mec_hosts)):
            rows = [(e.id, e.x, e.y, e.capacity_bps) for e in entities]
            pd.DataFrame(rows, columns=TOPOLOGY_COLUMNS).to_csv(path, index=False)
    except OSError as e:
        raise ArtifactIOError(directory, str(e)) from e
    return bs_path, mh_path


def _read_entities(path: Path) -> pd.DataFrame:
    try:
        df = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ArtifactIOError(path, str(e)) from e
    missing = [c for c in TOPOLOGY_COLUMNS if c not in df.columns]
    if missing:
        raise ArtifactIOError(path, f"missing columns {', '.join(missing)}")
    return df


def load_topology(directory: Path, area: Area) -> Topology:
    """Read a topology written by save_topology."""
    bs = _read_entities(directory / BS_FILE)
    mh = _read_entities(directory / MH_FILE)
    return Topology.from_entities(
        area,
        [BaseStation(int(r.id), float(r.x), float(r.y), float(r.capacity_bps)) for r in bs.itertuples()],
        [MecHost(int(r.id), float(r.x), float(r.y), float(r.capacity_bps)) for r in mh.itertuples()],
    )
