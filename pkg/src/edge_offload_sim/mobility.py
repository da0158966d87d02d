"""User populations and per-second position streams."""

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from edge_offload_sim.enums import ApplicationName, MobilityType, TraceFormat
from edge_offload_sim.exceptions import ConfigError, TraceFormatError, TraceGapError
from edge_offload_sim.privacy import PrivacyLevel
from edge_offload_sim.sim_logging import log
from edge_offload_sim.topology import Area

TRACE_COLUMNS = ["t", "user_id", "x", "y"]


class PopulationSpec(BaseModel):
    """How many users of each mobility type take part."""

    model_config = ConfigDict(extra="forbid")

    car_passengers: int = Field(default=400, ge=0)
    buses: int = Field(default=40, ge=0)
    passengers_per_bus: int = Field(default=10, ge=1)
    pedestrians: int = Field(default=450, ge=0)

    @property
    def bus_passengers(self) -> int:
        return self.buses * self.passengers_per_bus

    @property
    def total(self) -> int:
        return self.car_passengers + self.bus_passengers + self.pedestrians


def _speed_range(value: tuple[float, float]) -> tuple[float, float]:
    low, high = value
    if not 0 < low <= high:
        raise ValueError(f"speed range must satisfy 0 < min <= max, got {value}")
    return value


class SyntheticMobilityParams(BaseModel):
    """Manhattan-grid mobility calibration."""

    model_config = ConfigDict(extra="forbid")

    block_m: float = Field(default=100.0, gt=0)
    sidewalk_offset_m: float = Field(default=5.0, gt=0)
    car_speed_mps: tuple[float, float] = (8.0, 14.0)
    bus_speed_mps: tuple[float, float] = (6.0, 10.0)
    pedestrian_speed_mps: tuple[float, float] = (1.0, 1.9)
    light_cycle_s: float = Field(default=30.0, gt=0)
    bus_stop_spacing_m: float = Field(default=500.0, gt=0)
    bus_stop_s: float = Field(default=20.0, ge=0)
    bus_route_min_side_m: float = Field(default=300.0, gt=0)
    pedestrian_pause_max_s: float = Field(default=10.0, ge=0)

    @model_validator(mode="after")
    def _check(self) -> "SyntheticMobilityParams":
        for name in ("car_speed_mps", "bus_speed_mps", "pedestrian_speed_mps"):
            _speed_range(getattr(self, name))
        if self.sidewalk_offset_m * 2 >= self.block_m:
            raise ValueError("sidewalk_offset_m must be smaller than half a block")
        return self

    def speed_cap(self, mobility: MobilityType) -> float:
        return {
            MobilityType.CAR_PASSENGER: self.car_speed_mps[1],
            MobilityType.BUS_PASSENGER: self.bus_speed_mps[1],
            MobilityType.PEDESTRIAN: self.pedestrian_speed_mps[1],
        }[mobility]


@dataclass(frozen=True)
class UserAgent:
    """One simulated user. Bus passengers of the same bus share a vehicle_id."""

    id: int
    mobility: MobilityType
    application: ApplicationName | None = None
    privacy: PrivacyLevel | None = None
    vehicle_id: int | None = None


def build_population(population: PopulationSpec) -> list[UserAgent]:
    """
    Create the users of a population.

    Ids run over car passengers, then bus passengers, then pedestrians. Car i rides vehicle i;
    bus passenger k rides bus (k mod buses), whose vehicle id follows the cars.
    """
    agents = [UserAgent(i, MobilityType.CAR_PASSENGER, vehicle_id=i) for i in range(population.car_passengers)]
    base = population.car_passengers
    agents += [
        UserAgent(base + k, MobilityType.BUS_PASSENGER, vehicle_id=population.car_passengers + k % population.buses)
        for k in range(population.bus_passengers)
    ]
    base += population.bus_passengers
    agents += [UserAgent(base + k, MobilityType.PEDESTRIAN) for k in range(population.pedestrians)]
    return agents


@dataclass(frozen=True)
class MobilityTrace:
    """Positions of every user at every timestep.

    Attributes:
        user_ids: Sorted user ids, shape (n,)
        positions: Read-only array (timesteps, n, 2) in meters
        resolution_s: Seconds per timestep
        clipped: Positions clipped to the area during ingestion
    """

    user_ids: np.ndarray
    positions: np.ndarray
    resolution_s: float = 1.0
    clipped: int = 0
    _rows: dict[int, int] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.positions.flags.writeable = False
        self._rows.update({int(u): i for i, u in enumerate(self.user_ids)})

    @property
    def n_timesteps(self) -> int:
        return int(self.positions.shape[0])

    @property
    def n_users(self) -> int:
        return int(self.user_ids.size)

    @property
    def duration_s(self) -> float:
        return self.n_timesteps * self.resolution_s

    def at(self, timestep: int) -> np.ndarray:
        """Positions of all users at a timestep, in user_ids order."""
        if not 0 <= timestep < self.n_timesteps:
            raise TraceGapError(int(self.user_ids[0]) if self.n_users else "-", timestep)
        return self.positions[timestep]

    def position(self, user_id: int, timestep: int) -> tuple[float, float]:
        if user_id not in self._rows:
            raise TraceGapError(user_id, timestep)
        x, y = self.at(timestep)[self._rows[user_id]]
        return float(x), float(y)


@dataclass(frozen=True)
class PassengerAssignment:
    """Which users ride each trace entity (vehicle or person id)."""

    riders: dict[str, tuple[int, ...]]

    def user_ids(self) -> list[int]:
        return sorted(u for users in self.riders.values() for u in users)


def round_robin_assignment(
    car_ids: list[str], bus_ids: list[str], person_ids: list[str], population: PopulationSpec
) -> PassengerAssignment:
    """
    Map population users onto trace entities.

    Cars and persons carry one user each, in sorted id order; bus passengers are dealt
    round-robin over the sorted bus ids, matching build_population's user ids.

    Raises:
        ConfigError: If the trace lacks the entities the population needs
    """
    cars, buses, persons = sorted(car_ids), sorted(bus_ids), sorted(person_ids)
    problems = []
    if len(cars) < population.car_passengers:
        problems.append(f"{population.car_passengers} car passengers but only {len(cars)} cars in trace")
    if population.bus_passengers and not buses:
        problems.append(f"{population.bus_passengers} bus passengers but no buses in trace")
    if len(persons) < population.pedestrians:
        problems.append(f"{population.pedestrians} pedestrians but only {len(persons)} persons in trace")
    if problems:
        raise ConfigError("Trace does not fit the population", problems)

    riders: dict[str, list[int]] = {}
    for i in range(population.car_passengers):
        riders[cars[i]] = [i]
    base = population.car_passengers
    for k in range(population.bus_passengers):
        riders.setdefault(buses[k % len(buses)], []).append(base + k)
    base += population.bus_passengers
    for k in range(population.pedestrians):
        riders[persons[k]] = [base + k]
    return PassengerAssignment({entity: tuple(users) for entity, users in riders.items()})


def _read_positions_csv(path: Path) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype={"user_id": str})
    except FileNotFoundError:
        raise
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise TraceFormatError(f"{path}: {e}") from e
    missing = [c for c in TRACE_COLUMNS if c not in df.columns]
    if missing:
        raise TraceFormatError(f"{path}: missing columns {', '.join(missing)}")
    return df.rename(columns={"user_id": "entity"})[["t", "entity", "x", "y"]]


def _read_fcd_xml(path: Path) -> tuple[pd.DataFrame, dict[str, str]]:
    """Stream a floating car data export; returns rows and the kind of every entity."""
    rows: list[tuple[float, str, float, float]] = []
    kinds: dict[str, str] = {}
    try:
        for _, elem in ET.iterparse(path, events=("end",)):
            if elem.tag != "timestep":
                continue
            time = float(elem.attrib["time"])
            for child in elem:
                if child.tag not in ("vehicle", "person"):
                    continue
                entity = child.attrib["id"]
                rows.append((time, entity, float(child.attrib["x"]), float(child.attrib["y"])))
                if child.tag == "person":
                    kinds[entity] = "person"
                else:
                    kinds[entity] = "bus" if "bus" in child.attrib.get("type", "").lower() else "car"
            elem.clear()
    except ET.ParseError as e:
        raise TraceFormatError(f"{path}: {e}") from e
    except (KeyError, ValueError) as e:
        raise TraceFormatError(f"{path}: malformed timestep or entity element ({e})") from e
    return pd.DataFrame(rows, columns=["t", "entity", "x", "y"]), kinds


def fcd_entities(path: Path) -> dict[str, list[str]]:
    """Entity ids of an FCD file grouped as car / bus / person."""
    _, kinds = _read_fcd_xml(path)
    grouped: dict[str, list[str]] = {"car": [], "bus": [], "person": []}
    for entity, kind in kinds.items():
        grouped[kind].append(entity)
    return grouped


def ingest_trace(
    path: Path,
    fmt: TraceFormat,
    area: Area,
    passenger_assignment: PassengerAssignment | None = None,
    resolution_s: float = 1.0,
) -> MobilityTrace:
    """
    Load an external trace.

    Args:
        path: Positions CSV (t,user_id,x,y) or FCD XML file
        fmt: File format
        area: Service area; outside positions are clipped and counted
        passenger_assignment: Maps trace entities to users; without it, entity ids are user ids
        resolution_s: Seconds per timestep

    Raises:
        TraceFormatError: If the file does not parse
        TraceGapError: If a user misses a timestep
    """
    if fmt == TraceFormat.POSITIONS_CSV:
        df = _read_positions_csv(path)
    else:
        df, _ = _read_fcd_xml(path)

    if passenger_assignment is not None:
        riders = pd.DataFrame(
            [(entity, user) for entity, users in passenger_assignment.riders.items() for user in users],
            columns=["entity", "user_id"],
        )
        df = df.merge(riders, on="entity", how="inner")
        user_ids = np.array(passenger_assignment.user_ids(), dtype=np.int64)
    else:
        try:
            df["user_id"] = df["entity"].astype(np.int64)
        except ValueError as e:
            raise TraceFormatError(f"{path}: user ids must be integers without a passenger assignment") from e
        user_ids = np.sort(df["user_id"].unique()).astype(np.int64)

    return _assemble(df, user_ids, area, resolution_s)


def _assemble(df: pd.DataFrame, user_ids: np.ndarray, area: Area, resolution_s: float) -> MobilityTrace:
    if df.empty or user_ids.size == 0:
        return MobilityTrace(user_ids, np.empty((0, user_ids.size, 2)), resolution_s)
    steps = np.rint(df["t"].to_numpy(dtype=np.float64) / resolution_s).astype(np.int64)
    steps -= steps.min()
    n_steps = int(steps.max()) + 1
    cols = np.searchsorted(user_ids, df["user_id"].to_numpy(dtype=np.int64))

    positions = np.full((n_steps, user_ids.size, 2), np.nan)
    seen = np.zeros((n_steps, user_ids.size), dtype=np.int64)
    np.add.at(seen, (steps, cols), 1)
    if (seen > 1).any():
        t, c = np.argwhere(seen > 1)[0]
        raise TraceFormatError(f"Duplicate position for user {user_ids[c]} at timestep {t}")
    if (seen == 0).any():
        # Report the lowest user id, then the earliest timestep.
        t, c = min(np.argwhere(seen == 0).tolist(), key=lambda tc: (tc[1], tc[0]))
        raise TraceGapError(int(user_ids[c]), int(t))

    points, clipped = area.clip(df[["x", "y"]].to_numpy(dtype=np.float64))
    positions[steps, cols] = points
    if clipped:
        log.warning("Clipped %d trace positions to the area boundary", clipped)
    return MobilityTrace(user_ids, positions, resolution_s, clipped=clipped)


def save_trace_csv(trace: MobilityTrace, path: Path) -> Path:
    """Write the canonical positions CSV (t,user_id,x,y), sorted by time then user."""
    n_t, n_u = trace.n_timesteps, trace.n_users
    t = np.repeat(np.arange(n_t) * trace.resolution_s, n_u)
    if float(trace.resolution_s).is_integer():
        t = t.astype(np.int64)
    df = pd.DataFrame(
        {
            "t": t,
            "user_id": np.tile(trace.user_ids, n_t),
            "x": trace.positions[:, :, 0].ravel(),
            "y": trace.positions[:, :, 1].ravel(),
        }
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False)
    return path


@dataclass(frozen=True)
class TraceValidation:
    """Invariant violation counts of a trace."""

    missing_positions: int
    outside_area: int
    speed_violations: int

    @property
    def ok(self) -> bool:
        return self.missing_positions == self.outside_area == self.speed_violations == 0


def validate_trace(trace: MobilityTrace, area: Area, speed_caps: np.ndarray) -> TraceValidation:
    """
    Check completeness, area and speed-cap invariants.

    Args:
        trace: Trace to check
        area: Service area
        speed_caps: Max speed (m/s) per user, aligned with trace.user_ids
    """
    pos = trace.positions
    missing = int(np.isnan(pos).any(axis=2).sum())
    outside = int((~area.contains(pos.reshape(-1, 2))).sum()) - missing
    speed = 0
    if trace.n_timesteps > 1:
        step = np.hypot(*np.moveaxis(np.diff(pos, axis=0), 2, 0))
        speed = int((step > speed_caps[None, :] * trace.resolution_s + 1e-9).sum())
    return TraceValidation(missing, max(outside, 0), speed)


class _Grid:
    """Street and sidewalk lattices of a Manhattan grid."""

    def __init__(self, area: Area, params: SyntheticMobilityParams):
        self.xs = np.arange(0.0, area.width_m + 1e-9, params.block_m)
        self.ys = np.arange(0.0, area.height_m + 1e-9, params.block_m)
        if self.xs.size < 2 or self.ys.size < 2:
            raise ConfigError(f"Area {area.width_m}x{area.height_m} m is smaller than one {params.block_m} m block")
        off = params.sidewalk_offset_m
        self.sidewalk_xs = np.unique(np.clip(np.concatenate((self.xs - off, self.xs + off)), off, area.width_m - off))
        self.sidewalk_ys = np.unique(np.clip(np.concatenate((self.ys - off, self.ys + off)), off, area.height_m - off))


class _Mover:
    """Shared step bookkeeping: walk toward a target at a speed, stop on arrival."""

    def __init__(self, rng: np.random.Generator, dt: float):
        self.rng = rng
        self.dt = dt
        self.x = 0.0
        self.y = 0.0

    def _advance(self, tx: float, ty: float, budget: float) -> float:
        """Move along the axis toward (tx, ty) by at most budget meters; returns meters moved."""
        gap = abs(tx - self.x) + abs(ty - self.y)
        if gap <= budget:
            self.x, self.y = tx, ty
            return gap
        dx = min(abs(tx - self.x), budget)
        self.x += math.copysign(dx, tx - self.x)
        self.y += math.copysign(budget - dx, ty - self.y)
        return budget


class _TrafficLights:
    def __init__(self, cycle_s: float):
        self.cycle = cycle_s

    def green(self, i: int, j: int, horizontal: bool, t: float) -> bool:
        phase = (t + (7 * i + 13 * j) % self.cycle) % self.cycle
        return (phase < self.cycle / 2) == horizontal


class _Car(_Mover):
    """Random-turn walk over street intersections, waiting at red lights."""

    def __init__(self, grid: _Grid, params: SyntheticMobilityParams, lights: _TrafficLights, rng, dt):
        super().__init__(rng, dt)
        self.grid = grid
        self.lights = lights
        self.speed = rng.uniform(*params.car_speed_mps)
        self.i = int(rng.integers(grid.xs.size))
        self.j = int(rng.integers(grid.ys.size))
        self.x, self.y = grid.xs[self.i], grid.ys[self.j]
        self.heading = (0, 0)
        self.target: tuple[int, int] | None = None

    def _choose(self) -> tuple[int, int]:
        options = [
            (di, dj)
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1))
            if 0 <= self.i + di < self.grid.xs.size and 0 <= self.j + dj < self.grid.ys.size
        ]
        forward = [o for o in options if o != (-self.heading[0], -self.heading[1])]
        pool = forward or options
        return pool[int(self.rng.integers(len(pool)))]

    def step(self, t: float) -> tuple[float, float]:
        if self.target is None:
            self.heading = self._choose()
            if not self.lights.green(self.i, self.j, self.heading[0] != 0, t):
                return self.x, self.y
            self.target = (self.i + self.heading[0], self.j + self.heading[1])
        ti, tj = self.target
        self._advance(self.grid.xs[ti], self.grid.ys[tj], self.speed * self.dt)
        if (self.x, self.y) == (self.grid.xs[ti], self.grid.ys[tj]):
            self.i, self.j = ti, tj
            self.target = None
        return self.x, self.y


class _Bus(_Mover):
    """Loops a rectangular route of grid segments with timed stops at a fixed spacing."""

    def __init__(self, grid: _Grid, params: SyntheticMobilityParams, lights: _TrafficLights, rng, dt):
        super().__init__(rng, dt)
        self.grid = grid
        self.lights = lights
        self.params = params
        self.speed = rng.uniform(*params.bus_speed_mps)
        self.route = self._rectangle(rng)
        self.k = int(rng.integers(len(self.route)))
        self.x, self.y = grid.xs[self.route[self.k][0]], grid.ys[self.route[self.k][1]]
        self.odometer = 0.0
        self.stopped = 0.0
        self.departed = False

    def _span(self, n: int, rng: np.random.Generator) -> tuple[int, int]:
        min_cells = max(1, math.ceil(self.params.bus_route_min_side_m / self.params.block_m))
        if n - 1 <= min_cells:
            return 0, n - 1
        lo = int(rng.integers(0, n - 1 - min_cells + 1))
        hi = int(rng.integers(lo + min_cells, n))
        return lo, hi

    def _rectangle(self, rng: np.random.Generator) -> list[tuple[int, int]]:
        i0, i1 = self._span(self.grid.xs.size, rng)
        j0, j1 = self._span(self.grid.ys.size, rng)
        route = [(i, j0) for i in range(i0, i1)]
        route += [(i1, j) for j in range(j0, j1)]
        route += [(i, j1) for i in range(i1, i0, -1)]
        route += [(i0, j) for j in range(j1, j0, -1)]
        return route

    def step(self, t: float) -> tuple[float, float]:
        if self.stopped > 0:
            self.stopped -= self.dt
            return self.x, self.y
        i, j = self.route[self.k]
        ni, nj = self.route[(self.k + 1) % len(self.route)]
        if not self.departed:
            if not self.lights.green(i, j, ni != i, t):
                return self.x, self.y
            self.departed = True
        budget = min(self.speed * self.dt, self.params.bus_stop_spacing_m - self.odometer)
        self.odometer += self._advance(self.grid.xs[ni], self.grid.ys[nj], budget)
        if self.odometer >= self.params.bus_stop_spacing_m - 1e-9:
            self.odometer = 0.0
            self.stopped = self.params.bus_stop_s
        if (self.x, self.y) == (self.grid.xs[ni], self.grid.ys[nj]):
            self.k = (self.k + 1) % len(self.route)
            self.departed = False
        return self.x, self.y


class _Pedestrian(_Mover):
    """Random waypoint on the sidewalk lattice: along its row first, then its column."""

    def __init__(self, grid: _Grid, params: SyntheticMobilityParams, rng, dt):
        super().__init__(rng, dt)
        self.grid = grid
        self.params = params
        self.x = float(rng.choice(grid.sidewalk_xs))
        self.y = float(rng.choice(grid.sidewalk_ys))
        self.paused = 0.0
        self._new_leg()

    def _new_leg(self) -> None:
        self.tx = float(self.rng.choice(self.grid.sidewalk_xs))
        self.ty = float(self.rng.choice(self.grid.sidewalk_ys))
        self.speed = self.rng.uniform(*self.params.pedestrian_speed_mps)

    def step(self, t: float) -> tuple[float, float]:
        if self.paused > 0:
            self.paused -= self.dt
            return self.x, self.y
        if self.x != self.tx:
            self._advance(self.tx, self.y, self.speed * self.dt)
        else:
            self._advance(self.x, self.ty, self.speed * self.dt)
        if (self.x, self.y) == (self.tx, self.ty):
            self.paused = float(self.rng.uniform(0.0, self.params.pedestrian_pause_max_s))
            self._new_leg()
        return self.x, self.y


def generate_synthetic(
    population: PopulationSpec,
    area: Area,
    duration_s: float,
    rng: np.random.Generator,
    params: SyntheticMobilityParams | None = None,
    resolution_s: float = 1.0,
) -> MobilityTrace:
    """
    Synthesize a trace on a Manhattan grid.

    Cars and buses drive on the street lines and obey traffic lights; pedestrians walk on the
    sidewalk lines offset from the streets. Bus passengers copy their bus's positions.

    Args:
        population: User counts
        area: Service area
        duration_s: Trace length in seconds
        rng: Random stream; one child stream is spawned per vehicle and pedestrian
        params: Grid calibration
        resolution_s: Seconds per timestep
    """
    params = params or SyntheticMobilityParams()
    agents = build_population(population)
    n_steps = int(duration_s // resolution_s)
    user_ids = np.array([a.id for a in agents], dtype=np.int64)
    positions = np.empty((n_steps, len(agents), 2))
    if not agents or n_steps == 0:
        return MobilityTrace(user_ids, positions, resolution_s)

    grid = _Grid(area, params)
    lights = _TrafficLights(params.light_cycle_s)
    n_vehicles = population.car_passengers + population.buses
    streams = rng.spawn(n_vehicles + population.pedestrians)
    movers: list[_Car | _Bus | _Pedestrian] = [
        _Car(grid, params, lights, streams[v], resolution_s) for v in range(population.car_passengers)
    ]
    movers += [
        _Bus(grid, params, lights, streams[v], resolution_s) for v in range(population.car_passengers, n_vehicles)
    ]
    movers += [_Pedestrian(grid, params, streams[n_vehicles + p], resolution_s) for p in range(population.pedestrians)]

    # Movers are vehicles (one per car, one per bus) followed by pedestrians.
    first_pedestrian = population.car_passengers + population.bus_passengers
    mover_of_user = np.array(
        [a.vehicle_id if a.vehicle_id is not None else n_vehicles + a.id - first_pedestrian for a in agents]
    )
    tracks = np.empty((n_steps, len(movers), 2))
    for m, mover in enumerate(movers):
        tracks[0, m] = (mover.x, mover.y)
        for s in range(1, n_steps):
            tracks[s, m] = mover.step(s * resolution_s)
    positions[:] = tracks[:, mover_of_user]
    return MobilityTrace(user_ids, positions, resolution_s)
