import numpy as np
import pytest

from edge_offload_sim.enums import MobilityType, TraceFormat
from edge_offload_sim.exceptions import ConfigError, TraceFormatError, TraceGapError
from edge_offload_sim.mobility import (
    MobilityTrace,
    PopulationSpec,
    SyntheticMobilityParams,
    build_population,
    fcd_entities,
    generate_synthetic,
    ingest_trace,
    round_robin_assignment,
    save_trace_csv,
    validate_trace,
)
from edge_offload_sim.topology import Area

FCD = """<?xml version="1.0" encoding="UTF-8"?>
<fcd-export>
    <timestep time="0.00">
        <vehicle id="car_a" x="10.0" y="0.0" speed="5" type="passenger"/>
        <vehicle id="line_1" x="100.0" y="50.0" speed="5" type="bus_city"/>
        <person id="walker" x="3.0" y="4.0" speed="1"/>
    </timestep>
    <timestep time="1.00">
        <vehicle id="car_a" x="15.0" y="0.0" speed="5" type="passenger"/>
        <vehicle id="line_1" x="100.0" y="57.0" speed="7" type="bus_city"/>
        <person id="walker" x="3.0" y="5.0" speed="1"/>
    </timestep>
</fcd-export>
"""


@pytest.fixture
def area() -> Area:
    return Area(width_m=500.0, height_m=500.0)


@pytest.fixture
def small_population() -> PopulationSpec:
    return PopulationSpec(car_passengers=5, buses=2, passengers_per_bus=3, pedestrians=4)


def _speed_caps(population: PopulationSpec, params: SyntheticMobilityParams) -> np.ndarray:
    return np.array([params.speed_cap(a.mobility) for a in build_population(population)])


def test_default_population_counts():
    """The default population has 400 car riders, 40 buses of 10 and 450 pedestrians."""
    agents = build_population(PopulationSpec())
    counts = {m: sum(a.mobility == m for a in agents) for m in MobilityType}
    assert counts == {MobilityType.CAR_PASSENGER: 400, MobilityType.BUS_PASSENGER: 400, MobilityType.PEDESTRIAN: 450}
    assert [a.id for a in agents] == list(range(1250))


def test_bus_passengers_share_vehicles(small_population):
    agents = build_population(small_population)
    bus_riders = [a for a in agents if a.mobility == MobilityType.BUS_PASSENGER]
    assert [a.vehicle_id for a in bus_riders] == [5, 6, 5, 6, 5, 6]
    assert all(a.vehicle_id is None for a in agents if a.mobility == MobilityType.PEDESTRIAN)


def test_synthetic_trace_is_valid(area, small_population):
    """Generated traces are complete, inside the area and within the speed caps."""
    params = SyntheticMobilityParams()
    trace = generate_synthetic(small_population, area, 300.0, np.random.default_rng(12), params)
    assert trace.n_timesteps == 300
    assert trace.n_users == small_population.total
    result = validate_trace(trace, area, _speed_caps(small_population, params))
    assert result.ok, result


def test_synthetic_trace_layout(area, small_population):
    """Cars stay on streets, pedestrians on sidewalks, and bus passengers ride with their bus."""
    trace = generate_synthetic(small_population, area, 200.0, np.random.default_rng(3))
    pos = trace.positions

    cars = pos[:, :5]
    on_street = np.isclose(cars[..., 0] % 100.0, 0.0) | np.isclose(cars[..., 1] % 100.0, 0.0)
    assert on_street.all()

    walkers = pos[:, -4:]
    off = np.minimum(walkers % 100.0, 100.0 - walkers % 100.0)
    assert (np.isclose(off[..., 0], 5.0) | np.isclose(off[..., 1], 5.0)).all()

    # Passengers 5, 7, 9 ride the first bus; 6, 8, 10 the second.
    assert np.array_equal(pos[:, 5], pos[:, 7])
    assert np.array_equal(pos[:, 5], pos[:, 9])
    assert np.array_equal(pos[:, 6], pos[:, 10])


def test_synthetic_trace_moves(area, small_population):
    trace = generate_synthetic(small_population, area, 300.0, np.random.default_rng(5))
    travelled = np.hypot(*np.diff(trace.positions, axis=0).T).sum(axis=1)
    assert (travelled > 0).all()


def test_synthetic_trace_is_deterministic(area, small_population):
    """The same seed gives identical traces."""
    a = generate_synthetic(small_population, area, 120.0, np.random.default_rng(21))
    b = generate_synthetic(small_population, area, 120.0, np.random.default_rng(21))
    c = generate_synthetic(small_population, area, 120.0, np.random.default_rng(22))
    assert np.array_equal(a.positions, b.positions)
    assert not np.array_equal(a.positions, c.positions)


def test_area_smaller_than_a_block_is_rejected(small_population):
    with pytest.raises(ConfigError):
        generate_synthetic(small_population, Area(width_m=50.0, height_m=50.0), 10.0, np.random.default_rng(0))


@pytest.mark.parametrize("field,value", [
    ("car_speed_mps", (10.0, 5.0)),
    ("pedestrian_speed_mps", (0.0, 1.0)),
    ("sidewalk_offset_m", 60.0),
])
def test_synthetic_params_validation(field, value):
    with pytest.raises(ValueError):
        SyntheticMobilityParams(**{field: value})


def test_ingest_positions_csv(tmp_path, area):
    path = tmp_path / "trace.csv"
    path.write_text("t,user_id,x,y\n0,1,10,10\n0,0,0,0\n1,0,1,0\n1,1,10,12\n")
    trace = ingest_trace(path, TraceFormat.POSITIONS_CSV, area)
    assert trace.user_ids.tolist() == [0, 1]
    assert trace.n_timesteps == 2
    assert trace.position(1, 1) == (10.0, 12.0)
    assert trace.clipped == 0


def test_ingest_reports_gap(tmp_path, area):
    """A user missing a timestep raises TraceGapError naming the user and the timestep."""
    path = tmp_path / "trace.csv"
    path.write_text("t,user_id,x,y\n0,0,0,0\n0,1,10,10\n1,0,1,0\n2,0,2,0\n2,1,10,12\n")
    with pytest.raises(TraceGapError) as exc:
        ingest_trace(path, TraceFormat.POSITIONS_CSV, area)
    assert (exc.value.user_id, exc.value.timestep) == (1, 1)


def test_ingest_rejects_duplicates(tmp_path, area):
    path = tmp_path / "trace.csv"
    path.write_text("t,user_id,x,y\n0,0,0,0\n0,0,1,1\n")
    with pytest.raises(TraceFormatError):
        ingest_trace(path, TraceFormat.POSITIONS_CSV, area)


@pytest.mark.parametrize("content", [
    "t,user,x,y\n0,0,0,0\n",
    "",
])
def test_ingest_rejects_malformed_csv(tmp_path, area, content):
    path = tmp_path / "trace.csv"
    path.write_text(content)
    with pytest.raises(TraceFormatError):
        ingest_trace(path, TraceFormat.POSITIONS_CSV, area)


def test_ingest_clips_outside_positions(tmp_path, area):
    path = tmp_path / "trace.csv"
    path.write_text("t,user_id,x,y\n0,0,-20,30\n1,0,600,30\n")
    trace = ingest_trace(path, TraceFormat.POSITIONS_CSV, area)
    assert trace.clipped == 2
    assert trace.position(0, 0) == (0.0, 30.0)
    assert trace.position(0, 1) == (500.0, 30.0)


def test_fcd_entities_and_assignment(tmp_path, area):
    """FCD vehicles are split into cars and buses; passengers are dealt onto them."""
    path = tmp_path / "fcd.xml"
    path.write_text(FCD)
    entities = fcd_entities(path)
    assert entities == {"car": ["car_a"], "bus": ["line_1"], "person": ["walker"]}

    spec = PopulationSpec(car_passengers=1, buses=1, passengers_per_bus=2, pedestrians=1)
    assignment = round_robin_assignment(entities["car"], entities["bus"], entities["person"], spec)
    assert assignment.riders == {"car_a": (0,), "line_1": (1, 2), "walker": (3,)}

    trace = ingest_trace(path, TraceFormat.FCD_XML, area, assignment)
    assert trace.user_ids.tolist() == [0, 1, 2, 3]
    assert trace.position(0, 1) == (15.0, 0.0)
    assert trace.position(1, 1) == trace.position(2, 1) == (100.0, 57.0)
    assert trace.position(3, 0) == (3.0, 4.0)


def test_assignment_needs_enough_entities():
    spec = PopulationSpec(car_passengers=2, buses=1, passengers_per_bus=1, pedestrians=0)
    with pytest.raises(ConfigError) as exc:
        round_robin_assignment(["c"], [], [], spec)
    assert len(exc.value.problems) == 2


def test_malformed_fcd_rejected(tmp_path, area):
    path = tmp_path / "fcd.xml"
    path.write_text("<fcd-export><timestep time='0'><vehicle id='a' x='1'/></timestep></fcd-export>")
    with pytest.raises(TraceFormatError):
        ingest_trace(path, TraceFormat.FCD_XML, area)


def test_saved_trace_ingests_back(tmp_path, area, small_population):
    trace = generate_synthetic(small_population, area, 30.0, np.random.default_rng(4))
    path = save_trace_csv(trace, tmp_path / "traces" / "seed=4.csv")
    loaded = ingest_trace(path, TraceFormat.POSITIONS_CSV, area)
    assert np.array_equal(loaded.user_ids, trace.user_ids)
    assert np.allclose(loaded.positions, trace.positions)


def test_validate_trace_counts_violations(area):
    positions = np.array([[[0.0, 0.0], [10.0, 10.0]], [[1.0, 0.0], [10.0, 40.0]], [[2.0, 0.0], [900.0, 40.0]]])
    trace = MobilityTrace(np.array([0, 1]), positions)
    result = validate_trace(trace, area, np.array([2.0, 2.0]))
    assert result.outside_area == 1
    assert result.speed_violations == 2
    assert result.missing_positions == 0
    assert not result.ok


def test_trace_is_read_only_and_bounded(area):
    trace = MobilityTrace(np.array([0]), np.zeros((2, 1, 2)))
    with pytest.raises(ValueError):
        trace.positions[0, 0, 0] = 1.0
    with pytest.raises(TraceGapError):
        trace.at(2)
