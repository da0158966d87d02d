import math

import numpy as np
import pytest
from scipy import stats

from edge_offload_sim.exceptions import ConfigError
from edge_offload_sim.topology import (
    Area,
    BaseStation,
    GridIndex,
    MecHost,
    Topology,
    TopologyConfig,
    brute_force_nearest,
    build_topology,
    load_topology,
    nearest,
    sample_hppp,
    sample_hppp_fixed_count,
    save_topology,
)


@pytest.fixture
def area() -> Area:
    return Area(width_m=1000.0, height_m=1000.0)


def test_nearest_tie_goes_to_lowest_id(area):
    """A point equidistant from two MHs maps to the lower id, whatever the insertion order."""
    index = GridIndex(np.array([7, 3]), np.array([[600.0, 500.0], [400.0, 500.0]]), area)
    assert nearest((500.0, 500.0), index) == 3
    assert nearest((450.0, 500.0), index) == 3
    assert nearest((550.0, 500.0), index) == 7


@pytest.mark.parametrize("count", [1, 7, 95, 475])
def test_grid_index_matches_brute_force(area, count):
    """Grid queries agree with the exhaustive scan on 10^5 random points over several deployments."""
    rng = np.random.default_rng(count)
    for _ in range(5):
        positions = sample_hppp_fixed_count(count, area, rng)
        index = GridIndex(np.arange(count), positions, area)
        points = sample_hppp_fixed_count(20_000, area, rng)
        assert np.array_equal(index.query_rows(points), brute_force_nearest(points, positions))


def test_grid_index_handles_points_outside_area(area):
    """Points off the grid fall back to the exhaustive scan."""
    positions = np.array([[10.0, 10.0], [990.0, 990.0]])
    index = GridIndex(np.array([0, 1]), positions, area)
    assert index.query(np.array([[-50.0, -50.0], [1500.0, 1200.0]])).tolist() == [0, 1]


def test_grid_index_rejects_empty(area):
    with pytest.raises(ConfigError):
        GridIndex(np.array([], dtype=np.int64), np.empty((0, 2)), area)


@pytest.mark.parametrize("intensity,expected", [
    (118.75, 475.0),
    (23.75, 95.0),
])
def test_hppp_count_mean(intensity, expected):
    """Over 1000 draws on 4 km², the mean count is intensity times area within three standard errors."""
    area = Area(width_m=2000.0, height_m=2000.0)
    rng = np.random.default_rng(0)
    counts = np.array([len(sample_hppp(intensity, area, rng)) for _ in range(1000)])
    standard_error = math.sqrt(expected / counts.size)
    assert abs(counts.mean() - expected) < 3 * standard_error
    assert counts.var(ddof=1) == pytest.approx(expected, rel=0.15)


def test_zero_intensity_is_empty(area):
    assert sample_hppp(0.0, area, np.random.default_rng(0)).shape == (0, 2)


@pytest.mark.parametrize("sampler", [
    lambda area, rng: sample_hppp(118.75, area, rng),
    lambda area, rng: sample_hppp_fixed_count(475, area, rng),
])
def test_hppp_points_are_spatially_uniform(sampler):
    """Pooled points over a 10 x 10 cell grid pass a chi-square uniformity test at the 1% level."""
    area = Area(width_m=2000.0, height_m=2000.0)
    rng = np.random.default_rng(11)
    points = np.vstack([sampler(area, rng) for _ in range(20)])
    counts, _, _ = np.histogram2d(points[:, 0], points[:, 1], bins=10, range=[[0.0, 2000.0], [0.0, 2000.0]])
    assert stats.chisquare(counts.ravel()).pvalue > 0.01


def test_hppp_points_inside_area(area):
    points = sample_hppp(200.0, area, np.random.default_rng(1))
    assert area.contains(points).all()


def test_negative_intensity_rejected(area):
    with pytest.raises(ConfigError):
        sample_hppp(-1.0, area, np.random.default_rng(0))


def test_build_topology_counts_and_ideal_table(area):
    """Fixed-count deployment places exactly the requested entities and maps every BS to its nearest MH."""
    config = TopologyConfig(bs_count=60, mh_count=12)
    topology = build_topology(config, area, np.random.default_rng(5))
    assert len(topology.base_stations) == 60
    assert len(topology.mec_hosts) == 12
    expected = brute_force_nearest(topology.bs_positions, topology.mh_positions)
    assert [topology.ideal_mh[b.id] for b in topology.base_stations] == [
        topology.mec_hosts[r].id for r in expected
    ]


def test_build_topology_is_deterministic(area):
    config = TopologyConfig(bs_count=30, mh_count=6)
    a = build_topology(config, area, np.random.default_rng(9))
    b = build_topology(config, area, np.random.default_rng(9))
    assert a.base_stations == b.base_stations
    assert a.mec_hosts == b.mec_hosts


@pytest.mark.parametrize("bs_count,mh_count,problem", [
    (0, 5, "zero base stations"),
    (5, 0, "zero MEC hosts"),
])
def test_empty_topology_rejected(area, bs_count, mh_count, problem):
    """An empty BS or MH set is a configuration error."""
    config = TopologyConfig(bs_count=bs_count, mh_count=mh_count)
    with pytest.raises(ConfigError) as exc:
        build_topology(config, area, np.random.default_rng(0))
    assert any(problem in p for p in exc.value.problems)


def test_duplicate_ids_and_outside_positions_rejected(area):
    with pytest.raises(ConfigError) as exc:
        Topology.from_entities(
            area,
            [BaseStation(1, 10.0, 10.0), BaseStation(1, 20.0, 20.0)],
            [MecHost(0, 5000.0, 10.0)],
        )
    assert "duplicate BS ids" in exc.value.problems
    assert "MH positions outside the area" in exc.value.problems


def test_save_and_load_topology(tmp_path, area):
    """A saved topology loads back with the same entities and ideal table."""
    topology = build_topology(TopologyConfig(bs_count=25, mh_count=5), area, np.random.default_rng(2))
    bs_path, mh_path = save_topology(topology, tmp_path / "topo")
    assert bs_path.exists() and mh_path.exists()

    loaded = load_topology(tmp_path / "topo", area)
    assert [b.id for b in loaded.base_stations] == [b.id for b in topology.base_stations]
    assert np.allclose(loaded.bs_positions, topology.bs_positions)
    assert np.allclose(loaded.mh_capacities, topology.mh_capacities)
    assert loaded.ideal_mh == topology.ideal_mh


def test_area_clip_counts_moved_points(area):
    clipped, moved = area.clip(np.array([[-5.0, 10.0], [500.0, 500.0], [1200.0, 1300.0]]))
    assert moved == 2
    assert clipped.tolist() == [[0.0, 10.0], [500.0, 500.0], [1000.0, 1000.0]]
