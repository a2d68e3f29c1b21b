import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from absplace.terrain import (
    Building,
    ChannelModel,
    InfeasibleAltitudeError,
    PlacementError,
    RadioParams,
    Scenario,
    TerrainMap,
    best_gains,
    coverage_bitmap,
    coverage_indicator_disk,
    coverage_indicators,
    coverage_range,
    coverage_rate,
    gain_los,
    gain_site_specific,
    generate_scenario,
    generate_terrain,
    grid_cells,
    linear_to_db,
    los_blocked,
    los_blocked_many,
)


# --- terrain generation ---------------------------------------------------

def test_generate_terrain_reference_setup():
    t = generate_terrain(7, 3000.0, 30, 150.0, (30.0, 70.0))
    assert len(t.buildings) == 30
    for b in t.buildings:
        assert 30.0 <= b.height <= 70.0
        assert b.hx == b.hy == 75.0
        x0, x1 = b.x_bounds
        y0, y1 = b.y_bounds
        assert 0 <= x0 and x1 <= 3000 and 0 <= y0 and y1 <= 3000
    for i, a in enumerate(t.buildings):
        for b in t.buildings[i + 1:]:
            assert not a.overlaps(b)


def test_generate_terrain_empty_and_deterministic():
    assert generate_terrain(3, 3000.0, 0).buildings == ()
    assert generate_terrain(11, 3000.0, 30) == generate_terrain(11, 3000.0, 30)
    assert generate_terrain(11, 3000.0, 30) != generate_terrain(12, 3000.0, 30)


def test_generate_terrain_placement_failure():
    # 100 buildings of 150 m cannot fit in a 500 m square
    with pytest.raises(PlacementError):
        generate_terrain(0, 500.0, 100, 150.0, max_attempts=2000)


def test_generate_terrain_rejects_bad_args():
    with pytest.raises(ValueError):
        generate_terrain(0, 100.0, 1, footprint=150.0)
    with pytest.raises(ValueError):
        generate_terrain(0, 1000.0, 1, height_range=(70.0, 30.0))


def test_scenario_gus_outside_footprints():
    s = generate_scenario(5)
    assert s.n_gus == 80 and s.n_abs == 10 and s.grid_k == 20
    assert not s.terrain.inside_any_footprint(s.gus).any()
    with pytest.raises(ValueError):
        Scenario([(500.0, 500.0)], [], TerrainMap(1000.0, (Building(500, 500, 50, 50, 30),)))
    with pytest.raises(ValueError):
        Scenario(np.zeros((0, 2)), [], TerrainMap(1000.0))


def test_scenario_json_round_trip(tmp_path):
    s = generate_scenario(3, n_gus=12, n_abs=3, region_side=1000.0, n_buildings=4)
    path = tmp_path / "s.json"
    s.save(path)
    back = Scenario.load(path)
    np.testing.assert_array_equal(back.gus, s.gus)
    np.testing.assert_array_equal(back.abss, s.abss)
    assert back.terrain == s.terrain
    assert back.grid_k == s.grid_k
    assert back.radio.gain_threshold == pytest.approx(s.radio.gain_threshold, rel=1e-12)
    assert set(s.to_dict()) >= {"region_side", "buildings", "gus", "abss", "radio", "K"}
    assert set(s.to_dict()["radio"]) == {"fc_hz", "H_m", "P_w", "sigma2_w", "gamma_db", "nlos_db"}
    assert set(s.to_dict()["buildings"][0]) == {"cx", "cy", "hx", "hy", "h"}


# --- occlusion ------------------------------------------------------------

def _wall(height):
    # x in [100, 200], y in [25, 175]; GU at (0, 100), ABS at (300, 100)
    return TerrainMap(1000.0, (Building(150.0, 100.0, 50.0, 75.0, height),))


def test_los_blocked_tall_building():
    # the ray is at height 0.3 x, below 50 m for x < 166.7
    assert los_blocked((300.0, 100.0), 90.0, (0.0, 100.0), _wall(50.0))


def test_los_clear_over_short_building():
    # the ray is at least 30 m high over the footprint
    assert not los_blocked((300.0, 100.0), 90.0, (0.0, 100.0), _wall(20.0))


def test_los_vertical_segment_never_blocked():
    t = generate_terrain(2, 3000.0, 30)
    s = generate_scenario(2)
    for g in s.gus:
        assert not los_blocked(g, 90.0, g, t)


def test_los_grazing_face_is_not_blocked():
    # segment runs exactly along the face y = 25: touches, does not enter
    assert not los_blocked((300.0, 25.0), 90.0, (0.0, 25.0), _wall(50.0))
    assert los_blocked((300.0, 25.001), 90.0, (0.0, 25.001), _wall(50.0))


def test_los_matches_sampling_oracle_small(rng):
    t = generate_terrain(4, 1000.0, 8, 120.0, (30.0, 70.0))
    for _ in range(300):
        g = rng.uniform(0, 1000, 2)
        if t.inside_any_footprint(g)[0]:
            continue
        a = rng.uniform(0, 1000, 2)
        assert los_blocked(a, 90.0, g, t) == oracles.sampled_blocked(g, a, 90.0, t.boxes)


def test_los_blocked_many_matches_scalar(rng):
    s = generate_scenario(9, n_gus=50, region_side=1500.0, n_buildings=12)
    a = np.array([700.0, 800.0])
    many = los_blocked_many(a, 90.0, s.gus, s.terrain)
    single = [los_blocked(a, 90.0, g, s.terrain) for g in s.gus]
    assert many.tolist() == single


# --- channel --------------------------------------------------------------

def test_beta0_at_2ghz(radio):
    assert radio.beta0 == pytest.approx(oracles.beta0(2e9), rel=1e-12)
    assert radio.beta0 == pytest.approx(1.4249e-4, rel=1e-4)
    assert linear_to_db(radio.beta0) == pytest.approx(-38.46, abs=0.005)


def test_gain_directly_below(radio):
    g = gain_los((100.0, 100.0), (100.0, 100.0), radio)
    assert g == pytest.approx(1.759e-8, rel=1e-3)
    assert linear_to_db(g) == pytest.approx(-77.55, abs=0.005)


def test_gain_decreasing_in_distance(radio):
    d = np.linspace(0, 2000, 201)
    pts = np.stack([d, np.zeros_like(d)], axis=1)
    g = gain_los(pts, (0.0, 0.0), radio)
    assert np.all(np.diff(g) < 0)


def test_default_threshold_is_minus_93_db(radio):
    assert linear_to_db(radio.gain_threshold) == pytest.approx(-93.0, abs=1e-9)


def test_coverage_range_reference_value(radio):
    assert coverage_range(radio) == pytest.approx(525.6, abs=0.5)


def test_coverage_range_identities():
    r = RadioParams()
    at_zero = RadioParams.with_gain_threshold_db(linear_to_db(r.beta0 / r.altitude ** 2))
    assert coverage_range(at_zero) == pytest.approx(0.0, abs=1e-3)
    at_h = RadioParams.with_gain_threshold_db(linear_to_db(r.beta0 / (2 * r.altitude ** 2)))
    assert coverage_range(at_h) == pytest.approx(90.0, rel=1e-9)
    with pytest.raises(InfeasibleAltitudeError):
        coverage_range(RadioParams.with_gain_threshold_db(-70.0))


@pytest.mark.parametrize("reach", [50.0, 100.0, 525.0, 1500.0])
def test_coverage_range_round_trip(reach):
    r = RadioParams.for_coverage_range(reach)
    D = coverage_range(r)
    assert D == pytest.approx(reach, rel=1e-9)
    g = gain_los((D, 0.0), (0.0, 0.0), r)
    assert abs(g - r.gain_threshold) / r.gain_threshold < 1e-9


def test_site_specific_gain_branches(radio):
    t = _wall(50.0)
    clear = gain_site_specific((300.0, 100.0), (0.0, 100.0), radio, _wall(20.0))
    assert clear == gain_los((300.0, 100.0), (0.0, 100.0), radio)
    blocked = gain_site_specific((300.0, 100.0), (0.0, 100.0), radio, t)
    assert blocked == pytest.approx(gain_los((300.0, 100.0), (0.0, 100.0), radio) * 1e-2,
                                    rel=1e-12)
    no_excess = RadioParams(nlos_excess_db=0.0)
    assert gain_site_specific((300.0, 100.0), (0.0, 100.0), no_excess, t) == \
        gain_los((300.0, 100.0), (0.0, 100.0), no_excess)


# --- coverage -------------------------------------------------------------

def test_indicator_disk_boundary_cases(radio):
    D = coverage_range(radio)
    t = TerrainMap(3000.0)
    s = Scenario([(100.0, 100.0)], [(100.0, 100.0)], t, radio)
    assert coverage_indicator_disk(0, s) == 1
    s = Scenario([(100.0, 100.0)], [(100.0 + D + 1.0, 100.0)], t, radio)
    assert coverage_indicator_disk(0, s) == 0
    # exactly at distance D is covered (non-strict)
    s = Scenario([(0.0, 0.0)], [(D, 0.0)], t, radio)
    assert float(np.hypot(*s.abss[0])) == D
    assert coverage_indicator_disk(0, s) == 1


def test_bitmap_single_covered_gu(radio):
    s = Scenario([(620.0, 130.0)], [(600.0, 100.0)], TerrainMap(1000.0), radio, grid_k=5)
    F = coverage_bitmap(s, "disk")
    expected = np.zeros((5, 5), dtype=int)
    expected[3, 0] = 1
    np.testing.assert_array_equal(F, expected)


def test_bitmap_no_abs_in_range(radio):
    s = Scenario([(10.0, 10.0), (50.0, 20.0)], [(2900.0, 2900.0)], TerrainMap(3000.0), radio)
    assert coverage_bitmap(s, "disk").sum() == 0
    assert coverage_bitmap(s, "terrain").sum() == 0


def test_empty_abs_list(radio):
    s = Scenario([(10.0, 10.0)], [], TerrainMap(3000.0), radio)
    assert coverage_rate(coverage_bitmap(s, "disk"), 1) == 0.0
    assert coverage_rate(coverage_bitmap(s, "terrain"), 1) == 0.0


def test_grid_upper_edge_clamped():
    i, j = grid_cells(np.array([[1000.0, 0.0], [999.99, 500.0], [0.0, 1000.0]]), 1000.0, 4)
    assert i.tolist() == [3, 3, 0]
    assert j.tolist() == [0, 2, 3]


def test_terrain_blocks_cover(small_scenario):
    # the building at x in [450, 550] hides GU 0 from the ABS at x = 650
    disk = coverage_indicators(small_scenario, "disk")
    terr = coverage_indicators(small_scenario, "terrain")
    assert disk.tolist() == [1, 1, 0]
    assert terr.tolist() == [0, 1, 0]


def test_coverage_rate_values():
    F = np.zeros((20, 20), dtype=int)
    assert coverage_rate(F, 80) == 0.0
    F[3, 4] = 75
    assert coverage_rate(F, 80) == 0.9375
    F[3, 4] = 80
    assert coverage_rate(F, 80) == 1.0
    with pytest.raises(ValueError):
        coverage_rate(F + 1, 80)


def _random_small(seed):
    rng = np.random.default_rng(seed)
    L = 1000.0
    t = generate_terrain(seed, L, int(rng.integers(0, 6)), 120.0, (30.0, 80.0))
    from absplace.terrain import place_gus
    gus = place_gus(rng, int(rng.integers(1, 13)), t)
    abss = rng.uniform(0, L, size=(int(rng.integers(1, 4)), 2))
    radio = RadioParams.for_coverage_range(float(rng.uniform(100, 500)),
                                           nlos_excess_db=float(rng.uniform(0, 15)))
    return Scenario(gus, abss, t, radio, grid_k=5)


@pytest.mark.parametrize("seed", range(40))
def test_early_exit_matches_exhaustive(seed):
    s = _random_small(seed)
    covered = coverage_indicators(s, "terrain")
    ref = oracles.exhaustive_terrain(
        s, lambda a, g: oracles.sampled_blocked(g, a, s.radio.altitude, s.terrain.boxes))
    np.testing.assert_array_equal(covered, ref)
    F = coverage_bitmap(s, "terrain")
    np.testing.assert_array_equal(F, oracles.bitmap_by_loops(s.gus, ref, s.region_side, 5))
    disk = coverage_indicators(s, "disk")
    np.testing.assert_array_equal(disk, oracles.exhaustive_disk(s.gus, s.abss,
                                                                coverage_range(s.radio)))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_dominance_and_conservation(seed):
    s = _random_small(seed)
    disk = coverage_bitmap(s, ChannelModel.DISK)
    terr = coverage_bitmap(s, ChannelModel.TERRAIN)
    assert terr.sum() <= disk.sum()
    assert np.all(terr <= disk)
    assert disk.sum() == coverage_indicators(s, "disk").sum()
    cells = oracles.bitmap_by_loops(s.gus, np.ones(s.n_gus, dtype=int), s.region_side, 5)
    assert np.all(disk <= cells)


def test_best_gains_consistent_with_indicators():
    s = generate_scenario(21, n_gus=40, n_abs=4, region_side=1500.0, n_buildings=10)
    for model in ("disk", "terrain"):
        g = best_gains(s, model)
        cov = coverage_indicators(s, model)
        if model == "terrain":
            np.testing.assert_array_equal(cov, (g >= s.radio.gain_threshold).astype(int))
        assert g.shape == (s.n_gus,)
    assert math.isclose(best_gains(s, "disk").max(),
                        max(oracles.los_gain(a, gu, 2e9, 90.0) for a in s.abss for gu in s.gus))
