"""Scenario configuration, request I/O, and synthetic demand generation."""

import math

import pytest

from swarmops.core import (DroneSpec, Point2D, Request, Scenario, ScenarioConfig,
                           ScenarioError, euclidean_distance, generate_synthetic,
                           load_requests, read_scenario_file, scenario_from_mapping,
                           write_requests_csv, write_scenario_file)


class TestDistance:
    def test_pythagorean_triple(self):
        assert euclidean_distance(Point2D(0, 0), Point2D(3, 4)) == 5.0

    def test_identity(self):
        assert euclidean_distance(Point2D(2.5, -1), Point2D(2.5, -1)) == 0.0

    def test_unit_diagonal(self):
        assert euclidean_distance(Point2D(0, 0), Point2D(1, 1)) == pytest.approx(math.sqrt(2))


class TestValidation:
    def test_negative_mass(self):
        with pytest.raises(ScenarioError):
            Request(1, Point2D(0, 0), -0.5, 1)

    def test_demand_window_floor(self):
        with pytest.raises(ScenarioError):
            Request(1, Point2D(0, 0), 0.5, 0)

    def test_alpha_range(self):
        with pytest.raises(ScenarioError):
            ScenarioConfig(alpha=1.5)

    def test_action_count(self):
        assert ScenarioConfig(k_neighbors=3).action_count == 4

    def test_window_hours(self):
        assert ScenarioConfig(window_duration=1800.0).window_hours == 0.5

    def test_drone_empty_mass(self):
        assert DroneSpec().empty_mass == pytest.approx(3.0)


class TestRequestCsv:
    def test_header_only(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("id,x_m,y_m,parcel_mass_kg,demand_window\n")
        assert load_requests(p, ScenarioConfig(), DroneSpec()) == []

    def test_single_row(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("id,x_m,y_m,parcel_mass_kg,demand_window\n1,5000,5000,1.0,3\n")
        (req,) = load_requests(p, ScenarioConfig(), DroneSpec())
        assert req.id == 1
        assert (req.location.x, req.location.y) == (5000.0, 5000.0)
        assert req.parcel_mass == 1.0
        assert req.demand_window == 3

    def test_duplicate_id_named_in_error(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("id,x_m,y_m,parcel_mass_kg,demand_window\n"
                     "7,100,100,0.5,1\n7,200,200,0.5,2\n")
        with pytest.raises(ScenarioError, match="7"):
            load_requests(p, ScenarioConfig(), DroneSpec())

    def test_out_of_bounds_rejected(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("id,x_m,y_m,parcel_mass_kg,demand_window\n1,10001,0,0.5,1\n")
        with pytest.raises(ScenarioError, match="row 2"):
            load_requests(p, ScenarioConfig(), DroneSpec())

    def test_mass_beyond_payload_rejected(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("id,x_m,y_m,parcel_mass_kg,demand_window\n1,100,100,2.6,1\n")
        with pytest.raises(ScenarioError):
            load_requests(p, ScenarioConfig(), DroneSpec())

    def test_round_trip(self, tmp_path):
        cfg = ScenarioConfig(rng_seed=11)
        reqs = generate_synthetic(cfg)
        p = tmp_path / "r.csv"
        write_requests_csv(reqs, p)
        back = load_requests(p, cfg, DroneSpec())
        assert back == reqs


class TestSynthetic:
    def test_deterministic(self):
        cfg = ScenarioConfig(rng_seed=7)
        assert generate_synthetic(cfg) == generate_synthetic(cfg)

    def test_zero_rate(self):
        assert generate_synthetic(ScenarioConfig(requests_per_window=0)) == []

    def test_exact_window_counts(self):
        cfg = ScenarioConfig(num_windows=12, requests_per_window=40)
        reqs = generate_synthetic(cfg)
        assert len(reqs) == 480
        for t in range(1, 13):
            assert sum(1 for r in reqs if r.demand_window == t) == 40

    def test_under_bounds_and_mass_range(self):
        cfg = ScenarioConfig(rng_seed=5)
        for r in generate_synthetic(cfg):
            assert 0.0 <= r.location.x <= cfg.map_bounds[0]
            assert 0.0 <= r.location.y <= cfg.map_bounds[1]
            lo, hi = cfg.parcel_mass_range
            assert lo <= r.parcel_mass <= hi

    def test_seed_changes_layout(self):
        a = generate_synthetic(ScenarioConfig(rng_seed=1))
        b = generate_synthetic(ScenarioConfig(rng_seed=2))
        assert a != b


class TestScenarioFile:
    def test_round_trip(self, tmp_path):
        sc = Scenario(config=ScenarioConfig(num_depots=9, alpha=0.25, rng_seed=99))
        p = tmp_path / "s.cfg"
        write_scenario_file(sc, p)
        back = read_scenario_file(p)
        assert back == sc

    def test_unknown_key_line_number(self, tmp_path):
        p = tmp_path / "s.cfg"
        p.write_text("num_depots = 4\nbogus_key = 1\n")
        with pytest.raises(ScenarioError, match="line 2"):
            read_scenario_file(p)

    def test_bad_value(self, tmp_path):
        p = tmp_path / "s.cfg"
        p.write_text("num_drones = eight\n")
        with pytest.raises(ScenarioError):
            read_scenario_file(p)

    def test_comments_and_blanks_ignored(self, tmp_path):
        p = tmp_path / "s.cfg"
        p.write_text("# fleet\n\nnum_drones = 3\n")
        assert read_scenario_file(p).config.num_drones == 3

    def test_mapping_defaults(self):
        sc = scenario_from_mapping({})
        assert sc == Scenario.default()
