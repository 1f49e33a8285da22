"""Method harness: metrics, normalization, reports, and policy lifecycle."""

import json
import math

import jsonschema
import numpy as np
import pytest

from swarmops.core import (Point2D, Request, Scenario, ScenarioConfig,
                           ScenarioError)
from swarmops.experiments import (CO2_GRAMS_PER_KWH, LEARNED_METHODS,
                                  CompareResult, MethodId, MetricsReport,
                                  NormalizationBounds, build_report,
                                  build_timing, combined_cost, compare_methods,
                                  derive_seed, early_arrival,
                                  fill_combined_costs, gini, load_policy,
                                  method_service_map, run_method, save_policy,
                                  train_policy)
from swarmops.learning import LearningConfig
from swarmops.planner import PlannerContext, cost_plan
from swarmops.segmentation import grid_segment


def tiny_scenario(**overrides) -> Scenario:
    defaults = dict(map_bounds=(5000.0, 5000.0), num_depots=4, num_drones=2,
                    num_windows=3, k_neighbors=2, requests_per_window=2,
                    cluster_count=2, rng_seed=21)
    defaults.update(overrides)
    return Scenario(config=ScenarioConfig(**defaults))


def pairwise_gini(values):
    """Mean-absolute-difference oracle."""
    xs = [float(v) for v in values]
    n = len(xs)
    mu = sum(xs) / n
    if mu == 0.0:
        return 0.0
    return sum(abs(a - b) for a in xs for b in xs) / (2.0 * n * n * mu)


class TestGini:
    def test_equal_values_zero(self):
        assert gini([4.0, 4.0, 4.0]) == pytest.approx(0.0)

    def test_concentrated_vector(self):
        assert gini([1.0, 0.0, 0.0, 0.0]) == pytest.approx(0.75)

    def test_empty_and_all_zero(self):
        assert gini([]) == 0.0
        assert gini([0.0, 0.0]) == 0.0

    def test_matches_pairwise_oracle(self):
        rng = np.random.default_rng(31)
        for _ in range(50):
            xs = rng.uniform(0.0, 10.0, size=int(rng.integers(1, 9)))
            assert gini(xs) == pytest.approx(pairwise_gini(xs), abs=1e-12)

    def test_permutation_invariant(self):
        xs = [3.0, 1.0, 4.0, 1.0, 5.0]
        assert gini(xs) == pytest.approx(gini(list(reversed(xs))))

    def test_negative_rejected(self):
        with pytest.raises(ScenarioError, match="non-negative"):
            gini([1.0, -0.1])


class TestEarlyArrival:
    def test_on_time_is_zero(self):
        assert early_arrival([(1, 1), (2, 2)], 0.5) == 0.0

    def test_two_windows_early(self):
        assert early_arrival([(3, 1)], 0.5) == pytest.approx(1.0)

    def test_late_never_negative(self):
        assert early_arrival([(1, 4)], 0.5) == 0.0

    def test_empty(self):
        assert early_arrival([], 0.5) == 0.0

    def test_mean_over_deliveries(self):
        assert early_arrival([(3, 1), (1, 1)], 0.5) == pytest.approx(0.5)


def stub_report(method: str, energy: float, delay: float,
                per_rep_e=None, per_rep_d=None) -> MetricsReport:
    per_rep_e = per_rep_e if per_rep_e is not None else [energy]
    per_rep_d = per_rep_d if per_rep_d is not None else [delay]
    n = len(per_rep_e)
    return MetricsReport(
        method=method, repetitions=n,
        mean_energy_kj=energy, std_energy_kj=0.0,
        avg_delay_hours=delay, std_delay_hours=0.0,
        delay_unfairness=0.0, std_delay_unfairness=0.0,
        avg_early_arrival_hours=0.0, std_early_arrival_hours=0.0,
        avg_running_time_s=0.01, std_running_time_s=0.0,
        mean_co2_g=0.0, depot_load_kg=[0.0],
        per_rep={"mean_energy_kj": per_rep_e, "avg_delay_hours": per_rep_d,
                 "delay_unfairness": [0.0] * n,
                 "avg_early_arrival_hours": [0.0] * n,
                 "running_time_s": [0.01] * n},
    )


class TestCombinedCost:
    BOUNDS = NormalizationBounds(10.0, 20.0, 1.0, 3.0)

    def test_batch_best_is_zero(self):
        assert combined_cost(10.0, 1.0, self.BOUNDS) == 0.0

    def test_batch_worst_is_two(self):
        assert combined_cost(20.0, 3.0, self.BOUNDS) == 2.0

    def test_midpoint(self):
        assert combined_cost(15.0, 2.0, self.BOUNDS) == pytest.approx(1.0)

    def test_degenerate_component_contributes_nothing(self):
        flat = NormalizationBounds(10.0, 10.0, 1.0, 3.0)
        assert combined_cost(10.0, 3.0, flat) == pytest.approx(1.0)

    def test_fill_marks_extremes(self):
        reports = {"a": stub_report("a", 10.0, 3.0), "b": stub_report("b", 20.0, 1.0)}
        fill_combined_costs(reports)
        assert reports["a"].combined_cost == pytest.approx(1.0)
        assert reports["b"].combined_cost == pytest.approx(1.0)

    def test_fill_single_method_degenerates_to_zero(self):
        reports = {"only": stub_report("only", 42.0, 2.0)}
        fill_combined_costs(reports)
        assert reports["only"].combined_cost == 0.0
        assert reports["only"].std_combined_cost == 0.0


class TestServiceMaps:
    def test_squares_uses_grid(self):
        sc = tiny_scenario()
        smap = method_service_map(sc, MethodId.SQUARES)
        assert smap.kind == "grid"

    def test_mar_ops_uses_clustering_by_default(self):
        sc = tiny_scenario()
        smap = method_service_map(sc, MethodId.MAR_OPS)
        assert smap.kind == "kmeans"
        assert smap.num_areas == sc.config.num_depots

    def test_segmentation_override_applies_everywhere(self):
        sc = tiny_scenario(segmentation="grid")
        assert method_service_map(sc, MethodId.MAR_OPS).kind == "grid"

    def test_clustering_is_deterministic(self):
        sc = tiny_scenario()
        a = method_service_map(sc, MethodId.MAR_OPS)
        b = method_service_map(sc, MethodId.MAR_OPS)
        assert all(p.distance_to(q) == 0.0 for p, q in zip(a.depots, b.depots))


def forced_setup():
    """One drone, one request parked next to depot 0: unique sane outcome."""
    sc = tiny_scenario(num_drones=1, num_windows=2, num_depots=4)
    reqs = [Request(1, Point2D(1300.0, 1250.0), 0.5, 1)]
    return sc, reqs


class TestRunMethod:
    def test_global_serves_forced_instance(self):
        sc, reqs = forced_setup()
        report = run_method(MethodId.OPS_GLOBAL, sc, 2, requests_override=reqs)
        assert report.avg_delay_hours == 0.0
        smap = method_service_map(sc, MethodId.OPS_GLOBAL)
        ctx = PlannerContext.build(sc, smap, reqs, unrestricted=True)
        best = min(cost_plan(ctx, 0, 0, e, reqs).energy_j
                   for e in range(smap.num_areas))
        assert report.mean_energy_kj == pytest.approx(best / 1000.0)
        assert report.std_energy_kj == 0.0  # same dataset both reps

    def test_depot_load_accounts_delivered_mass(self):
        sc, reqs = forced_setup()
        report = run_method(MethodId.OPS_GLOBAL, sc, 1, requests_override=reqs)
        assert sum(report.depot_load_kg) == pytest.approx(0.5)
        assert report.depot_load_kg[0] == pytest.approx(0.5)

    def test_random_is_reproducible(self):
        sc = tiny_scenario()
        a = run_method(MethodId.OPS_RANDOM, sc, 2)
        b = run_method(MethodId.OPS_RANDOM, sc, 2)
        for key in ("mean_energy_kj", "avg_delay_hours", "delay_unfairness"):
            assert a.per_rep[key] == b.per_rep[key]
        assert a.mean_energy_kj == b.mean_energy_kj

    def test_reps_vary_through_derived_seeds(self):
        sc = tiny_scenario(requests_per_window=4)
        report = run_method(MethodId.OPS_RANDOM, sc, 3)
        delays = report.per_rep["avg_delay_hours"]
        assert len(set(delays)) > 1

    def test_learned_method_requires_policy(self):
        sc = tiny_scenario()
        with pytest.raises(ScenarioError, match="policy"):
            run_method(MethodId.MAR_OPS, sc, 1)

    def test_rejects_mismatched_policy(self):
        sc = tiny_scenario()
        cfg = LearningConfig(episodes=1, batch_size=4, hidden_size=8, seed=0)
        policy = train_policy(sc, MethodId.MAR_OPS, cfg)
        with pytest.raises(ScenarioError, match="trained for"):
            run_method(MethodId.SQUARES, sc, 1, policy=policy)

    def test_co2_follows_fleet_energy(self):
        sc, reqs = forced_setup()
        report = run_method(MethodId.OPS_GLOBAL, sc, 1, requests_override=reqs)
        fleet_kwh = report.mean_energy_kj * sc.config.num_drones / 3600.0
        assert report.mean_co2_g == pytest.approx(fleet_kwh * CO2_GRAMS_PER_KWH)

    def test_trace_rows_tagged(self):
        sc, reqs = forced_setup()
        sink: list[dict] = []
        run_method(MethodId.OPS_GLOBAL, sc, 2, requests_override=reqs,
                   trace_sink=sink)
        assert sink and all(r["method"] == "ops_global" for r in sink)
        assert {r["repetition"] for r in sink} == {0, 1}


class TestPolicyLifecycle:
    CFG = LearningConfig(episodes=2, batch_size=8, update_steps=1,
                         hidden_size=8, seed=3)

    def test_train_emits_curves(self):
        sc = tiny_scenario()
        policy = train_policy(sc, MethodId.MAR_OPS, self.CFG)
        assert policy.method is MethodId.MAR_OPS
        assert len(policy.curves) == 2
        assert policy.alpha == sc.config.alpha

    def test_save_load_round_trip(self, tmp_path):
        sc = tiny_scenario()
        policy = train_policy(sc, MethodId.SQUARES, self.CFG)
        path = tmp_path / "squares.json"
        save_policy(policy, path)
        loaded = load_policy(path)
        assert loaded.method is MethodId.SQUARES
        assert loaded.smap.kind == policy.smap.kind
        assert loaded.alpha == policy.alpha
        for p, q in zip(policy.actor.net.params(), loaded.actor.net.params()):
            assert np.allclose(p, q)

    def test_loaded_policy_evaluates_identically(self, tmp_path):
        sc = tiny_scenario()
        policy = train_policy(sc, MethodId.MAR_OPS, self.CFG)
        path = tmp_path / "m.json"
        save_policy(policy, path)
        a = run_method(MethodId.MAR_OPS, sc, 1, policy=policy)
        b = run_method(MethodId.MAR_OPS, sc, 1, policy=load_policy(path))
        assert a.mean_energy_kj == b.mean_energy_kj
        assert a.avg_delay_hours == b.avg_delay_hours

    def test_training_is_seed_deterministic(self):
        sc = tiny_scenario()
        p1 = train_policy(sc, MethodId.MAR_OPS, self.CFG)
        p2 = train_policy(sc, MethodId.MAR_OPS, self.CFG)
        for a, b in zip(p1.actor.net.params(), p2.actor.net.params()):
            assert np.array_equal(a, b)
        for r1, r2 in zip(p1.curves, p2.curves):
            assert r1.keys() == r2.keys()
            for k in r1:  # nan losses before the buffer fills compare unequal
                assert np.allclose(r1[k], r2[k], equal_nan=True)


class TestCompareAndReports:
    def test_compare_runs_all_methods(self):
        sc = tiny_scenario()
        cfg = LearningConfig(episodes=2, batch_size=8, update_steps=1,
                             hidden_size=8, seed=1)
        result = compare_methods(sc, 2, cfg)
        assert isinstance(result, CompareResult)
        assert set(result.reports) == {m.value for m in MethodId}
        assert set(result.policies) == {m.value for m in LEARNED_METHODS}
        costs = [r.combined_cost for r in result.reports.values()]
        assert all(c is not None and 0.0 <= c <= 2.0 for c in costs)
        report = build_report(sc, result.reports, kind="comparison")
        assert report["kind"] == "comparison"
        assert set(report["methods"]) == {m.value for m in MethodId}

    def test_report_is_schema_valid_and_time_free(self):
        sc, reqs = forced_setup()
        reports = {"ops_global": run_method(MethodId.OPS_GLOBAL, sc, 1,
                                            requests_override=reqs)}
        fill_combined_costs(reports)
        doc = build_report(sc, reports)
        as_text = json.dumps(doc)
        assert "running_time" not in as_text
        timing = build_timing(reports)
        assert timing["methods"]["ops_global"]["per_rep_running_time_s"]

    def test_report_rejects_bad_shape(self):
        sc, reqs = forced_setup()
        reports = {"ops_global": run_method(MethodId.OPS_GLOBAL, sc, 1,
                                            requests_override=reqs)}
        fill_combined_costs(reports)
        broken = build_report(sc, reports)
        del broken["scenario"]
        with pytest.raises(jsonschema.ValidationError):
            jsonschema.validate(broken,
                                __import__("swarmops.experiments",
                                           fromlist=["REPORT_SCHEMA"]).REPORT_SCHEMA)

    def test_derive_seed_separates_streams(self):
        assert derive_seed(21, 1, 0) != derive_seed(21, 2, 0)
        assert derive_seed(21, 1, 0) != derive_seed(22, 1, 0)
        assert derive_seed(21, 1, 3) == derive_seed(21, 1, 3)
