"""Discrete-window world dynamics, observation encoding, and rewards."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swarmops.core import Point2D, Request, Scenario, ScenarioConfig
from swarmops.energy import RouteEnergyModel
from swarmops.environment import (DroneState, ObservationScales, RewardScales,
                                  SimulationError, WindowDecision, WorldState,
                                  advance_window, area_delay_summaries,
                                  default_observation_scales, default_reward_scales,
                                  delay, initial_state, observation_dim, observe,
                                  reward, run_episode)
from swarmops.experiments import derive_seed
from swarmops.planner import Plan, PlannerContext, cost_plan
from swarmops.segmentation import grid_segment


def small_scenario(**overrides) -> Scenario:
    defaults = dict(num_depots=4, num_drones=2, num_windows=4, k_neighbors=2,
                    requests_per_window=3, cluster_count=2, rng_seed=5)
    defaults.update(overrides)
    return Scenario(config=ScenarioConfig(**defaults))


def make_plan(ctx: PlannerContext, drone: int, start: int, end: int,
              customers: list[Request]) -> Plan:
    plan = cost_plan(ctx, drone, start, end, customers)
    assert plan is not None
    return plan


@pytest.fixture
def world():
    sc = small_scenario()
    smap = grid_segment(sc.config.map_bounds, sc.config.num_depots,
                        k_neighbors=sc.config.k_neighbors)
    reqs = [
        Request(1, Point2D(2500.0, 2400.0), 0.5, 1),
        Request(2, Point2D(7500.0, 2600.0), 0.4, 1),
        Request(3, Point2D(2500.0, 7400.0), 0.6, 2),
    ]
    ctx = PlannerContext.build(sc, smap, reqs)
    state = initial_state(sc, smap, reqs)
    return sc, smap, reqs, ctx, state


class TestDelay:
    def test_two_windows_late(self):
        assert delay(3, 1, True, 1800.0) == pytest.approx(1.0)

    def test_not_yet_due(self):
        assert delay(2, 5, True, 1800.0) == 0.0

    def test_delivered_scores_zero(self):
        assert delay(9, 1, False, 1800.0) == 0.0


class TestAdvance:
    def test_identity_dynamics(self, world):
        sc, smap, reqs, ctx, state = world
        nxt = advance_window(state, [], reqs)
        assert nxt.window == 2
        assert set(nxt.pending) == {1, 2, 3}  # request 3 arrives at window 2
        assert nxt.delivered == set()

    def test_serve_and_arrive(self, world):
        sc, smap, reqs, ctx, state = world
        plan = make_plan(ctx, 0, 0, 0, [reqs[0]])
        nxt = advance_window(state, [plan], reqs)
        assert set(nxt.pending) == {2, 3}
        assert nxt.delivered == {1}

    def test_double_service_rejected(self, world):
        sc, smap, reqs, ctx, state = world
        p0 = make_plan(ctx, 0, 0, 0, [reqs[0]])
        p1 = make_plan(ctx, 1, 0, 0, [reqs[0]])
        with pytest.raises(SimulationError, match="two routes"):
            advance_window(state, [p0, p1], reqs)

    def test_drones_relocate_and_recharge(self):
        # 5 km map keeps neighbouring depots inside the flight range
        sc = small_scenario(map_bounds=(5000.0, 5000.0), num_drones=1)
        smap = grid_segment(sc.config.map_bounds, 4, k_neighbors=2)
        ctx = PlannerContext.build(sc, smap, [])
        state = initial_state(sc, smap, [])
        state.drones[0].battery = 0.4
        plan = make_plan(ctx, 0, 0, 1, [])
        nxt = advance_window(state, [plan], [])
        assert nxt.drones[0].area == 1
        assert nxt.drones[0].battery == 1.0


class TestObservation:
    def test_empty_world_zero_summaries(self, world):
        sc, smap, reqs, ctx, state = world
        state.pending.clear()
        scales = default_observation_scales(sc)
        obs = observe(state, 0, smap, sc.config.window_hours, ctx.request_areas, scales)
        vec = obs.vector()
        n = smap.num_areas
        k1 = 1 + sc.config.k_neighbors
        assert vec[:n].sum() == 1.0  # own-area one-hot survives
        assert np.all(vec[n + 1:n + 1 + 3 * k1] == 0.0)
        # crowding tail still sees the other drone, scaled by fleet size
        crowd = vec[n + 1 + 3 * k1:]
        assert crowd.sum() == pytest.approx(1.0 / sc.config.num_drones)

    def test_crowding_excludes_observer(self, world):
        sc, smap, reqs, ctx, state = world
        scales = default_observation_scales(sc)
        state.drones[1] = DroneState(area=state.drones[0].area)
        obs0 = observe(state, 0, smap, sc.config.window_hours, ctx.request_areas, scales)
        assert obs0.crowding[0] == 1  # the colocated teammate, not itself
        assert sum(obs0.crowding[1:]) == 0

    def test_full_battery_encoded(self, world):
        sc, smap, reqs, ctx, state = world
        scales = default_observation_scales(sc)
        obs = observe(state, 0, smap, sc.config.window_hours, ctx.request_areas, scales)
        assert obs.vector()[smap.num_areas] == 1.0

    def test_identical_states_identical_vectors(self, world):
        sc, smap, reqs, ctx, state = world
        scales = default_observation_scales(sc)
        a = observe(state, 0, smap, sc.config.window_hours, ctx.request_areas, scales)
        b = observe(state, 0, smap, sc.config.window_hours, ctx.request_areas, scales)
        assert np.array_equal(a.vector(), b.vector())

    def test_vector_length(self, world):
        sc, smap, reqs, ctx, state = world
        scales = default_observation_scales(sc)
        obs = observe(state, 0, smap, sc.config.window_hours, ctx.request_areas, scales)
        assert len(obs.vector()) == observation_dim(smap.num_areas, sc.config.k_neighbors)

    def test_summaries_reflect_delay(self, world):
        sc, smap, reqs, ctx, state = world
        state.window = 3  # requests 1 and 2 are now two windows late
        summaries = area_delay_summaries(state, smap, sc.config.window_hours,
                                         ctx.request_areas)
        a1 = ctx.request_areas[1]
        assert summaries[a1].delay_sum == pytest.approx(1.0)
        assert summaries[a1].pending_count == 1
        assert summaries[a1].delay_max == pytest.approx(1.0)


class TestReward:
    SCALES = RewardScales(delay_scale_hours=5.0, energy_scale_joules=40_000.0)

    def test_alpha_zero_ignores_energy(self):
        a = reward(0.0, 2.0, 10_000.0, self.SCALES)
        b = reward(0.0, 2.0, 35_000.0, self.SCALES)
        assert a == b

    def test_alpha_one_ignores_delay(self):
        a = reward(1.0, 0.5, 20_000.0, self.SCALES)
        b = reward(1.0, 4.5, 20_000.0, self.SCALES)
        assert a == b

    def test_centred_point_is_minus_half(self):
        assert reward(0.3, 0.0, 0.0, self.SCALES) == pytest.approx(-0.5)

    def test_strictly_inside_unit_band(self):
        for alpha in (0.0, 0.25, 0.5, 1.0):
            for d in (0.0, 1.0, 50.0):
                for e in (0.0, 30_000.0, 500_000.0):
                    r = reward(alpha, d, e, self.SCALES)
                    assert -1.0 < r < 0.0

    def test_worse_delay_worse_reward(self):
        assert reward(0.5, 3.0, 0.0, self.SCALES) < reward(0.5, 1.0, 0.0, self.SCALES)


class _IdleController:
    """Emits a stay-at-depot plan for every drone, never serving anyone."""

    def __init__(self, ctx: PlannerContext) -> None:
        self.ctx = ctx

    def decide(self, state):
        routes = [make_plan(self.ctx, u, d.area, d.area, [])
                  for u, d in enumerate(state.drones)]
        return WindowDecision(routes=routes)

    def boundary_observations(self, state):
        return [], []


class TestRunEpisode:
    def test_zero_drones_accumulate_delay(self):
        sc = small_scenario(num_drones=0, requests_per_window=2, num_windows=3)
        smap = grid_segment(sc.config.map_bounds, 4, k_neighbors=2)
        reqs = [Request(1, Point2D(100.0, 100.0), 0.5, 1),
                Request(2, Point2D(200.0, 200.0), 0.5, 1)]
        ctx = PlannerContext.build(sc, smap, reqs)
        model = ctx.energy
        metrics, _ = run_episode(sc, smap, reqs, _IdleController(ctx),
                                 battery_capacity_j=model.battery_capacity(),
                                 reward_scales=default_reward_scales(sc, model.battery_capacity()))
        assert metrics.total_energy_j == 0.0
        # both requests pend for windows 2 and 3: (0.5 + 1.0) h each
        assert metrics.delay_sum_hours == pytest.approx(3.0)
        assert metrics.delivered_count == 0

    def test_forced_optimum_single_request(self):
        sc = small_scenario(num_drones=1, num_windows=2)
        smap = grid_segment(sc.config.map_bounds, 4, k_neighbors=2)
        reqs = [Request(1, smap.depots[0], 0.5, 1)]
        ctx = PlannerContext.build(sc, smap, reqs)
        model = ctx.energy

        class ServeNow:
            def decide(self, state):
                if 1 in state.pending:
                    return WindowDecision(routes=[make_plan(ctx, 0, 0, 0, reqs)])
                return WindowDecision(routes=[make_plan(ctx, 0, 0, 0, [])])

            def boundary_observations(self, state):
                return [], []

        metrics, _ = run_episode(sc, smap, reqs, ServeNow(),
                                 battery_capacity_j=model.battery_capacity(),
                                 reward_scales=default_reward_scales(sc, model.battery_capacity()))
        assert metrics.delivered_count == 1
        assert metrics.avg_delay_hours == 0.0

    def test_battery_invariant_violation_raises(self):
        sc = small_scenario(num_drones=1)
        smap = grid_segment(sc.config.map_bounds, 4, k_neighbors=2)
        reqs = [Request(1, Point2D(9000.0, 9000.0), 0.5, 1)]
        ctx = PlannerContext.build(sc, smap, reqs, unrestricted=True)

        class Overreach:
            def decide(self, state):
                if 1 in state.pending:
                    return WindowDecision(routes=[make_plan(ctx, 0, 0, 0, reqs)])
                return WindowDecision(routes=[make_plan(ctx, 0, 0, 0, [])])

            def boundary_observations(self, state):
                return [], []

        model = ctx.energy
        with pytest.raises(SimulationError, match="exceeds battery"):
            run_episode(sc, smap, reqs, Overreach(),
                        battery_capacity_j=model.battery_capacity(),
                        reward_scales=default_reward_scales(sc, model.battery_capacity()))

    def test_determinism(self, world):
        sc, smap, reqs, ctx, _ = world
        model = ctx.energy

        def run_once():
            metrics, _ = run_episode(sc, smap, reqs, _IdleController(ctx),
                                     battery_capacity_j=model.battery_capacity(),
                                     reward_scales=default_reward_scales(
                                         sc, model.battery_capacity()))
            return metrics

        a, b = run_once(), run_once()
        assert a.delay_sum_hours == b.delay_sum_hours
        assert a.total_energy_j == b.total_energy_j


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_conservation_random_worlds(seed):
    """delivered + pending + not-yet-arrived = total, at every window."""
    from swarmops.core import generate_synthetic
    sc = small_scenario(rng_seed=seed, num_windows=3, requests_per_window=4)
    smap = grid_segment(sc.config.map_bounds, sc.config.num_depots,
                        k_neighbors=sc.config.k_neighbors)
    reqs = generate_synthetic(sc.config)
    state = initial_state(sc, smap, reqs)
    total = len(reqs)
    for _ in range(sc.config.num_windows):
        future = sum(1 for r in reqs if r.demand_window > state.window)
        assert len(state.delivered) + len(state.pending) + future == total
        state = advance_window(state, [], reqs)


def test_seed_streams_are_distinct():
    assert derive_seed(0, 1) != derive_seed(0, 2)
    assert derive_seed(0, 1, 5) != derive_seed(1, 1, 5)
    assert derive_seed(3, 2, 9) == derive_seed(3, 2, 9)
