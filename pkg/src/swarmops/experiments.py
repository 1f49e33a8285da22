"""Method drivers, repeated evaluation, and cross-method reporting.

Five ways to run the same fleet:

* mar_ops     learned flight-range selection feeding the exact planner
* ops_global  no range restriction, whole-map shortlists, exact planner
* ops_random  uniformly random range selection, exact planner
* mappo       policy picks a concrete candidate plan, no exact cover
* squares     mar_ops machinery on the square-grid segmentation

Every method is evaluated over independent repetitions with derived
seeds; reports aggregate means and standard deviations per metric.
Wall-clock planning time is kept out of report.json (its bytes must be
reproducible) and written to a sibling timing file by the CLI.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Sequence

import jsonschema
import numpy as np

from .core import Request, Scenario, ScenarioError, generate_synthetic
from .energy import RouteEnergyModel
from .environment import (AreaDelaySummary, Controller, EpisodeMetrics, ObservationScales,
                          RewardScales, Transition, WindowDecision, WorldState,
                          area_delay_summaries, default_observation_scales,
                          default_reward_scales, observation_dim, observe, run_episode)
from .learning import (LearningConfig, LearningError, PolicyNetwork, TrainResult,
                       ValueNetwork, greedy_action, load_checkpoint, sample_action,
                       save_checkpoint, train_loop)
from .planner import (Plan, PlannerContext, build_plans, cost_plan, plan_window,
                      plan_window_global, top_delayed_candidates)
from .segmentation import ServiceMap, grid_segment, kmeans_segment


class MethodId(str, Enum):
    MAR_OPS = "mar_ops"
    OPS_GLOBAL = "ops_global"
    OPS_RANDOM = "ops_random"
    MAPPO = "mappo"
    SQUARES = "squares"


LEARNED_METHODS = (MethodId.MAR_OPS, MethodId.SQUARES, MethodId.MAPPO)

# Seed-stream tags so every random purpose draws from its own child seed.
_SEED_HISTORY = 101
_SEED_KMEANS = 102
_SEED_NET_INIT = 103
_SEED_SAMPLER = 104
_SEED_TRAIN_EP = 105
_SEED_EVAL = 106
_SEED_ACTION = 107
_SEED_VALIDATION = 108

# Policy selection during training: every so many episodes the current
# actor replays a fixed held-out set of days; the best scorer ships.
_VALIDATE_EVERY = 50
_VALIDATE_WARMUP = 100
_VALIDATION_DAYS = 6

CO2_GRAMS_PER_KWH = 125.0


def derive_seed(base: int, *words: int) -> int:
    """Stable child seed for a named random purpose."""
    return int(np.random.SeedSequence([base, *words]).generate_state(1)[0])


def method_service_map(scenario: Scenario, method: MethodId) -> ServiceMap:
    """Build the segmentation a method runs on, deterministically.

    The grid baseline partitions the map directly; everything else
    clusters a synthetic history day drawn from the scenario seed.
    """
    cfg = scenario.config
    if method is MethodId.SQUARES or cfg.segmentation == "grid":
        return grid_segment(cfg.map_bounds, cfg.num_depots, k_neighbors=cfg.k_neighbors)
    history_seed = derive_seed(cfg.rng_seed, _SEED_HISTORY)
    history = generate_synthetic(replace(cfg, rng_seed=history_seed),
                                 cluster_seed=cfg.rng_seed)
    points = [r.location for r in history]
    return kmeans_segment(points, cfg.num_depots, derive_seed(cfg.rng_seed, _SEED_KMEANS),
                          k_neighbors=cfg.k_neighbors)


@dataclass
class EvalSetup:
    """Shared per-evaluation plumbing: scales, energy model, capacity."""

    scenario: Scenario
    smap: ServiceMap
    battery_capacity_j: float
    reward_scales: RewardScales
    obs_scales: ObservationScales

    @classmethod
    def build(cls, scenario: Scenario, smap: ServiceMap) -> "EvalSetup":
        model = RouteEnergyModel(scenario.drone, scenario.constants)
        cap = model.battery_capacity()
        return cls(scenario=scenario, smap=smap, battery_capacity_j=cap,
                   reward_scales=default_reward_scales(scenario, cap),
                   obs_scales=default_observation_scales(scenario))


class ActionDriver:
    """Chooses one action per drone each window and remembers what the
    network actually saw (needed verbatim in the stored transitions)."""

    def __init__(self, n_actions: int, *, actor: PolicyNetwork | None = None,
                 rng: np.random.Generator | None = None, greedy: bool = False) -> None:
        self.n_actions = n_actions
        self.actor = actor
        self.rng = rng
        self.greedy = greedy
        self._hidden: dict[int, np.ndarray] = {}

    def act(self, drone: int, obs_vec: np.ndarray,
            mask: np.ndarray | None = None) -> tuple[int, np.ndarray]:
        if self.actor is None:
            if self.rng is None:
                raise ScenarioError("random action driver needs an rng")
            if mask is not None:
                legal = np.flatnonzero(mask > 0)
                return int(self.rng.choice(legal)), obs_vec
            return int(self.rng.integers(self.n_actions)), obs_vec
        h_prev = self._hidden.get(drone) if self.actor.recurrent else None
        if self.actor.recurrent and h_prev is None:
            h_prev = self.actor.initial_hidden()
        net_input = self.actor.network_input(obs_vec, h_prev)
        probs, h_new = self.actor.step(obs_vec, h_prev, mask)
        if self.actor.recurrent:
            self._hidden[drone] = h_new
        if self.greedy or self.rng is None:
            return greedy_action(probs), net_input
        return sample_action(probs, self.rng), net_input

    def peek_input(self, drone: int, obs_vec: np.ndarray) -> np.ndarray:
        """Network input for a boundary observation without stepping."""
        if self.actor is None or not self.actor.recurrent:
            return obs_vec
        h_prev = self._hidden.get(drone)
        if h_prev is None:
            h_prev = self.actor.initial_hidden()
        return self.actor.network_input(obs_vec, h_prev)


class RangeSelectionController:
    """Pick a destination area per drone, then plan with the exact solver."""

    def __init__(self, setup: EvalSetup, ctx: PlannerContext, driver: ActionDriver,
                 request_areas: dict[int, int], *, collect_observations: bool) -> None:
        self.setup = setup
        self.ctx = ctx
        self.driver = driver
        self.request_areas = request_areas
        self.collect_observations = collect_observations

    def decide(self, state: WorldState) -> WindowDecision:
        smap = self.setup.smap
        cfg = self.setup.scenario.config
        summaries = area_delay_summaries(state, smap, cfg.window_hours, self.request_areas)
        actions: list[int] = []
        inputs: list[np.ndarray] = []
        starts: list[int] = []
        targets: list[int] = []
        for u, drone in enumerate(state.drones):
            obs = observe(state, u, smap, cfg.window_hours, self.request_areas,
                          self.setup.obs_scales, summaries)
            action, net_input = self.driver.act(u, obs.vector())
            choices = smap.action_targets(drone.area)
            actions.append(action)
            inputs.append(net_input)
            starts.append(drone.area)
            targets.append(choices[action])
        routes = plan_window(self.ctx, state.pending, state.window, starts, targets)
        # Shared team reward: every drone answers for the whole map.
        everything = set(range(smap.num_areas))
        return WindowDecision(
            routes=routes,
            actions=actions,
            observations=inputs if self.collect_observations else None,
            reward_areas=[everything] * len(state.drones),
        )

    def boundary_observations(self, state: WorldState) -> tuple[list[np.ndarray], list[np.ndarray]]:
        cfg = self.setup.scenario.config
        summaries = area_delay_summaries(state, self.setup.smap, cfg.window_hours,
                                         self.request_areas)
        out = []
        for u in range(len(state.drones)):
            obs = observe(state, u, self.setup.smap, cfg.window_hours, self.request_areas,
                          self.setup.obs_scales, summaries)
            out.append(self.driver.peek_input(u, obs.vector()))
        return out, []


class GlobalPlanController:
    """No range choice at all: shortlist over the whole map every window."""

    def __init__(self, setup: EvalSetup, ctx: PlannerContext,
                 request_areas: dict[int, int]) -> None:
        self.setup = setup
        self.ctx = ctx
        self.request_areas = request_areas

    def decide(self, state: WorldState) -> WindowDecision:
        starts = [d.area for d in state.drones]
        routes = plan_window_global(self.ctx, state.pending, state.window, starts)
        return WindowDecision(routes=routes)

    def boundary_observations(self, state: WorldState) -> tuple[list[np.ndarray], list[np.ndarray]]:
        return [], []


# The plan-choice baseline pads its action space to a fixed size and
# appends this many numbers per candidate plan to the observation.
PLAN_FEATURE_DIM = 4


def mappo_action_count(scenario: Scenario) -> int:
    return 1 << scenario.config.max_parcels_per_drone


def mappo_observation_dim(scenario: Scenario, smap: ServiceMap) -> int:
    base = observation_dim(smap.num_areas, scenario.config.k_neighbors)
    return base + mappo_action_count(scenario) * PLAN_FEATURE_DIM


class PlanChoiceController:
    """Baseline without the exact cover: the policy picks one plan index.

    Candidate plans come from the drone's own plus neighboring areas,
    start at its depot, and end at the depot nearest their last stop.
    Conflicts between drones are settled in index order by stripping
    already-served customers from later plans (original visiting order
    kept, so the stripped route can only get shorter).
    """

    def __init__(self, setup: EvalSetup, ctx: PlannerContext, driver: ActionDriver,
                 request_areas: dict[int, int], *, collect_observations: bool) -> None:
        self.setup = setup
        self.ctx = ctx
        self.driver = driver
        self.request_areas = request_areas
        self.collect_observations = collect_observations
        self.k_max = mappo_action_count(setup.scenario)

    def _candidate_plans(self, state: WorldState, u: int) -> list[Plan]:
        smap = self.setup.smap
        cfg = self.setup.scenario.config
        area = state.drones[u].area
        footprint = {area, *smap.neighbor_lists[area]}
        cands = top_delayed_candidates(state.pending, state.window, cfg.window_hours,
                                       self.request_areas, footprint,
                                       smap.depots[area], cfg.max_parcels_per_drone)
        plans = build_plans(self.ctx, u, area, None, cands)
        return plans[:self.k_max]

    def _plan_features(self, state: WorldState, plans: list[Plan]) -> np.ndarray:
        cfg = self.setup.scenario.config
        drone = self.setup.scenario.drone
        wh = cfg.window_hours
        feats = np.zeros(self.k_max * PLAN_FEATURE_DIM)
        cap = self.ctx.range_cap_m or drone.max_range
        by_id = state.pending
        for i, p in enumerate(plans):
            delay_sum = sum((state.window - by_id[c].demand_window) * wh
                            for c in p.customer_ids if c in by_id)
            feats[i * PLAN_FEATURE_DIM:(i + 1) * PLAN_FEATURE_DIM] = (
                len(p.customer_ids) / cfg.max_parcels_per_drone,
                p.total_mass_kg / drone.max_payload,
                p.path_length_m / cap,
                delay_sum / self.setup.obs_scales.sum_scale,
            )
        return feats

    def _observe(self, state: WorldState, u: int,
                 summaries: Sequence[AreaDelaySummary]) -> tuple[np.ndarray, np.ndarray, list[Plan]]:
        cfg = self.setup.scenario.config
        obs = observe(state, u, self.setup.smap, cfg.window_hours, self.request_areas,
                      self.setup.obs_scales, summaries)
        plans = self._candidate_plans(state, u)
        vec = np.concatenate([obs.vector(), self._plan_features(state, plans)])
        mask = np.zeros(self.k_max)
        mask[:len(plans)] = 1.0
        return vec, mask, plans

    def decide(self, state: WorldState) -> WindowDecision:
        cfg = self.setup.scenario.config
        summaries = area_delay_summaries(state, self.setup.smap, cfg.window_hours,
                                         self.request_areas)
        actions: list[int] = []
        inputs: list[np.ndarray] = []
        masks: list[np.ndarray] = []
        routes: list[Plan] = []
        served: set[int] = set()
        for u, drone in enumerate(state.drones):
            vec, mask, plans = self._observe(state, u, summaries)
            action, net_input = self.driver.act(u, vec, mask)
            plan = plans[action]
            if any(c in served for c in plan.customer_ids):
                plan = self._strip_served(u, plan, served)
            served.update(plan.customer_ids)
            actions.append(action)
            inputs.append(net_input)
            masks.append(mask)
            routes.append(plan)
        everything = set(range(self.setup.smap.num_areas))
        return WindowDecision(
            routes=routes,
            actions=actions,
            observations=inputs if self.collect_observations else None,
            action_masks=masks if self.collect_observations else None,
            reward_areas=[everything] * len(state.drones),
        )

    def _strip_served(self, u: int, plan: Plan, served: set[int]) -> Plan:
        order_ids = [c for c in plan.customer_ids if c not in served]
        id_to_stop = {cid: stop for cid, stop in zip(plan.customer_ids, plan.stops[1:-1])}
        remaining = [Request(cid, id_to_stop[cid][0], id_to_stop[cid][1], 1)
                     for cid in order_ids]
        last = remaining[-1].location if remaining else self.setup.smap.depots[plan.start_area]
        end_area = self.setup.smap.area_of(last)
        stripped = cost_plan(self.ctx, u, plan.start_area, end_area, remaining)
        assert stripped is not None  # dropping stops can only shorten the path
        return stripped

    def boundary_observations(self, state: WorldState) -> tuple[list[np.ndarray], list[np.ndarray]]:
        cfg = self.setup.scenario.config
        summaries = area_delay_summaries(state, self.setup.smap, cfg.window_hours,
                                         self.request_areas)
        obs_out: list[np.ndarray] = []
        mask_out: list[np.ndarray] = []
        for u in range(len(state.drones)):
            vec, mask, _ = self._observe(state, u, summaries)
            obs_out.append(self.driver.peek_input(u, vec))
            mask_out.append(mask)
        return obs_out, mask_out


@dataclass
class TrainedPolicy:
    """A trained actor/critic pair tied to the map it was trained on."""

    method: MethodId
    actor: PolicyNetwork
    critic: ValueNetwork
    smap: ServiceMap
    curves: list[dict] = field(default_factory=list)
    alpha: float = 0.5


def _make_controller(method: MethodId, setup: EvalSetup, ctx: PlannerContext,
                     request_areas: dict[int, int], driver: ActionDriver | None,
                     *, collect_observations: bool) -> Controller:
    if method is MethodId.OPS_GLOBAL:
        return GlobalPlanController(setup, ctx, request_areas)
    if method is MethodId.MAPPO:
        assert driver is not None
        return PlanChoiceController(setup, ctx, driver, request_areas,
                                    collect_observations=collect_observations)
    assert driver is not None
    return RangeSelectionController(setup, ctx, driver, request_areas,
                                    collect_observations=collect_observations)


def _episode_requests(scenario: Scenario, seed: int) -> list[Request]:
    # Every day shares the scenario's demand geography; only arrivals,
    # masses, and cluster assignments resample per episode.
    return generate_synthetic(replace(scenario.config, rng_seed=seed),
                              cluster_seed=scenario.config.rng_seed)


def train_policy(scenario: Scenario, method: MethodId, cfg: LearningConfig,
                 *, progress: Callable[[int, dict], None] | None = None,
                 smap: ServiceMap | None = None,
                 episode_requests: Callable[[int], list[Request]] | None = None) -> TrainedPolicy:
    """Train the actor/critic pair a learned method evaluates with.

    Each episode draws a fresh synthetic day from a derived seed, rolls
    it out with stochastic actions, and applies one clipped-surrogate
    update. The shipped policy is the one that scored best on a fixed
    held-out validation set of days, re-checked every few dozen
    episodes; the last PPO iterate is an arbitrary point of an
    oscillating trajectory. Returns the policy bundled with its service
    map and curves. smap and episode_requests override the
    scenario-derived map and the per-episode request stream, for
    hand-built worlds; with an injected stream the held-out check is
    unavailable, so selection falls back to the rolling training reward.
    """
    if method not in LEARNED_METHODS:
        raise ScenarioError(f"{method.value} has no trainable policy")
    if smap is None:
        smap = method_service_map(scenario, method)
    setup = EvalSetup.build(scenario, smap)
    base = scenario.config.rng_seed
    init_rng = np.random.default_rng(derive_seed(base, _SEED_NET_INIT, cfg.seed))
    sampler_rng = np.random.default_rng(derive_seed(base, _SEED_SAMPLER, cfg.seed))

    if method is MethodId.MAPPO:
        obs_dim = mappo_observation_dim(scenario, smap)
        n_actions = mappo_action_count(scenario)
    else:
        obs_dim = observation_dim(smap.num_areas, scenario.config.k_neighbors)
        n_actions = scenario.config.action_count
    actor = PolicyNetwork(obs_dim, n_actions, cfg.hidden_size, init_rng,
                          recurrent=cfg.recurrent)
    critic = ValueNetwork(obs_dim, n_actions, cfg.hidden_size, init_rng,
                          critic_type=cfg.critic_type)
    energy_model = RouteEnergyModel(scenario.drone, scenario.constants)

    def rollout(requests: list[Request], driver: ActionDriver,
                collect: bool) -> tuple[EpisodeMetrics, list[Transition]]:
        request_areas = {r.id: smap.area_of(r.location) for r in requests}
        ctx = PlannerContext(scenario=scenario, smap=smap,
                             energy=energy_model, request_areas=request_areas,
                             range_cap_m=scenario.drone.max_range,
                             energy_cap_j=setup.battery_capacity_j)
        controller = _make_controller(method, setup, ctx, request_areas, driver,
                                      collect_observations=collect)
        return run_episode(scenario, smap, requests, controller,
                           battery_capacity_j=setup.battery_capacity_j,
                           reward_scales=setup.reward_scales,
                           request_areas=request_areas,
                           collect_transitions=collect)

    def make_episode(ep: int) -> tuple[EpisodeMetrics, list[Transition]]:
        if episode_requests is not None:
            requests = episode_requests(ep)
        else:
            ep_seed = derive_seed(base, _SEED_TRAIN_EP, cfg.seed, ep)
            requests = _episode_requests(scenario, ep_seed)
        action_rng = np.random.default_rng(derive_seed(base, _SEED_ACTION, cfg.seed, ep))
        driver = ActionDriver(n_actions, actor=actor, rng=action_rng)
        return rollout(requests, driver, collect=True)

    use_validation = episode_requests is None
    validation_days: list[list[Request]] = []
    if use_validation:
        validation_days = [
            _episode_requests(scenario, derive_seed(base, _SEED_VALIDATION, d))
            for d in range(_VALIDATION_DAYS)]
    best_score = -np.inf
    best_nets: tuple[PolicyNetwork, ValueNetwork] | None = None

    def on_episode(ep: int, row: dict) -> None:
        nonlocal best_score, best_nets
        if progress is not None:
            progress(ep, row)
        if not use_validation:
            return
        if ep < _VALIDATE_WARMUP or (ep + 1) % _VALIDATE_EVERY:
            return
        score = 0.0
        for d, requests in enumerate(validation_days):
            rng = np.random.default_rng(derive_seed(base, _SEED_VALIDATION, 977, d))
            driver = ActionDriver(n_actions, actor=actor, rng=rng)
            metrics, _ = rollout(requests, driver, collect=False)
            score += metrics.mean_reward
        if score > best_score:
            best_score = score
            best_nets = (actor.clone(), critic.clone())

    loop_cfg = replace(cfg, keep_best=cfg.keep_best and not use_validation)
    result: TrainResult = train_loop(make_episode, actor, critic, loop_cfg, sampler_rng,
                                     progress=on_episode)
    final_actor, final_critic = result.actor, result.critic
    if use_validation and cfg.keep_best and best_nets is not None:
        final_actor, final_critic = best_nets
    return TrainedPolicy(method=method, actor=final_actor, critic=final_critic,
                         smap=smap, curves=result.curves, alpha=scenario.config.alpha)


def save_policy(policy: TrainedPolicy, path) -> None:
    """Checkpoint actor, critic, curves, and the map they were trained on."""
    meta = {
        "method": policy.method.value,
        "alpha": policy.alpha,
        "service_map": policy.smap.to_json_dict(),
        "curves": policy.curves,
    }
    save_checkpoint(path, policy.actor, policy.critic, meta)


def load_policy(path) -> TrainedPolicy:
    actor, critic, meta = load_checkpoint(path)
    for key in ("method", "service_map"):
        if key not in meta:
            raise LearningError(f"checkpoint {path} is missing '{key}' metadata")
    return TrainedPolicy(
        method=MethodId(meta["method"]),
        actor=actor,
        critic=critic,
        smap=ServiceMap.from_json_dict(meta["service_map"]),
        curves=list(meta.get("curves", [])),
        alpha=float(meta.get("alpha", 0.5)),
    )


@dataclass
class MetricsReport:
    """Per-method aggregates over independent repetitions."""

    method: str
    repetitions: int
    mean_energy_kj: float
    std_energy_kj: float
    avg_delay_hours: float
    std_delay_hours: float
    delay_unfairness: float
    std_delay_unfairness: float
    avg_early_arrival_hours: float
    std_early_arrival_hours: float
    avg_running_time_s: float
    std_running_time_s: float
    mean_co2_g: float
    depot_load_kg: list[float]
    per_rep: dict[str, list[float]]
    combined_cost: float | None = None
    std_combined_cost: float | None = None

    def deterministic_dict(self) -> dict:
        """Everything except wall-clock timing, for byte-stable reports."""
        return {
            "method": self.method,
            "repetitions": self.repetitions,
            "mean_energy_kj": self.mean_energy_kj,
            "std_energy_kj": self.std_energy_kj,
            "avg_delay_hours": self.avg_delay_hours,
            "std_delay_hours": self.std_delay_hours,
            "delay_unfairness": self.delay_unfairness,
            "std_delay_unfairness": self.std_delay_unfairness,
            "avg_early_arrival_hours": self.avg_early_arrival_hours,
            "std_early_arrival_hours": self.std_early_arrival_hours,
            "mean_co2_g": self.mean_co2_g,
            "depot_load_kg": self.depot_load_kg,
            "combined_cost": self.combined_cost,
            "std_combined_cost": self.std_combined_cost,
            "per_rep": {k: v for k, v in self.per_rep.items() if k != "running_time_s"},
        }

    def timing_dict(self) -> dict:
        return {
            "avg_running_time_s": self.avg_running_time_s,
            "std_running_time_s": self.std_running_time_s,
            "per_rep_running_time_s": self.per_rep.get("running_time_s", []),
        }


def gini(values: Sequence[float]) -> float:
    """Gini coefficient of a non-negative vector; 0 for empty or all-zero."""
    xs = sorted(float(v) for v in values)
    n = len(xs)
    total = sum(xs)
    if n == 0 or total == 0.0:
        return 0.0
    if any(v < 0 for v in xs):
        raise ScenarioError("gini expects non-negative values")
    weighted = sum((i + 1) * x for i, x in enumerate(xs))
    return (2.0 * weighted - (n + 1) * total) / (n * total)


def early_arrival(deliveries: Sequence[tuple[int, int]], window_hours: float) -> float:
    """Mean hours of early service over delivered (demand, delivered) pairs."""
    if not deliveries:
        return 0.0
    return sum(max(0, due - done) * window_hours for due, done in deliveries) / len(deliveries)


@dataclass(frozen=True)
class NormalizationBounds:
    """Per-batch min-max bounds that anchor the combined cost."""

    energy_min: float
    energy_max: float
    delay_min: float
    delay_max: float

    @staticmethod
    def _norm(x: float, lo: float, hi: float) -> float:
        if hi <= lo:
            return 0.0  # degenerate component carries no information
        return (x - lo) / (hi - lo)

    def combined(self, mean_energy: float, avg_delay: float) -> float:
        return (self._norm(mean_energy, self.energy_min, self.energy_max)
                + self._norm(avg_delay, self.delay_min, self.delay_max))


def combined_cost(mean_energy: float, avg_delay: float,
                  bounds: NormalizationBounds) -> float:
    """Sum of min-max normalized components; 0 best, 2 worst in batch."""
    return bounds.combined(mean_energy, avg_delay)


def run_method(method: MethodId, scenario: Scenario, repetitions: int, *,
               policy: TrainedPolicy | None = None,
               requests_override: Sequence[Request] | None = None,
               trace_sink: list[dict] | None = None) -> MetricsReport:
    """Evaluate one method over repetitions with derived per-rep seeds.

    Learned methods need their TrainedPolicy; evaluation samples the
    stochastic policy under per-repetition seeds, so results stay
    reproducible. Passing a policy trained on a different map layout is
    an error. requests_override evaluates a fixed dataset instead of
    freshly generated days.
    """
    if repetitions < 1:
        raise ScenarioError("repetitions must be at least 1")
    if method in LEARNED_METHODS:
        if policy is None:
            raise ScenarioError(f"{method.value} requires a trained policy")
        if policy.method is not method:
            raise ScenarioError(
                f"policy was trained for {policy.method.value}, not {method.value}")
        smap = policy.smap
    else:
        smap = method_service_map(scenario, method)
    setup = EvalSetup.build(scenario, smap)
    base = scenario.config.rng_seed
    energy_model = RouteEnergyModel(scenario.drone, scenario.constants)

    energies, delays, ginis, earlies, runtimes = [], [], [], [], []
    depot_loads = np.zeros(smap.num_areas)
    for rep in range(repetitions):
        if requests_override is not None:
            requests = list(requests_override)
        else:
            requests = _episode_requests(scenario, derive_seed(base, _SEED_EVAL, rep))
        request_areas = {r.id: smap.area_of(r.location) for r in requests}
        unrestricted = method is MethodId.OPS_GLOBAL
        ctx = PlannerContext(
            scenario=scenario, smap=smap, energy=energy_model,
            request_areas=request_areas,
            range_cap_m=None if unrestricted else scenario.drone.max_range,
            energy_cap_j=None if unrestricted else setup.battery_capacity_j)
        driver: ActionDriver | None = None
        if method is MethodId.OPS_RANDOM:
            rng = np.random.default_rng(derive_seed(base, _SEED_ACTION, rep))
            driver = ActionDriver(scenario.config.action_count, rng=rng)
        elif method in LEARNED_METHODS:
            rng = np.random.default_rng(derive_seed(base, _SEED_ACTION, rep))
            driver = ActionDriver(policy.actor.n_actions, actor=policy.actor, rng=rng)
        controller = _make_controller(method, setup, ctx, request_areas, driver,
                                      collect_observations=False)
        trace = [] if trace_sink is not None else None
        metrics, _ = run_episode(
            scenario, smap, requests, controller,
            battery_capacity_j=setup.battery_capacity_j,
            reward_scales=setup.reward_scales,
            request_areas=request_areas,
            enforce_battery=method is not MethodId.OPS_GLOBAL,
            trace=trace)
        if trace_sink is not None and trace is not None:
            for row in trace:
                row["method"] = method.value
                row["repetition"] = rep
            trace_sink.extend(trace)
        energies.append(metrics.mean_energy_kj_per_drone)
        delays.append(metrics.avg_delay_hours)
        ginis.append(gini(metrics.per_area_delay_hours))
        earlies.append(metrics.avg_early_arrival_hours)
        runtimes.append(metrics.mean_planning_seconds)
        depot_loads += np.array(metrics.depot_load_kg)

    def mean_std(xs: list[float]) -> tuple[float, float]:
        arr = np.array(xs)
        return float(arr.mean()), float(arr.std())

    e_m, e_s = mean_std(energies)
    d_m, d_s = mean_std(delays)
    g_m, g_s = mean_std(ginis)
    a_m, a_s = mean_std(earlies)
    t_m, t_s = mean_std(runtimes)
    fleet_kwh = np.array(energies) * scenario.config.num_drones / 3600.0  # kJ -> kWh
    return MetricsReport(
        method=method.value,
        repetitions=repetitions,
        mean_energy_kj=e_m, std_energy_kj=e_s,
        avg_delay_hours=d_m, std_delay_hours=d_s,
        delay_unfairness=g_m, std_delay_unfairness=g_s,
        avg_early_arrival_hours=a_m, std_early_arrival_hours=a_s,
        avg_running_time_s=t_m, std_running_time_s=t_s,
        mean_co2_g=float((fleet_kwh * CO2_GRAMS_PER_KWH).mean()),
        depot_load_kg=[float(x) for x in depot_loads / repetitions],
        per_rep={
            "mean_energy_kj": energies,
            "avg_delay_hours": delays,
            "delay_unfairness": ginis,
            "avg_early_arrival_hours": earlies,
            "running_time_s": runtimes,
        },
    )


def fill_combined_costs(reports: dict[str, MetricsReport]) -> NormalizationBounds:
    """Min-max normalize over the batch and fill every report in place."""
    energies = [r.mean_energy_kj for r in reports.values()]
    delays = [r.avg_delay_hours for r in reports.values()]
    bounds = NormalizationBounds(min(energies), max(energies), min(delays), max(delays))
    for r in reports.values():
        r.combined_cost = bounds.combined(r.mean_energy_kj, r.avg_delay_hours)
        per_rep = [bounds.combined(e, d)
                   for e, d in zip(r.per_rep["mean_energy_kj"], r.per_rep["avg_delay_hours"])]
        r.std_combined_cost = float(np.array(per_rep).std())
    return bounds


@dataclass
class CompareResult:
    reports: dict[str, MetricsReport]
    bounds: NormalizationBounds
    policies: dict[str, TrainedPolicy]
    trace: list[dict]


def compare_methods(scenario: Scenario, repetitions: int, learn_cfg: LearningConfig,
                    *, methods: Sequence[MethodId] = tuple(MethodId),
                    policies: dict[str, TrainedPolicy] | None = None,
                    progress: Callable[[str], None] | None = None) -> CompareResult:
    """Train whatever needs training, evaluate everything, fill costs."""
    policies = dict(policies or {})
    for m in methods:
        if m in LEARNED_METHODS and m.value not in policies:
            if progress:
                progress(f"training {m.value}")
            policies[m.value] = train_policy(scenario, m, learn_cfg)
    reports: dict[str, MetricsReport] = {}
    trace: list[dict] = []
    for m in methods:
        if progress:
            progress(f"evaluating {m.value}")
        reports[m.value] = run_method(m, scenario, repetitions,
                                      policy=policies.get(m.value), trace_sink=trace)
    bounds = fill_combined_costs(reports)
    return CompareResult(reports=reports, bounds=bounds, policies=policies, trace=trace)


_METHOD_SCHEMA = {
    "type": "object",
    "required": ["method", "repetitions", "mean_energy_kj", "std_energy_kj",
                 "avg_delay_hours", "std_delay_hours", "delay_unfairness",
                 "std_delay_unfairness", "avg_early_arrival_hours",
                 "std_early_arrival_hours", "mean_co2_g", "depot_load_kg",
                 "combined_cost", "per_rep"],
    "properties": {
        "method": {"type": "string"},
        "repetitions": {"type": "integer", "minimum": 1},
        "mean_energy_kj": {"type": "number", "minimum": 0},
        "std_energy_kj": {"type": "number", "minimum": 0},
        "avg_delay_hours": {"type": "number", "minimum": 0},
        "std_delay_hours": {"type": "number", "minimum": 0},
        "delay_unfairness": {"type": "number", "minimum": 0, "maximum": 1},
        "std_delay_unfairness": {"type": "number", "minimum": 0},
        "avg_early_arrival_hours": {"type": "number", "minimum": 0},
        "std_early_arrival_hours": {"type": "number", "minimum": 0},
        "mean_co2_g": {"type": "number", "minimum": 0},
        "depot_load_kg": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "combined_cost": {"type": ["number", "null"], "minimum": 0},
        "std_combined_cost": {"type": ["number", "null"]},
        "per_rep": {"type": "object"},
    },
}

REPORT_SCHEMA = {
    "type": "object",
    "required": ["format_version", "kind", "scenario", "reward_scales",
                 "combined_cost_note", "methods"],
    "properties": {
        "format_version": {"const": 1},
        "kind": {"enum": ["evaluation", "comparison"]},
        "scenario": {"type": "object"},
        "reward_scales": {
            "type": "object",
            "required": ["delay_scale_hours", "energy_scale_joules"],
        },
        "combined_cost_note": {"type": "string"},
        "methods": {
            "type": "object",
            "additionalProperties": _METHOD_SCHEMA,
            "minProperties": 1,
        },
    },
}

COMBINED_COST_NOTE = ("sum of min-max normalized mean energy and mean delay over the "
                      "method batch; 0 is best on both axes, 2 is worst on both, "
                      "degenerate components count 0")


def scenario_report_dict(scenario: Scenario) -> dict:
    cfg = scenario.config
    return {
        "map_bounds_m": list(cfg.map_bounds),
        "num_depots": cfg.num_depots,
        "num_drones": cfg.num_drones,
        "num_windows": cfg.num_windows,
        "window_duration_s": cfg.window_duration,
        "alpha": cfg.alpha,
        "max_parcels_per_drone": cfg.max_parcels_per_drone,
        "rng_seed": cfg.rng_seed,
        "k_neighbors": cfg.k_neighbors,
        "parcel_mass_range_kg": list(cfg.parcel_mass_range),
        "segmentation": cfg.segmentation,
        "requests_per_window": cfg.requests_per_window,
        "cluster_count": cfg.cluster_count,
        "cluster_std_m": cfg.cluster_std,
        "drone_max_payload_kg": scenario.drone.max_payload,
        "drone_max_range_m": scenario.drone.max_range,
    }


def build_report(scenario: Scenario, reports: dict[str, MetricsReport],
                 *, kind: str = "evaluation") -> dict:
    """Deterministic report body; validates against REPORT_SCHEMA."""
    setup_cap = RouteEnergyModel(scenario.drone, scenario.constants).battery_capacity()
    scales = default_reward_scales(scenario, setup_cap)
    doc = {
        "format_version": 1,
        "kind": kind,
        "scenario": scenario_report_dict(scenario),
        "reward_scales": {
            "delay_scale_hours": scales.delay_scale_hours,
            "energy_scale_joules": scales.energy_scale_joules,
        },
        "combined_cost_note": COMBINED_COST_NOTE,
        "co2_note": f"mean_co2_g uses {CO2_GRAMS_PER_KWH:g} g per kWh of fleet energy",
        "alpha_note": ("alpha defaults to 0.5; 0.2 is a reasonable pick when delay "
                       "matters much more than energy"),
        "methods": {name: r.deterministic_dict() for name, r in sorted(reports.items())},
    }
    jsonschema.validate(doc, REPORT_SCHEMA)
    return doc


def build_timing(reports: dict[str, MetricsReport]) -> dict:
    return {
        "format_version": 1,
        "note": ("wall-clock planner plus policy seconds per window; kept out of "
                 "report.json so identical seeds reproduce identical report bytes"),
        "methods": {name: r.timing_dict() for name, r in sorted(reports.items())},
    }
