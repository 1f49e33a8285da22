"""Discrete-time delivery world: windows, pending requests, rewards.

A day is num_windows equal windows. Requests enter the pending set at
their demand window and accrue (current - demand) * window_hours of
delay for every later window they remain undelivered; a request served
during a window contributes nothing from that window on. Drones sit at
depots between windows, fly at most one route per window, and swap to a
full battery at every window boundary.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .core import Request, Scenario, ScenarioError
from .planner import Plan
from .segmentation import ServiceMap


class SimulationError(RuntimeError):
    """A route or state update violated the world rules."""


@dataclass
class DroneState:
    """Where a drone parks and how much battery it shows at the boundary."""

    area: int
    battery: float = 1.0  # fraction, post-swap this is always 1.0


@dataclass
class WorldState:
    """Pending demand plus fleet positions at one window boundary."""

    window: int
    pending: dict[int, Request]
    drones: list[DroneState]
    delivered: set[int] = field(default_factory=set)


def delay(window: int, demand_window: int, pending: bool, window_duration_s: float) -> float:
    """Hours a request has waited past its demand window; 0 once served.

    Counted in whole windows: (window - demand_window) * window length,
    clamped to zero for requests not yet due or no longer pending.
    """
    if not pending or window < demand_window:
        return 0.0
    return (window - demand_window) * window_duration_s / 3600.0


@dataclass(frozen=True)
class RewardScales:
    """Sigmoid scales for the two reward penalties, recorded in reports."""

    delay_scale_hours: float
    energy_scale_joules: float


@dataclass(frozen=True)
class ObservationScales:
    """Fixed divisors that keep observation entries near [0, 1]."""

    max_delay_hours: float
    count_scale: float = 16.0

    @property
    def sum_scale(self) -> float:
        return self.max_delay_hours * self.count_scale


def default_reward_scales(scenario: Scenario, battery_capacity_j: float) -> RewardScales:
    # The delay arm integrates the whole map's residual lateness, so its
    # scale tracks total demand hours. 0.6 puts a workmanlike fleet near
    # the sigmoid's responsive middle; a scale far below the observed
    # backlog pins the arm at 1 and starves the gradient.
    cfg = scenario.config
    backlog = 0.6 * cfg.requests_per_window * cfg.num_windows * cfg.window_hours
    return RewardScales(delay_scale_hours=max(cfg.window_hours, backlog),
                        energy_scale_joules=battery_capacity_j)


def default_observation_scales(scenario: Scenario) -> ObservationScales:
    cfg = scenario.config
    return ObservationScales(
        max_delay_hours=max(cfg.window_hours, (cfg.num_windows - 1) * cfg.window_hours))


@dataclass(frozen=True)
class AreaDelaySummary:
    """Per-area digest of outstanding lateness: (sum, count, max) in hours."""

    delay_sum: float
    pending_count: int
    delay_max: float

ZERO_SUMMARY = AreaDelaySummary(0.0, 0, 0.0)


def area_delay_summaries(state: WorldState, smap: ServiceMap, window_hours: float,
                         request_areas: dict[int, int]) -> list[AreaDelaySummary]:
    """One pass over pending demand, aggregated by service area."""
    sums = [0.0] * smap.num_areas
    counts = [0] * smap.num_areas
    maxes = [0.0] * smap.num_areas
    for rid, req in state.pending.items():
        a = request_areas[rid]
        d = (state.window - req.demand_window) * window_hours
        sums[a] += d
        counts[a] += 1
        if d > maxes[a]:
            maxes[a] = d
    return [AreaDelaySummary(sums[a], counts[a], maxes[a]) for a in range(smap.num_areas)]


@dataclass(frozen=True)
class Observation:
    """What one drone sees at a window boundary.

    The vector layout is [own-area one-hot | battery | own (sum, count,
    max) triple | one triple per neighbor in nearest-first order | other
    drones in own then each neighbor area], all scaled to stay near unit
    magnitude. Its length is fixed for a given map and neighbor count.
    Crowding counts exclude the observer: they tell a drone how many
    teammates already sit where it might go.
    """

    own_area: int
    battery: float
    own_summary: AreaDelaySummary
    neighbor_summaries: tuple[AreaDelaySummary, ...]
    crowding: tuple[int, ...]
    fleet_size: int
    num_areas: int
    scales: ObservationScales

    def vector(self) -> np.ndarray:
        k1 = 1 + len(self.neighbor_summaries)
        parts = np.zeros(self.num_areas + 1 + 4 * k1)
        parts[self.own_area] = 1.0
        parts[self.num_areas] = self.battery
        base = self.num_areas + 1
        for i, s in enumerate((self.own_summary, *self.neighbor_summaries)):
            parts[base + 3 * i] = s.delay_sum / self.scales.sum_scale
            parts[base + 3 * i + 1] = s.pending_count / self.scales.count_scale
            parts[base + 3 * i + 2] = s.delay_max / self.scales.max_delay_hours
        crowd_base = base + 3 * k1
        denom = max(self.fleet_size, 1)
        for i, c in enumerate(self.crowding):
            parts[crowd_base + i] = c / denom
        return parts


def observation_dim(num_areas: int, k_neighbors: int) -> int:
    return num_areas + 1 + 4 * (1 + k_neighbors)


def observe(state: WorldState, drone_index: int, smap: ServiceMap,
            window_hours: float, request_areas: dict[int, int],
            scales: ObservationScales,
            summaries: Sequence[AreaDelaySummary] | None = None) -> Observation:
    """Build one drone's observation; summaries may be precomputed per window."""
    if summaries is None:
        summaries = area_delay_summaries(state, smap, window_hours, request_areas)
    drone = state.drones[drone_index]
    nbrs = smap.neighbor_lists[drone.area]
    occupancy = [0] * smap.num_areas
    for j, other in enumerate(state.drones):
        if j != drone_index:
            occupancy[other.area] += 1
    return Observation(
        own_area=drone.area,
        battery=drone.battery,
        own_summary=summaries[drone.area],
        neighbor_summaries=tuple(summaries[b] for b in nbrs),
        crowding=tuple(occupancy[a] for a in (drone.area, *nbrs)),
        fleet_size=len(state.drones),
        num_areas=smap.num_areas,
        scales=scales,
    )


def _sigmoid(x: float) -> float:
    if x >= 0:
        return float(1.0 / (1.0 + np.exp(-x)))
    e = np.exp(x)
    return float(e / (1.0 + e))


def reward(alpha: float, observed_delay_hours: float, route_energy_j: float,
           scales: RewardScales) -> float:
    """Blended penalty in (-1, 0): sigmoid-squashed delay and energy arms.

    Zero delay and zero energy land on sigma(0) = 0.5 each, so the best
    achievable reward is -0.5; worse states approach -1.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ScenarioError(f"alpha must lie in [0, 1], got {alpha}")
    if observed_delay_hours < 0 or route_energy_j < 0:
        raise ScenarioError("delay and energy must be non-negative")
    delay_arm = _sigmoid(observed_delay_hours / scales.delay_scale_hours)
    energy_arm = _sigmoid(route_energy_j / scales.energy_scale_joules)
    return -(1.0 - alpha) * delay_arm - alpha * energy_arm


@dataclass
class Transition:
    """One drone-window experience tuple for the learners.

    next_action is the action actually taken from next_observation (the
    bootstrap target needs it); None marks the episode boundary, where
    the target value is zero.
    """

    observation: np.ndarray
    action: int
    reward: float
    next_observation: np.ndarray | None = None
    terminal: bool = False
    next_action: int | None = None
    action_mask: np.ndarray | None = None
    next_action_mask: np.ndarray | None = None


def initial_state(scenario: Scenario, smap: ServiceMap, requests: Sequence[Request]) -> WorldState:
    """Window-1 boundary: first arrivals pending, drones spread round-robin."""
    pending = {r.id: r for r in requests if r.demand_window == 1}
    drones = [DroneState(area=u % smap.num_areas) for u in range(scenario.config.num_drones)]
    return WorldState(window=1, pending=pending, drones=drones)


def advance_window(state: WorldState, executed_routes: Sequence[Plan | None],
                   all_requests: Sequence[Request]) -> WorldState:
    """Apply one window's routes and roll the clock forward.

    Served requests leave the pending set, the next window's arrivals
    join it, drones park at their route end depots with fresh batteries,
    and the window increments. Serving an unknown, already-delivered, or
    doubly-assigned request raises SimulationError.
    """
    served: set[int] = set()
    for route in executed_routes:
        if route is None:
            continue
        for rid in route.customer_ids:
            if rid in served:
                raise SimulationError(f"request {rid} assigned to two routes in one window")
            if rid in state.delivered:
                raise SimulationError(f"request {rid} was already delivered")
            if rid not in state.pending:
                raise SimulationError(f"request {rid} is not pending in window {state.window}")
            served.add(rid)

    nxt = state.window + 1
    pending = {rid: r for rid, r in state.pending.items() if rid not in served}
    for r in all_requests:
        if r.demand_window == nxt:
            if r.id in pending or r.id in state.delivered or r.id in served:
                raise SimulationError(f"request {r.id} arrives twice")
            pending[r.id] = r

    drones = []
    for u, d in enumerate(state.drones):
        route = executed_routes[u] if u < len(executed_routes) else None
        area = route.end_area if route is not None else d.area
        drones.append(DroneState(area=area, battery=1.0))
    return WorldState(window=nxt, pending=pending,
                      drones=drones, delivered=state.delivered | served)


@dataclass
class WindowDecision:
    """Everything a controller decides for one window."""

    routes: list[Plan]
    actions: list[int] | None = None
    observations: list[np.ndarray] | None = None
    action_masks: list[np.ndarray] | None = None
    # Areas whose residual lateness each drone is charged for. Learned
    # methods charge everyone the whole map: scoring only the locally
    # visible cells teaches drones to hide in quiet corners.
    reward_areas: list[set[int]] | None = None


class Controller(Protocol):
    """Per-window decision maker; implementations live with the methods."""

    def decide(self, state: WorldState) -> WindowDecision: ...

    def boundary_observations(self, state: WorldState) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Observations (and action masks) at a boundary without acting."""
        ...


@dataclass
class EpisodeMetrics:
    """Aggregates of one simulated day."""

    total_requests: int
    delivered_count: int
    total_energy_j: float
    per_drone_energy_j: list[float]
    delay_sum_hours: float
    per_area_delay_hours: list[float]
    depot_load_kg: list[float]
    early_arrival_sum_hours: float
    planning_seconds: list[float]
    reward_sum: float
    reward_count: int

    @property
    def avg_delay_hours(self) -> float:
        return self.delay_sum_hours / self.total_requests if self.total_requests else 0.0

    @property
    def mean_energy_kj_per_drone(self) -> float:
        n = len(self.per_drone_energy_j)
        return self.total_energy_j / n / 1000.0 if n else 0.0

    @property
    def avg_early_arrival_hours(self) -> float:
        return self.early_arrival_sum_hours / self.delivered_count if self.delivered_count else 0.0

    @property
    def mean_reward(self) -> float:
        return self.reward_sum / self.reward_count if self.reward_count else 0.0

    @property
    def mean_planning_seconds(self) -> float:
        return sum(self.planning_seconds) / len(self.planning_seconds) if self.planning_seconds else 0.0


def run_episode(scenario: Scenario, smap: ServiceMap, requests: Sequence[Request],
                controller: Controller, *,
                battery_capacity_j: float,
                reward_scales: RewardScales,
                request_areas: dict[int, int] | None = None,
                enforce_battery: bool = True,
                collect_transitions: bool = False,
                trace: list[dict] | None = None,
                clock: Callable[[], float] = time.perf_counter,
                ) -> tuple[EpisodeMetrics, list[Transition]]:
    """Simulate one day under a controller and account every metric.

    Per window: the controller picks routes (timed as planning), routes
    execute, lateness of everything still pending is charged, and the
    world advances. Transitions are only assembled when requested; their
    rewards use the controller-declared reward areas for the delay arm
    and the executed route energy for the energy arm.

    The battery bound is asserted after every route unless the caller
    explicitly runs an uncapped-range method.
    """
    cfg = scenario.config
    wh = cfg.window_hours
    if request_areas is None:
        request_areas = {r.id: smap.area_of(r.location) for r in requests}
    total_requests = len(requests)
    if len({r.id for r in requests}) != total_requests:
        raise ScenarioError("request ids must be unique")

    state = initial_state(scenario, smap, requests)
    n_drones = cfg.num_drones
    metrics = EpisodeMetrics(
        total_requests=total_requests,
        delivered_count=0,
        total_energy_j=0.0,
        per_drone_energy_j=[0.0] * n_drones,
        delay_sum_hours=0.0,
        per_area_delay_hours=[0.0] * smap.num_areas,
        depot_load_kg=[0.0] * smap.num_areas,
        early_arrival_sum_hours=0.0,
        planning_seconds=[],
        reward_sum=0.0,
        reward_count=0,
    )
    transitions: list[Transition] = []
    open_transitions: list[Transition] = []

    for _ in range(cfg.num_windows):
        t = state.window
        t0 = clock()
        decision = controller.decide(state)
        metrics.planning_seconds.append(clock() - t0)
        if len(decision.routes) != n_drones:
            raise SimulationError("controller must return one route per drone")

        # Close out the previous window's transitions now that the
        # follow-up observation and action are known.
        if collect_transitions and decision.observations is not None and open_transitions:
            for u, tr in enumerate(open_transitions):
                tr.next_observation = decision.observations[u]
                tr.next_action = decision.actions[u] if decision.actions else None
                if decision.action_masks is not None:
                    tr.next_action_mask = decision.action_masks[u]
            transitions.extend(open_transitions)
            open_transitions = []

        served: set[int] = set()
        for u, route in enumerate(decision.routes):
            e = route.energy_j
            metrics.total_energy_j += e
            metrics.per_drone_energy_j[u] += e
            metrics.depot_load_kg[route.start_area] += route.total_mass_kg
            frac = 1.0 - e / battery_capacity_j
            if enforce_battery and frac < -1e-9:
                raise SimulationError(
                    f"drone {u} route energy {e:.1f} J exceeds battery {battery_capacity_j:.1f} J")
            served.update(route.customer_ids)
            for rid in route.customer_ids:
                req = state.pending.get(rid)
                if req is not None:
                    metrics.early_arrival_sum_hours += max(0, req.demand_window - t) * wh
            if trace is not None:
                trace.append({
                    "window": t, "drone": u,
                    "action": decision.actions[u] if decision.actions else None,
                    "start_area": route.start_area, "end_area": route.end_area,
                    "customers": list(route.customer_ids),
                    "path_length_m": route.path_length_m,
                    "energy_j": e,
                    "battery_after": 1.0 - e / battery_capacity_j,
                })
        metrics.delivered_count += len(served)

        # Lateness of everything still pending after this window's service.
        area_delay = [0.0] * smap.num_areas
        delay_sum = 0.0
        for rid, req in state.pending.items():
            if rid in served:
                continue
            d = (t - req.demand_window) * wh
            delay_sum += d
            area_delay[request_areas[rid]] += d
        metrics.delay_sum_hours += delay_sum
        for a in range(smap.num_areas):
            metrics.per_area_delay_hours[a] += area_delay[a]

        if decision.reward_areas is not None:
            for u in range(n_drones):
                seen = sum(area_delay[a] for a in decision.reward_areas[u])
                r = reward(cfg.alpha, seen, decision.routes[u].energy_j, reward_scales)
                metrics.reward_sum += r
                metrics.reward_count += 1
                if collect_transitions and decision.observations is not None:
                    open_transitions.append(Transition(
                        observation=decision.observations[u],
                        action=decision.actions[u] if decision.actions else 0,
                        reward=r,
                        action_mask=(decision.action_masks[u]
                                     if decision.action_masks is not None else None),
                    ))

        before = len(state.pending) + len(state.delivered)
        state = advance_window(state, decision.routes, requests)
        arrivals = sum(1 for r in requests if r.demand_window == state.window)
        if len(state.pending) + len(state.delivered) != before + arrivals:
            raise SimulationError("request conservation violated")

    if collect_transitions and open_transitions:
        final_obs, final_masks = controller.boundary_observations(state)
        for u, tr in enumerate(open_transitions):
            tr.next_observation = final_obs[u]
            tr.next_action = None
            tr.terminal = True
            if final_masks:
                tr.next_action_mask = final_masks[u]
        transitions.extend(open_transitions)

    assert len(state.delivered) == metrics.delivered_count
    assert len(state.pending) + len(state.delivered) == total_requests
    return metrics, transitions
