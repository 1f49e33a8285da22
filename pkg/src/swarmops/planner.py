"""Per-window route planning: candidates, enumeration, exact selection.

Each window every drone gets a flight range (its current area plus the
action's destination area, or the whole map for the unrestricted
baseline). The planner takes the most-delayed pending requests inside
each range, enumerates every payload-feasible subset, routes each
subset greedily between the range's depots, prices it with the energy
model, and then picks exactly one plan per drone so that every
shortlisted customer is served exactly once at minimum total energy.

Selection is an exact depth-first branch and bound over per-drone plan
choices. When no exact cover exists the shortlist is shrunk by dropping
its lowest-delay member and everything is rebuilt, which always
terminates because the empty shortlist with idle plans is feasible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .core import Point2D, Request, Scenario
from .energy import RouteEnergyModel
from .segmentation import ServiceMap


class PlannerError(RuntimeError):
    """Malformed planning inputs."""


class InfeasiblePartition(PlannerError):
    """No exact cover of the shortlist exists with the given plans."""

    def __init__(self, message: str, uncoverable: tuple[int, ...] = ()) -> None:
        super().__init__(message)
        self.uncoverable = uncoverable


@dataclass(frozen=True)
class Plan:
    """One priced candidate route for one drone.

    stops lists (location, drop mass) including both depot endpoints;
    customer order inside stops is the flying order. The idle plan has
    no customers and, when start equals end, zero length and energy.
    """

    drone: int
    customer_ids: tuple[int, ...]
    stops: tuple[tuple[Point2D, float], ...]
    start_area: int
    end_area: int
    path_length_m: float
    energy_j: float
    total_mass_kg: float


@dataclass
class PartitionInstance:
    """Input to the exact selection step.

    plans[u] is drone u's option list in enumeration order (index 0 is
    always an empty plan); universe holds every shortlisted customer id
    that must be served exactly once.
    """

    plans: list[list[Plan]]
    universe: tuple[int, ...]

    def to_text(self) -> str:
        """Plain-text dump for solver debugging and golden tests."""
        lines = [f"universe {' '.join(str(c) for c in self.universe)}"]
        for u, options in enumerate(self.plans):
            for i, p in enumerate(options):
                ids = ",".join(str(c) for c in p.customer_ids) or "-"
                lines.append(f"drone {u} plan {i} customers {ids} energy {p.energy_j:.6f}")
        return "\n".join(lines) + "\n"


@dataclass
class PlannerContext:
    """Static per-episode planning inputs shared across windows."""

    scenario: Scenario
    smap: ServiceMap
    energy: RouteEnergyModel
    request_areas: dict[int, int]
    range_cap_m: float | None = None  # None switches the cap off
    energy_cap_j: float | None = None  # battery budget; None switches it off

    @classmethod
    def build(cls, scenario: Scenario, smap: ServiceMap, requests: Sequence[Request],
              *, unrestricted: bool = False) -> "PlannerContext":
        model = RouteEnergyModel(scenario.drone, scenario.constants)
        return cls(
            scenario=scenario,
            smap=smap,
            energy=model,
            request_areas={r.id: smap.area_of(r.location) for r in requests},
            range_cap_m=None if unrestricted else scenario.drone.max_range,
            energy_cap_j=None if unrestricted else model.battery_capacity(),
        )


def top_delayed_candidates(pending: dict[int, Request], window: int, window_hours: float,
                           request_areas: dict[int, int],
                           flight_areas: set[int] | None,
                           start_depot: Point2D, cap: int) -> list[Request]:
    """Up to cap pending requests in range, most delayed first.

    Ties break toward the request closer to the start depot, then the
    lower id, so two drones parked at different depots shortlist
    different members of an equally-late cohort.
    """
    if cap < 1:
        raise PlannerError("candidate cap must be at least 1")
    ranked: list[tuple[float, float, int, Request]] = []
    for rid, req in pending.items():
        if flight_areas is not None and request_areas[rid] not in flight_areas:
            continue
        d = (window - req.demand_window) * window_hours
        ranked.append((-d, start_depot.distance_to(req.location), rid, req))
    ranked.sort(key=lambda t: t[:3])
    return [req for *_, req in ranked[:cap]]


def enumerate_combinations(candidates: Sequence[Request], max_payload: float,
                           max_parcels: int) -> list[tuple[int, ...]]:
    """Index subsets of the candidate list a drone could load.

    Every subset of size <= max_parcels whose masses fit the payload,
    in ascending bitmask order; the empty subset comes first and is
    always included.
    """
    n = len(candidates)
    if n > 30:
        raise PlannerError(f"candidate list too long to enumerate: {n}")
    subsets: list[tuple[int, ...]] = []
    for mask in range(1 << n):
        idx = [i for i in range(n) if mask >> i & 1]
        if len(idx) > max_parcels:
            continue
        if sum(candidates[i].parcel_mass for i in idx) > max_payload + 1e-12:
            continue
        subsets.append(tuple(idx))
    return subsets


def greedy_order(start: Point2D, customers: Sequence[Request]) -> list[Request]:
    """Nearest-neighbour visiting order from the start depot."""
    remaining = list(customers)
    order: list[Request] = []
    here = start
    while remaining:
        best = min(remaining, key=lambda r: (here.distance_to(r.location), r.id))
        remaining.remove(best)
        order.append(best)
        here = best.location
    return order


def greedy_route(start_depot: Point2D, customers: Sequence[Request],
                 end_depot: Point2D) -> tuple[list[Request], float]:
    """Visiting order and total path length for one depot-to-depot route."""
    order = greedy_order(start_depot, customers)
    length = 0.0
    here = start_depot
    for r in order:
        length += here.distance_to(r.location)
        here = r.location
    length += here.distance_to(end_depot)
    return order, length


def cost_plan(ctx: PlannerContext, drone: int, start_area: int, end_area: int,
              order: Sequence[Request]) -> Plan | None:
    """Price one routed subset; None when it cannot be flown.

    A plan is infeasible when its path exceeds the range cap or its
    energy exceeds the battery budget; loaded legs burn more than empty
    ones, so the energy cap can bind before the length cap does.
    """
    start = ctx.smap.depots[start_area]
    end = ctx.smap.depots[end_area]
    stops: list[tuple[Point2D, float]] = [(start, 0.0)]
    stops += [(r.location, r.parcel_mass) for r in order]
    stops.append((end, 0.0))
    length = sum(stops[i][0].distance_to(stops[i + 1][0]) for i in range(len(stops) - 1))
    if ctx.range_cap_m is not None and length > ctx.range_cap_m + 1e-9:
        return None
    energy = ctx.energy.route_energy(stops)
    if ctx.energy_cap_j is not None and energy > ctx.energy_cap_j + 1e-6:
        return None
    return Plan(
        drone=drone,
        customer_ids=tuple(r.id for r in order),
        stops=tuple(stops),
        start_area=start_area,
        end_area=end_area,
        path_length_m=length,
        energy_j=energy,
        total_mass_kg=sum(r.parcel_mass for r in order),
    )


def build_plans(ctx: PlannerContext, drone: int, start_area: int,
                end_area: int | None, candidates: Sequence[Request],
                *, all_endpoints: bool = False) -> list[Plan]:
    """All feasible plans for one drone, enumeration order, idle plan first.

    end_area None sends each subset to the depot nearest its last stop,
    which is the cheapest legal endpoint since the final leg flies
    empty; all_endpoints instead prices every depot as the endpoint of
    every loaded subset (the unrestricted-planning reading where the
    whole map is one range and any depot is a legal terminus). If even
    the customer-free transfer to a fixed end depot breaks the range
    cap the drone falls back to a stay-at-depot idle plan so it always
    has a legal option.
    """
    cfg = ctx.scenario.config
    subsets = enumerate_combinations(candidates, ctx.scenario.drone.max_payload,
                                     cfg.max_parcels_per_drone)
    plans: list[Plan] = []
    for idx in subsets:
        subset = [candidates[i] for i in idx]
        order = greedy_order(ctx.smap.depots[start_area], subset)
        if all_endpoints:
            # Idle stays home; anything loaded may finish at any depot.
            ends = range(ctx.smap.num_areas) if order else [start_area]
            for e in ends:
                plan = cost_plan(ctx, drone, start_area, e, order)
                if plan is not None:
                    plans.append(plan)
            continue
        if end_area is None:
            last = order[-1].location if order else ctx.smap.depots[start_area]
            chosen_end = ctx.smap.area_of(last)
        else:
            chosen_end = end_area
        plan = cost_plan(ctx, drone, start_area, chosen_end, order)
        if plan is not None:
            plans.append(plan)
    if not plans or plans[0].customer_ids:
        # The action's transfer leg itself is out of range: stay home.
        idle = cost_plan(ctx, drone, start_area, start_area, [])
        assert idle is not None
        plans.insert(0, idle)
    return plans


def select_plans(instance: PartitionInstance,
                 *, seed_greedy: bool = False) -> tuple[list[int], float]:
    """Exactly-once cover of the universe at minimum total energy.

    Depth-first branch and bound over drones in index order, trying each
    drone's plans in enumeration order, pruning on accumulated cost and
    on customers no remaining drone can still cover. Strict-improvement
    incumbent updates make the returned optimum the lexicographically
    smallest by plan index. Raises InfeasiblePartition when no exact
    cover exists.

    seed_greedy primes the incumbent with a first-fit cover before the
    search; the cost optimum is unchanged but tie-breaking may then
    settle on the seed instead of the lexicographic minimum. Wide
    instances (many plans per drone) need this or cost pruning only
    kicks in after an exhaustive descent.
    """
    universe = instance.universe
    bit_of = {cid: 1 << i for i, cid in enumerate(universe)}
    full = (1 << len(universe)) - 1
    n_drones = len(instance.plans)

    encoded: list[list[tuple[int, float, int]]] = []
    for u, options in enumerate(instance.plans):
        if not options:
            raise PlannerError(f"drone {u} has no plans, expected at least the idle plan")
        rows = []
        for i, p in enumerate(options):
            mask = 0
            for cid in p.customer_ids:
                if cid not in bit_of:
                    raise PlannerError(
                        f"plan customer {cid} is outside the universe; rebuild the instance")
                mask |= bit_of[cid]
            rows.append((mask, p.energy_j, i))
        # Same customers, same cover: only the cheapest variant (first on
        # ties) can be part of an optimum, so search just that one.
        cheapest: dict[int, int] = {}
        for pos, row in enumerate(rows):
            seen = cheapest.get(row[0])
            if seen is None or row[1] < rows[seen][1]:
                cheapest[row[0]] = pos
        keep = sorted(cheapest.values())
        encoded.append([rows[pos] for pos in keep])

    suffix_cover = [0] * (n_drones + 1)
    for u in range(n_drones - 1, -1, -1):
        suffix_cover[u] = suffix_cover[u + 1]
        for mask, _, _ in encoded[u]:
            suffix_cover[u] |= mask
    if full & ~suffix_cover[0]:
        missing = tuple(cid for cid in universe if not (bit_of[cid] & suffix_cover[0]))
        raise InfeasiblePartition(
            f"customers {missing} appear in no feasible plan", uncoverable=missing)

    best_cost = math.inf
    best_choice: list[int] | None = None
    if seed_greedy:
        seeded = _greedy_cover(encoded, full)
        if seeded is not None:
            best_choice, best_cost = seeded
    choice = [0] * n_drones

    def dfs(u: int, covered: int, cost: float) -> None:
        nonlocal best_cost, best_choice
        if cost >= best_cost:
            return
        if u == n_drones:
            if covered == full:
                best_cost = cost
                best_choice = choice.copy()
            return
        if (full & ~covered) & ~suffix_cover[u]:
            return
        for mask, energy, i in encoded[u]:
            if mask & covered:
                continue
            choice[u] = i
            dfs(u + 1, covered | mask, cost + energy)
        choice[u] = 0

    dfs(0, 0, 0.0)
    if best_choice is None:
        raise InfeasiblePartition("no exact cover of the shortlist exists")
    return best_choice, best_cost


def _greedy_cover(encoded: list[list[tuple[int, float, int]]],
                  full: int) -> tuple[list[int], float] | None:
    """First-fit incumbent: per drone, grab the non-overlapping plan
    covering the most still-open customers (cheapest on ties). None
    when the walk ends short of a full cover."""
    covered = 0
    cost = 0.0
    choice: list[int] = []
    for rows in encoded:
        best = max(rows, key=lambda row: ((row[0] & ~covered).bit_count(),
                                          -row[1], -row[2])
                   if not (row[0] & covered) else (-1, 0.0, 0))
        mask, energy, i = best
        if mask & covered:
            return None  # even doing nothing conflicts; cannot happen with idle plans
        covered |= mask
        cost += energy
        choice.append(i)
    if covered != full:
        return None
    return choice, cost


@dataclass
class _DroneRangeInput:
    start_area: int
    end_area: int | None  # None = unrestricted endpoint choice
    flight_areas: set[int] | None  # None = whole map
    all_endpoints: bool = False


def _solve_window(ctx: PlannerContext, pending: dict[int, Request], window: int,
                  inputs: list[_DroneRangeInput],
                  instance_sink: list[PartitionInstance] | None = None) -> list[Plan]:
    """Shortlist, enumerate, and select with iterative shortlist shrinking."""
    cfg = ctx.scenario.config
    wh = cfg.window_hours
    base_candidates: list[list[Request]] = []
    for u, inp in enumerate(inputs):
        cands = top_delayed_candidates(pending, window, wh, ctx.request_areas,
                                       inp.flight_areas, ctx.smap.depots[inp.start_area],
                                       cfg.max_parcels_per_drone)
        base_candidates.append(cands)

    def delay_of(req: Request) -> float:
        return (window - req.demand_window) * wh

    dropped: set[int] = set()
    while True:
        candidates = [[c for c in cands if c.id not in dropped] for cands in base_candidates]
        plans = [build_plans(ctx, u, inputs[u].start_area, inputs[u].end_area, candidates[u],
                             all_endpoints=inputs[u].all_endpoints)
                 for u in range(len(inputs))]
        by_id: dict[int, Request] = {c.id: c for cands in candidates for c in cands}
        universe = tuple(sorted(by_id))
        covered_somewhere = {cid for options in plans for p in options for cid in p.customer_ids}
        uncoverable = [cid for cid in universe if cid not in covered_somewhere]
        if uncoverable:
            victim = min(uncoverable, key=lambda cid: (delay_of(by_id[cid]), cid))
            dropped.add(victim)
            continue
        instance = PartitionInstance(plans=plans, universe=universe)
        wide = any(inp.all_endpoints for inp in inputs)
        try:
            chosen, _ = select_plans(instance, seed_greedy=wide)
        except InfeasiblePartition:
            if not universe:
                raise
            victim = min(universe, key=lambda cid: (delay_of(by_id[cid]), cid))
            dropped.add(victim)
            continue
        if instance_sink is not None:
            instance_sink.append(instance)
        return [plans[u][chosen[u]] for u in range(len(inputs))]


def plan_window(ctx: PlannerContext, pending: dict[int, Request], window: int,
                start_areas: Sequence[int], target_areas: Sequence[int],
                instance_sink: list[PartitionInstance] | None = None) -> list[Plan]:
    """Range-restricted planning: each drone covers {start, target} areas."""
    if len(start_areas) != len(target_areas):
        raise PlannerError("start_areas and target_areas must align")
    inputs = [_DroneRangeInput(start_area=s, end_area=e, flight_areas={s, e})
              for s, e in zip(start_areas, target_areas)]
    return _solve_window(ctx, pending, window, inputs, instance_sink)


def plan_window_global(ctx: PlannerContext, pending: dict[int, Request], window: int,
                       start_areas: Sequence[int],
                       instance_sink: list[PartitionInstance] | None = None) -> list[Plan]:
    """Whole-map planning: no area filter, every depot a legal endpoint."""
    inputs = [_DroneRangeInput(start_area=s, end_area=None, flight_areas=None,
                               all_endpoints=True)
              for s in start_areas]
    return _solve_window(ctx, pending, window, inputs, instance_sink)


__all__ = [
    "InfeasiblePartition",
    "PartitionInstance",
    "Plan",
    "PlannerContext",
    "PlannerError",
    "build_plans",
    "cost_plan",
    "enumerate_combinations",
    "greedy_order",
    "greedy_route",
    "plan_window",
    "plan_window_global",
    "select_plans",
    "top_delayed_candidates",
]
