"""Flight power and energy for tilted multirotor cruise.

Thrust balances weight plus the drag of flying at a fixed forward pitch:
T = m * g * (1 + tan(pitch)). The induced airflow v_hat through the
rotor disks satisfies

    v_hat * pi * d^2 * r * rho * sqrt((v cos p)^2 + (v sin p + v_hat)^2) = 2 * T

with d the rotor diameter, r the rotor count, rho air density, v ground
speed, p pitch. Electrical power is (v sin p + v_hat) * T / efficiency,
and a leg of length L flown at speed v costs P * L / v joules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core import DroneSpec, EnvironmentConstants, Point2D

# Relative convergence target for the induced-velocity solve; the
# residual scaled by 2T ends up well below 1e-9.
_REL_TOL = 1e-12
_MAX_FIXED_POINT_ITER = 200
_MAX_BISECT_ITER = 200


class EnergyModelError(ValueError):
    """Physically impossible inputs to the energy model."""


@dataclass(frozen=True)
class EnergyModelInputs:
    """Airframe and atmosphere values the induced-velocity solve needs."""

    ground_speed: float
    pitch_angle: float
    air_density: float
    rotor_diameter: float
    rotor_count: int

    @property
    def disk_term(self) -> float:
        # pi * d^2 * r * rho, the momentum-theory denominator
        return math.pi * self.rotor_diameter ** 2 * self.rotor_count * self.air_density


@dataclass(frozen=True)
class LegResult:
    """Solved quantities for one constant-mass leg."""

    thrust: float            # N
    induced_velocity: float  # m/s
    power: float             # W
    energy: float            # J
    residual: float          # leftover of the implicit equation, N


def required_thrust(total_mass: float, pitch_angle: float, gravity: float) -> float:
    """Thrust in newtons to hold altitude at the given forward pitch."""
    if total_mass <= 0:
        raise EnergyModelError(f"total mass must be positive, got {total_mass}")
    if not 0.0 <= pitch_angle < math.pi / 2:
        raise EnergyModelError(f"pitch angle must lie in [0, pi/2), got {pitch_angle}")
    return total_mass * gravity * (1.0 + math.tan(pitch_angle))


def remaining_parcel_mass(current_mass: float, dropped_mass: float) -> float:
    """Parcel mass still on board after one drop-off."""
    if dropped_mass < 0:
        raise EnergyModelError("dropped mass must be non-negative")
    if dropped_mass > current_mass + 1e-12:
        raise EnergyModelError(
            f"cannot drop {dropped_mass} kg, only {current_mass} kg on board")
    return max(current_mass - dropped_mass, 0.0)


def hover_induced_velocity(thrust: float, inputs: EnergyModelInputs) -> float:
    """Closed form at zero ground speed: sqrt(2T / (pi d^2 r rho))."""
    return math.sqrt(2.0 * thrust / inputs.disk_term)


def induced_velocity_residual(v_hat: float, thrust: float, inputs: EnergyModelInputs) -> float:
    """Implicit-equation mismatch in newtons; zero at the physical root."""
    v = inputs.ground_speed
    p = inputs.pitch_angle
    airflow = math.hypot(v * math.cos(p), v * math.sin(p) + v_hat)
    return v_hat * inputs.disk_term * airflow - 2.0 * thrust


def solve_induced_velocity(thrust: float, inputs: EnergyModelInputs,
                           *, rel_tol: float = _REL_TOL) -> float:
    """Solve the implicit induced-velocity equation for its non-negative root.

    The residual is strictly increasing in v_hat on [0, hover bound] and
    changes sign there, so a damped fixed-point iteration started at the
    hover value almost always converges; bisection on the bracket is the
    fallback when it stalls.
    """
    if thrust <= 0:
        raise EnergyModelError(f"thrust must be positive, got {thrust}")
    v = inputs.ground_speed
    p = inputs.pitch_angle
    disk = inputs.disk_term
    hi = hover_induced_velocity(thrust, inputs)
    if v == 0.0:
        return hi

    v_hat = hi
    for _ in range(_MAX_FIXED_POINT_ITER):
        airflow = math.hypot(v * math.cos(p), v * math.sin(p) + v_hat)
        nxt = 0.5 * (v_hat + 2.0 * thrust / (disk * airflow))
        if abs(nxt - v_hat) <= rel_tol * max(nxt, 1e-30):
            return nxt
        v_hat = nxt

    # Fixed point stalled; fall back to bisection on the sign-change bracket.
    lo, up = 0.0, hi
    for _ in range(_MAX_BISECT_ITER):
        mid = 0.5 * (lo + up)
        if induced_velocity_residual(mid, thrust, inputs) < 0.0:
            lo = mid
        else:
            up = mid
        if up - lo <= rel_tol * max(up, 1e-30):
            break
    return 0.5 * (lo + up)


def leg_power(thrust: float, induced_velocity: float, inputs: EnergyModelInputs,
              efficiency: float) -> float:
    """Electrical power in watts while cruising on one leg."""
    if not 0 < efficiency <= 1:
        raise EnergyModelError(f"efficiency must lie in (0, 1], got {efficiency}")
    v = inputs.ground_speed
    p = inputs.pitch_angle
    return (v * math.sin(p) + induced_velocity) * thrust / efficiency


def _inputs_for(spec: DroneSpec, constants: EnvironmentConstants) -> EnergyModelInputs:
    return EnergyModelInputs(
        ground_speed=spec.ground_speed,
        pitch_angle=constants.pitch_angle,
        air_density=constants.air_density,
        rotor_diameter=spec.rotor_diameter,
        rotor_count=spec.rotor_count,
    )


def leg_result(spec: DroneSpec, constants: EnvironmentConstants,
               parcel_mass: float, distance: float) -> LegResult:
    """Full leg solve: thrust, induced velocity, power, energy, residual."""
    if parcel_mass < 0:
        raise EnergyModelError("parcel mass must be non-negative")
    if distance < 0:
        raise EnergyModelError("distance must be non-negative")
    inputs = _inputs_for(spec, constants)
    total_mass = spec.empty_mass + parcel_mass
    thrust = required_thrust(total_mass, constants.pitch_angle, constants.gravity)
    v_hat = solve_induced_velocity(thrust, inputs)
    power = leg_power(thrust, v_hat, inputs, spec.power_efficiency)
    energy = power * distance / spec.ground_speed
    return LegResult(
        thrust=thrust,
        induced_velocity=v_hat,
        power=power,
        energy=energy,
        residual=induced_velocity_residual(v_hat, thrust, inputs),
    )


def leg_energy(spec: DroneSpec, constants: EnvironmentConstants,
               parcel_mass: float, distance: float) -> float:
    """Joules to fly one leg carrying parcel_mass kg of cargo."""
    return leg_result(spec, constants, parcel_mass, distance).energy


def route_energy(spec: DroneSpec, constants: EnvironmentConstants,
                 stops: list[tuple[Point2D, float]]) -> float:
    """Total joules over an ordered route with sequential drop-offs.

    stops is [(location, mass_dropped_there), ...] including both depot
    endpoints (which drop nothing). The parcel mass carried into a stop
    is the sum of all drops at and after it, so the leg into the final
    depot always flies empty and the take-off load is the full total.
    """
    if len(stops) < 2:
        raise EnergyModelError("route needs at least a start and an end stop")
    drops = [m for _, m in stops]
    if any(m < 0 for m in drops):
        raise EnergyModelError("drop masses must be non-negative")
    if drops[0] != 0.0 or drops[-1] != 0.0:
        raise EnergyModelError("depot endpoints must not drop parcels")
    total = sum(drops)
    if total > spec.max_payload + 1e-9:
        raise EnergyModelError(
            f"take-off load {total} kg exceeds payload {spec.max_payload} kg")

    # carried[i] = parcel mass on the leg arriving at stop i, i.e. every
    # drop not yet made: the one at i itself plus all later ones
    carried = 0.0
    carried_into: list[float] = [0.0] * len(stops)
    for i in range(len(stops) - 1, 0, -1):
        carried += drops[i]
        carried_into[i] = carried
    total_energy = 0.0
    for i in range(1, len(stops)):
        dist = stops[i - 1][0].distance_to(stops[i][0])
        if dist == 0.0:
            continue
        total_energy += leg_energy(spec, constants, carried_into[i], dist)
    return total_energy


def battery_capacity(spec: DroneSpec, constants: EnvironmentConstants) -> float:
    """Usable battery joules, sized so an empty max-range flight drains it."""
    return leg_energy(spec, constants, 0.0, spec.max_range)


class RouteEnergyModel:
    """Route energy with per-mass memoisation of the power draw.

    The induced-velocity solve only depends on total mass for a fixed
    airframe and atmosphere, so planners costing many routes over the
    same handful of parcel-mass partial sums reuse solved legs.
    """

    def __init__(self, spec: DroneSpec, constants: EnvironmentConstants) -> None:
        self.spec = spec
        self.constants = constants
        self._inputs = _inputs_for(spec, constants)
        self._power_cache: dict[float, float] = {}

    def power(self, parcel_mass: float) -> float:
        """Cruise power in watts while carrying parcel_mass kg."""
        cached = self._power_cache.get(parcel_mass)
        if cached is not None:
            return cached
        total_mass = self.spec.empty_mass + parcel_mass
        thrust = required_thrust(total_mass, self.constants.pitch_angle, self.constants.gravity)
        v_hat = solve_induced_velocity(thrust, self._inputs)
        p = leg_power(thrust, v_hat, self._inputs, self.spec.power_efficiency)
        self._power_cache[parcel_mass] = p
        return p

    def leg_energy(self, parcel_mass: float, distance: float) -> float:
        if distance < 0:
            raise EnergyModelError("distance must be non-negative")
        return self.power(parcel_mass) * distance / self.spec.ground_speed

    def route_energy(self, stops: list[tuple[Point2D, float]]) -> float:
        """Same contract as the module-level route_energy, but cached."""
        if len(stops) < 2:
            raise EnergyModelError("route needs at least a start and an end stop")
        drops = [m for _, m in stops]
        if drops[0] != 0.0 or drops[-1] != 0.0:
            raise EnergyModelError("depot endpoints must not drop parcels")
        carried = 0.0
        carried_into = [0.0] * len(stops)
        for i in range(len(stops) - 1, 0, -1):
            carried += drops[i]
            carried_into[i] = carried
        if carried > self.spec.max_payload + 1e-9:
            raise EnergyModelError(
                f"take-off load {carried} kg exceeds payload {self.spec.max_payload} kg")
        total = 0.0
        for i in range(1, len(stops)):
            dist = stops[i - 1][0].distance_to(stops[i][0])
            if dist:
                total += self.leg_energy(carried_into[i], dist)
        return total

    def battery_capacity(self) -> float:
        return self.leg_energy(0.0, self.spec.max_range)


__all__ = [
    "EnergyModelError",
    "EnergyModelInputs",
    "LegResult",
    "RouteEnergyModel",
    "battery_capacity",
    "hover_induced_velocity",
    "induced_velocity_residual",
    "leg_energy",
    "leg_power",
    "leg_result",
    "remaining_parcel_mass",
    "required_thrust",
    "route_energy",
    "solve_induced_velocity",
]
