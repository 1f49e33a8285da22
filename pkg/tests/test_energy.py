"""Rotor physics tests.

The oracle for the implicit induced-velocity equation is an in-test
bisection on the residual written out from first principles, kept
independent of the production fixed-point solver.
"""

import math

import numpy as np
import pytest

from swarmops.core import DroneSpec, EnvironmentConstants, Point2D
from swarmops.energy import (EnergyModelError, EnergyModelInputs, RouteEnergyModel,
                             battery_capacity, hover_induced_velocity, leg_energy,
                             leg_power, leg_result, remaining_parcel_mass,
                             required_thrust, route_energy, solve_induced_velocity)

G = 9.81
RHO = 1.225


def oracle_residual(v_hat: float, thrust: float, v: float, pitch: float,
                    d: float, r: float, rho: float) -> float:
    """Momentum-theory balance: disk airflow times induced velocity vs thrust."""
    airflow = math.hypot(v * math.cos(pitch), v * math.sin(pitch) + v_hat)
    return v_hat * math.pi * d * d * r * rho * airflow - 2.0 * thrust


def oracle_bisect(thrust: float, v: float, pitch: float,
                  d: float = 0.5, r: float = 4, rho: float = RHO) -> float:
    """Independent root of the residual on [0, hover bound]."""
    hi = math.sqrt(2.0 * thrust / (math.pi * d * d * r * rho))
    lo = 0.0
    assert oracle_residual(hi, thrust, v, pitch, d, r, rho) >= -1e-9
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if oracle_residual(mid, thrust, v, pitch, d, r, rho) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# Frozen from the closed form sqrt(2T / (pi d^2 r rho)) at T = 3 kg * g.
HOVER_V_HAT = 3.910813882700739
HOVER_POWER = 143.8690657098534


def table_drone() -> DroneSpec:
    return DroneSpec()


def inputs(v: float = 10.0, pitch: float = math.radians(10)) -> EnergyModelInputs:
    return EnergyModelInputs(ground_speed=v, pitch_angle=pitch, air_density=RHO,
                             rotor_diameter=0.5, rotor_count=4)


class TestThrust:
    def test_level_flight_is_weight(self):
        assert required_thrust(3.0, 0.0, G) == pytest.approx(29.43)

    def test_quarter_pi_doubles(self):
        assert required_thrust(3.0, math.pi / 4, G) == pytest.approx(58.86)

    def test_loaded_airframe(self):
        # body 2 + battery 1 + parcel 0.5
        assert required_thrust(3.5, 0.0, G) == pytest.approx(34.335)

    def test_negative_mass_rejected(self):
        with pytest.raises(EnergyModelError):
            required_thrust(-1.0, 0.0, G)


class TestRemainingMass:
    def test_subtraction(self):
        assert remaining_parcel_mass(1.5, 0.5) == pytest.approx(1.0)

    def test_final_leg_empty(self):
        assert remaining_parcel_mass(0.7, 0.7) == pytest.approx(0.0)

    def test_overdrop_rejected(self):
        with pytest.raises(EnergyModelError):
            remaining_parcel_mass(0.5, 0.8)


class TestInducedVelocity:
    def test_hover_closed_form(self):
        t = required_thrust(3.0, 0.0, G)
        closed = hover_induced_velocity(t, inputs(v=0.0, pitch=0.0))
        got = solve_induced_velocity(t, inputs(v=0.0, pitch=0.0))
        assert closed == pytest.approx(HOVER_V_HAT, rel=1e-12)
        assert got == pytest.approx(closed, rel=1e-6)

    def test_hover_scaling(self):
        t = required_thrust(3.0, 0.0, G)
        one = solve_induced_velocity(t, inputs(v=0.0, pitch=0.0))
        four = solve_induced_velocity(4.0 * t, inputs(v=0.0, pitch=0.0))
        assert four == pytest.approx(2.0 * one, rel=1e-9)

    def test_forward_flight_matches_bisection(self):
        t = required_thrust(3.0, 0.0, G)
        got = solve_induced_velocity(t, inputs(v=10.0, pitch=0.0))
        want = oracle_bisect(t, v=10.0, pitch=0.0)
        assert got == pytest.approx(want, rel=1e-9)
        # Forward airflow sheds induced velocity relative to hover.
        assert got < HOVER_V_HAT

    def test_residual_small_on_fuzzed_inputs(self):
        rng = np.random.default_rng(42)
        for _ in range(300):
            mass = rng.uniform(2.0, 5.5)
            v = rng.uniform(0.0, 25.0)
            pitch = rng.uniform(0.0, math.radians(45))
            t = required_thrust(mass, pitch, G)
            inp = inputs(v=v, pitch=pitch)
            v_hat = solve_induced_velocity(t, inp)
            rel = abs(oracle_residual(v_hat, t, v, pitch, 0.5, 4, RHO)) / (2.0 * t)
            assert rel < 1e-9


class TestPower:
    def test_hover_power(self):
        t = required_thrust(3.0, 0.0, G)
        p = leg_power(t, HOVER_V_HAT, inputs(v=0.0, pitch=0.0), efficiency=0.8)
        assert p == pytest.approx(HOVER_POWER, rel=1e-9)

    def test_efficiency_inverse(self):
        t = required_thrust(3.0, 0.0, G)
        inp = inputs()
        v_hat = solve_induced_velocity(t, inp)
        assert leg_power(t, v_hat, inp, efficiency=0.4) == pytest.approx(
            2.0 * leg_power(t, v_hat, inp, efficiency=0.8))

    def test_zero_vertical_airflow(self):
        assert leg_power(50.0, 0.0, inputs(v=12.0, pitch=0.0), efficiency=0.8) == 0.0


class TestLegEnergy:
    def test_zero_distance(self):
        assert leg_energy(table_drone(), EnvironmentConstants(), 0.5, 0.0) == 0.0

    def test_linear_in_distance(self):
        d, c = table_drone(), EnvironmentConstants()
        assert leg_energy(d, c, 0.5, 2000.0) == pytest.approx(
            2.0 * leg_energy(d, c, 0.5, 1000.0), rel=1e-12)

    def test_parcel_strictly_costs(self):
        d, c = table_drone(), EnvironmentConstants()
        loaded = leg_energy(d, c, 1.0, 1000.0)
        empty = leg_energy(d, c, 0.0, 1000.0)
        assert loaded > empty
        # Against the independent bisection root at both masses.
        for parcel, got in ((1.0, loaded), (0.0, empty)):
            t = required_thrust(d.empty_mass + parcel, c.pitch_angle, c.gravity)
            v_hat = oracle_bisect(t, d.ground_speed, c.pitch_angle)
            p = (d.ground_speed * math.sin(c.pitch_angle) + v_hat) * t / d.power_efficiency
            assert got == pytest.approx(p * 1000.0 / d.ground_speed, rel=1e-9)

    def test_monotone_in_mass_fuzzed(self):
        d, c = table_drone(), EnvironmentConstants()
        rng = np.random.default_rng(3)
        for _ in range(200):
            m1, m2 = sorted(rng.uniform(0.0, d.max_payload, size=2))
            if m2 - m1 < 1e-9:
                continue
            assert leg_energy(d, c, m1, 500.0) < leg_energy(d, c, m2, 500.0)


class TestRouteEnergy:
    def test_depot_to_depot(self):
        d, c = table_drone(), EnvironmentConstants()
        stops = [(Point2D(0, 0), 0.0), (Point2D(1200.0, 0), 0.0)]
        assert route_energy(d, c, stops) == pytest.approx(leg_energy(d, c, 0.0, 1200.0))

    def test_two_leg_decomposition(self):
        d, c = table_drone(), EnvironmentConstants()
        stops = [(Point2D(0, 0), 0.0), (Point2D(800.0, 0), 0.9), (Point2D(0, 0), 0.0)]
        want = leg_energy(d, c, 0.9, 800.0) + leg_energy(d, c, 0.0, 800.0)
        assert route_energy(d, c, stops) == pytest.approx(want, rel=1e-12)

    def test_symmetric_orders_cost_the_same(self):
        d, c = table_drone(), EnvironmentConstants()
        # A and B mirror each other around the depot axis, equal masses.
        a, b = Point2D(1000.0, 400.0), Point2D(1000.0, -400.0)
        depot = Point2D(0, 0)
        ab = route_energy(d, c, [(depot, 0.0), (a, 0.5), (b, 0.5), (depot, 0.0)])
        ba = route_energy(d, c, [(depot, 0.0), (b, 0.5), (a, 0.5), (depot, 0.0)])
        assert ab == pytest.approx(ba, rel=1e-12)

    def test_payload_cap_enforced(self):
        d, c = table_drone(), EnvironmentConstants()
        stops = [(Point2D(0, 0), 0.0), (Point2D(100.0, 0), 3.0), (Point2D(0, 0), 0.0)]
        with pytest.raises(EnergyModelError):
            route_energy(d, c, stops)

    def test_model_cache_matches_direct(self):
        d, c = table_drone(), EnvironmentConstants()
        model = RouteEnergyModel(d, c)
        stops = [(Point2D(0, 0), 0.0), (Point2D(500.0, 300.0), 1.1),
                 (Point2D(900.0, -100.0), 0.4), (Point2D(0, 0), 0.0)]
        assert model.route_energy(stops) == pytest.approx(route_energy(d, c, stops))
        assert model.route_energy(stops) == pytest.approx(route_energy(d, c, stops))

    def test_battery_is_empty_max_range_flight(self):
        d, c = table_drone(), EnvironmentConstants()
        assert battery_capacity(d, c) == pytest.approx(
            leg_energy(d, c, 0.0, d.max_range), rel=1e-12)


class TestLegResult:
    def test_reports_residual(self):
        d, c = table_drone(), EnvironmentConstants()
        res = leg_result(d, c, 0.7, 1500.0)
        assert abs(res.residual) / (2.0 * res.thrust) < 1e-9
        assert res.energy == pytest.approx(res.power * 1500.0 / d.ground_speed)
