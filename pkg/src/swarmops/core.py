"""Domain types, request ingestion, and synthetic demand generation.

Coordinates are metres on a rectangular map with the origin in the
south-west corner. Time is discrete: windows are numbered 1..num_windows
and each lasts window_duration seconds. Parcel masses are kilograms.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class ScenarioError(ValueError):
    """Invalid configuration, malformed request data, or impossible setup."""


@dataclass(frozen=True)
class Point2D:
    """Planar position in metres."""

    x: float
    y: float

    def distance_to(self, other: "Point2D") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


def euclidean_distance(a: Point2D, b: Point2D) -> float:
    """Straight-line distance in metres between two points."""
    return math.hypot(a.x - b.x, a.y - b.y)


@dataclass(frozen=True)
class Request:
    """One parcel to deliver to a fixed location within the day.

    demand_window is the window in which the customer expects delivery;
    the request becomes visible to planners at that window and accrues
    delay for every later window it stays undelivered.
    """

    id: int
    location: Point2D
    parcel_mass: float  # kg, > 0
    demand_window: int  # 1-based

    def __post_init__(self) -> None:
        if self.parcel_mass <= 0:
            raise ScenarioError(f"request {self.id}: parcel mass must be positive")
        if self.demand_window < 1:
            raise ScenarioError(f"request {self.id}: demand window is 1-based")


@dataclass(frozen=True)
class DroneSpec:
    """Airframe and mission limits for one drone type.

    Defaults are a quadrotor-class delivery drone: 2 kg body, 1 kg swap
    battery, four 0.5 m rotors, 10 m/s cruise, 80% power efficiency,
    2.5 kg payload, 3 km range per battery.
    """

    body_mass: float = 2.0
    battery_mass: float = 1.0
    rotor_diameter: float = 0.5
    rotor_count: int = 4
    ground_speed: float = 10.0
    power_efficiency: float = 0.8
    max_payload: float = 2.5
    max_range: float = 3000.0

    def __post_init__(self) -> None:
        for name in ("body_mass", "battery_mass", "rotor_diameter", "ground_speed",
                     "power_efficiency", "max_payload", "max_range"):
            if getattr(self, name) <= 0:
                raise ScenarioError(f"drone {name} must be positive")
        if self.rotor_count < 1:
            raise ScenarioError("drone rotor_count must be at least 1")
        if self.power_efficiency > 1.0:
            raise ScenarioError("drone power_efficiency must be in (0, 1]")

    @property
    def empty_mass(self) -> float:
        return self.body_mass + self.battery_mass


@dataclass(frozen=True)
class EnvironmentConstants:
    """Physical constants shared by every flight."""

    gravity: float = 9.81          # m/s^2
    air_density: float = 1.225     # kg/m^3
    pitch_angle: float = math.radians(10.0)  # forward tilt, radians

    def __post_init__(self) -> None:
        if self.gravity <= 0 or self.air_density <= 0:
            raise ScenarioError("gravity and air_density must be positive")
        if not 0.0 <= self.pitch_angle < math.pi / 2:
            raise ScenarioError("pitch_angle must lie in [0, pi/2)")


@dataclass(frozen=True)
class ScenarioConfig:
    """Scenario-level knobs: map, fleet size, horizon, demand shape.

    alpha weighs the energy term against the delay term in the learning
    reward (0 = delay only, 1 = energy only). k_neighbors fixes the
    action set: stay plus the k nearest neighbor depots.
    """

    map_bounds: tuple[float, float] = (10_000.0, 10_000.0)
    num_depots: int = 16
    num_drones: int = 8
    num_windows: int = 12
    window_duration: float = 1800.0  # seconds
    alpha: float = 0.5
    max_parcels_per_drone: int = 4
    rng_seed: int = 0
    k_neighbors: int = 3
    parcel_mass_range: tuple[float, float] = (0.2, 1.0)
    segmentation: str = "kmeans"
    # synthetic demand shape
    requests_per_window: int = 40
    cluster_count: int = 6
    cluster_std: float = 700.0

    def __post_init__(self) -> None:
        w, h = self.map_bounds
        if w <= 0 or h <= 0:
            raise ScenarioError("map_bounds must be positive")
        if self.num_depots < 1:
            raise ScenarioError("num_depots must be at least 1")
        if self.num_drones < 0:
            raise ScenarioError("num_drones must be non-negative")
        if self.num_windows < 1:
            raise ScenarioError("num_windows must be at least 1")
        if self.window_duration <= 0:
            raise ScenarioError("window_duration must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ScenarioError("alpha must lie in [0, 1]")
        if self.max_parcels_per_drone < 1:
            raise ScenarioError("max_parcels_per_drone must be at least 1")
        if not 0 <= self.k_neighbors < self.num_depots:
            raise ScenarioError("k_neighbors must lie in [0, num_depots)")
        lo, hi = self.parcel_mass_range
        if not 0 < lo <= hi:
            raise ScenarioError("parcel_mass_range must satisfy 0 < lo <= hi")
        if self.segmentation not in ("kmeans", "grid"):
            raise ScenarioError("segmentation must be 'kmeans' or 'grid'")
        if self.requests_per_window < 0:
            raise ScenarioError("requests_per_window must be non-negative")
        if self.cluster_count < 1:
            raise ScenarioError("cluster_count must be at least 1")
        if self.cluster_std <= 0:
            raise ScenarioError("cluster_std must be positive")

    @property
    def window_hours(self) -> float:
        return self.window_duration / 3600.0

    @property
    def action_count(self) -> int:
        # stay + k nearest neighbor depots
        return self.k_neighbors + 1


@dataclass(frozen=True)
class Scenario:
    """Everything needed to run one experiment: config + airframe + physics."""

    config: ScenarioConfig = field(default_factory=ScenarioConfig)
    drone: DroneSpec = field(default_factory=DroneSpec)
    constants: EnvironmentConstants = field(default_factory=EnvironmentConstants)

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, config=replace(self.config, rng_seed=seed))

    @classmethod
    def default(cls) -> "Scenario":
        return cls()


REQUEST_CSV_HEADER = ["id", "x_m", "y_m", "parcel_mass_kg", "demand_window"]


def load_requests(path: str | Path, config: ScenarioConfig, drone: DroneSpec) -> list[Request]:
    """Read a request CSV and validate every row against the scenario.

    Expected header: id,x_m,y_m,parcel_mass_kg,demand_window. Rows must
    have unique integer ids, coordinates inside the map, positive mass
    not exceeding the drone payload, and a window in [1, num_windows].
    Errors name the offending row number (header = row 1).

    Returns requests sorted by (demand_window, id).
    """
    path = Path(path)
    w, h = config.map_bounds
    requests: list[Request] = []
    seen: set[int] = set()
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ScenarioError(f"{path}: empty file, expected header {','.join(REQUEST_CSV_HEADER)}")
        if [c.strip() for c in header] != REQUEST_CSV_HEADER:
            raise ScenarioError(
                f"{path}: row 1: bad header {header!r}, expected {','.join(REQUEST_CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(REQUEST_CSV_HEADER):
                raise ScenarioError(f"{path}: row {lineno}: expected {len(REQUEST_CSV_HEADER)} fields, got {len(row)}")
            try:
                rid = int(row[0])
                x, y = float(row[1]), float(row[2])
                mass = float(row[3])
                window = int(row[4])
            except ValueError as exc:
                raise ScenarioError(f"{path}: row {lineno}: {exc}") from exc
            if rid in seen:
                raise ScenarioError(f"{path}: row {lineno}: duplicate request id {rid}")
            if not (0.0 <= x <= w and 0.0 <= y <= h):
                raise ScenarioError(f"{path}: row {lineno}: location ({x}, {y}) outside map bounds {config.map_bounds}")
            if mass <= 0:
                raise ScenarioError(f"{path}: row {lineno}: parcel mass must be positive, got {mass}")
            if mass > drone.max_payload:
                raise ScenarioError(
                    f"{path}: row {lineno}: parcel mass {mass} kg exceeds drone payload {drone.max_payload} kg")
            if not 1 <= window <= config.num_windows:
                raise ScenarioError(
                    f"{path}: row {lineno}: demand_window {window} outside [1, {config.num_windows}]")
            seen.add(rid)
            requests.append(Request(rid, Point2D(x, y), mass, window))
    requests.sort(key=lambda r: (r.demand_window, r.id))
    return requests


def write_requests_csv(requests: list[Request], path: str | Path) -> None:
    """Write requests in the CSV layout load_requests reads back."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REQUEST_CSV_HEADER)
        for r in requests:
            writer.writerow([r.id, repr(r.location.x), repr(r.location.y),
                             repr(r.parcel_mass), r.demand_window])


def generate_synthetic(config: ScenarioConfig,
                       cluster_count: int | None = None,
                       requests_per_window: int | None = None,
                       *,
                       cluster_std: float | None = None,
                       cluster_seed: int | None = None) -> list[Request]:
    """Sample a clustered demand day, deterministic in config.rng_seed.

    Demand locations follow a mixture of isotropic Gaussians whose
    centres are drawn uniformly on the map; samples are clipped to the
    bounds. Each window receives exactly requests_per_window requests;
    masses are uniform over parcel_mass_range. Ids count up from 1 in
    (window, id) order, so the output is already sorted.

    cluster_seed pins the centres to their own stream so repeated days
    share one demand geography while arrivals resample; left None, the
    centres consume the head of the main stream as always.
    """
    n_clusters = config.cluster_count if cluster_count is None else cluster_count
    per_window = config.requests_per_window if requests_per_window is None else requests_per_window
    std = config.cluster_std if cluster_std is None else cluster_std
    if n_clusters < 1:
        raise ScenarioError("cluster_count must be at least 1")
    if per_window < 0:
        raise ScenarioError("requests_per_window must be non-negative")

    rng = np.random.default_rng(config.rng_seed)
    w, h = config.map_bounds
    centre_rng = rng if cluster_seed is None else np.random.default_rng(cluster_seed)
    centres = centre_rng.uniform([0.0, 0.0], [w, h], size=(n_clusters, 2))
    lo, hi = config.parcel_mass_range

    requests: list[Request] = []
    rid = 1
    for window in range(1, config.num_windows + 1):
        for slot in range(per_window):
            # Stratified cluster choice: every window spreads its demand
            # across clusters evenly instead of multinomially, so day
            # difficulty does not wander with assignment noise.
            c = slot % n_clusters
            x, y = centres[c] + rng.normal(0.0, std, size=2)
            x = float(min(max(x, 0.0), w))
            y = float(min(max(y, 0.0), h))
            mass = float(rng.uniform(lo, hi))
            requests.append(Request(rid, Point2D(x, y), mass, window))
            rid += 1
    return requests


# Flat key=value config file support. One key per line, '#' comments.
# Keys are grouped by the dataclass they feed.

_CONFIG_KEYS: dict[str, tuple[str, str, type]] = {
    "map_width_m": ("config", "map_bounds_w", float),
    "map_height_m": ("config", "map_bounds_h", float),
    "num_depots": ("config", "num_depots", int),
    "num_drones": ("config", "num_drones", int),
    "num_windows": ("config", "num_windows", int),
    "window_duration_s": ("config", "window_duration", float),
    "alpha": ("config", "alpha", float),
    "max_parcels_per_drone": ("config", "max_parcels_per_drone", int),
    "rng_seed": ("config", "rng_seed", int),
    "k_neighbors": ("config", "k_neighbors", int),
    "parcel_mass_min_kg": ("config", "parcel_mass_min", float),
    "parcel_mass_max_kg": ("config", "parcel_mass_max", float),
    "segmentation": ("config", "segmentation", str),
    "requests_per_window": ("config", "requests_per_window", int),
    "cluster_count": ("config", "cluster_count", int),
    "cluster_std_m": ("config", "cluster_std", float),
    "drone_body_mass_kg": ("drone", "body_mass", float),
    "drone_battery_mass_kg": ("drone", "battery_mass", float),
    "rotor_diameter_m": ("drone", "rotor_diameter", float),
    "rotor_count": ("drone", "rotor_count", int),
    "ground_speed_mps": ("drone", "ground_speed", float),
    "power_efficiency": ("drone", "power_efficiency", float),
    "max_payload_kg": ("drone", "max_payload", float),
    "max_range_m": ("drone", "max_range", float),
    "gravity_mps2": ("constants", "gravity", float),
    "air_density_kgpm3": ("constants", "air_density", float),
    "pitch_angle_deg": ("constants", "pitch_angle_deg", float),
}


def read_scenario_file(path: str | Path) -> Scenario:
    """Parse a flat key=value scenario file into a Scenario.

    Unknown keys and unparsable values raise ScenarioError with the line
    number, so CLI callers can map them to a config-error exit.
    """
    path = Path(path)
    raw: dict[str, object] = {}
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ScenarioError(f"{path}: line {lineno}: expected key = value")
            key, _, value = stripped.partition("=")
            key, value = key.strip(), value.strip()
            if key not in _CONFIG_KEYS:
                raise ScenarioError(f"{path}: line {lineno}: unknown key {key!r}")
            _, _, caster = _CONFIG_KEYS[key]
            try:
                raw[key] = caster(value)
            except ValueError as exc:
                raise ScenarioError(f"{path}: line {lineno}: {key}: {exc}") from exc
    return scenario_from_mapping(raw)


def scenario_from_mapping(raw: dict[str, object]) -> Scenario:
    """Build a Scenario from flat config keys, falling back to defaults."""
    cfg_kwargs: dict[str, object] = {}
    drone_kwargs: dict[str, object] = {}
    const_kwargs: dict[str, object] = {}
    bounds_w = raw.get("map_width_m")
    bounds_h = raw.get("map_height_m")
    mass_lo = raw.get("parcel_mass_min_kg")
    mass_hi = raw.get("parcel_mass_max_kg")
    for key, value in raw.items():
        group, fname, _ = _CONFIG_KEYS[key]
        if fname in ("map_bounds_w", "map_bounds_h", "parcel_mass_min", "parcel_mass_max"):
            continue
        if fname == "pitch_angle_deg":
            const_kwargs["pitch_angle"] = math.radians(float(value))  # type: ignore[arg-type]
            continue
        {"config": cfg_kwargs, "drone": drone_kwargs, "constants": const_kwargs}[group][fname] = value
    if bounds_w is not None or bounds_h is not None:
        cfg_kwargs["map_bounds"] = (float(bounds_w) if bounds_w is not None else 10_000.0,
                                    float(bounds_h) if bounds_h is not None else 10_000.0)
    if mass_lo is not None or mass_hi is not None:
        cfg_kwargs["parcel_mass_range"] = (float(mass_lo if mass_lo is not None else 0.2),
                                           float(mass_hi if mass_hi is not None else 1.0))
    return Scenario(config=ScenarioConfig(**cfg_kwargs),  # type: ignore[arg-type]
                    drone=DroneSpec(**drone_kwargs),  # type: ignore[arg-type]
                    constants=EnvironmentConstants(**const_kwargs))  # type: ignore[arg-type]


def write_scenario_file(scenario: Scenario, path: str | Path) -> None:
    """Serialize a Scenario back to the flat key=value form."""
    cfg, drone, consts = scenario.config, scenario.drone, scenario.constants
    lines = [
        f"map_width_m = {cfg.map_bounds[0]}",
        f"map_height_m = {cfg.map_bounds[1]}",
        f"num_depots = {cfg.num_depots}",
        f"num_drones = {cfg.num_drones}",
        f"num_windows = {cfg.num_windows}",
        f"window_duration_s = {cfg.window_duration}",
        f"alpha = {cfg.alpha}",
        f"max_parcels_per_drone = {cfg.max_parcels_per_drone}",
        f"rng_seed = {cfg.rng_seed}",
        f"k_neighbors = {cfg.k_neighbors}",
        f"parcel_mass_min_kg = {cfg.parcel_mass_range[0]}",
        f"parcel_mass_max_kg = {cfg.parcel_mass_range[1]}",
        f"segmentation = {cfg.segmentation}",
        f"requests_per_window = {cfg.requests_per_window}",
        f"cluster_count = {cfg.cluster_count}",
        f"cluster_std_m = {cfg.cluster_std}",
        f"drone_body_mass_kg = {drone.body_mass}",
        f"drone_battery_mass_kg = {drone.battery_mass}",
        f"rotor_diameter_m = {drone.rotor_diameter}",
        f"rotor_count = {drone.rotor_count}",
        f"ground_speed_mps = {drone.ground_speed}",
        f"power_efficiency = {drone.power_efficiency}",
        f"max_payload_kg = {drone.max_payload}",
        f"max_range_m = {drone.max_range}",
        f"gravity_mps2 = {consts.gravity}",
        f"air_density_kgpm3 = {consts.air_density}",
        f"pitch_angle_deg = {math.degrees(consts.pitch_angle)}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")
