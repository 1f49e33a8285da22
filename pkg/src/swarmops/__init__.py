"""Multi-depot drone parcel delivery: energy model, exact per-window
planning, learned flight-range selection, and cross-method evaluation."""

from .core import (DroneSpec, EnvironmentConstants, Point2D, Request, Scenario,
                   ScenarioConfig, ScenarioError, generate_synthetic, load_requests,
                   read_scenario_file, write_requests_csv, write_scenario_file)
from .energy import (EnergyModelError, RouteEnergyModel, battery_capacity, leg_energy,
                     route_energy, solve_induced_velocity)
from .environment import (EpisodeMetrics, RewardScales, SimulationError, Transition,
                          WorldState, run_episode)
from .experiments import (CompareResult, MethodId, MetricsReport, NormalizationBounds,
                          combined_cost, compare_methods, early_arrival, gini,
                          load_policy, method_service_map, run_method, save_policy,
                          train_policy)
from .learning import (LearningConfig, LearningError, PolicyNetwork, ValueNetwork,
                       load_checkpoint, save_checkpoint)
from .planner import (InfeasiblePartition, Plan, PlannerContext, PlannerError,
                      plan_window, plan_window_global)
from .segmentation import ServiceMap, grid_segment, kmeans_segment

__version__ = "0.1.0"

__all__ = [
    "DroneSpec", "EnvironmentConstants", "Point2D", "Request", "Scenario",
    "ScenarioConfig", "ScenarioError", "generate_synthetic", "load_requests",
    "read_scenario_file", "write_requests_csv", "write_scenario_file",
    "EnergyModelError", "RouteEnergyModel", "battery_capacity", "leg_energy",
    "route_energy", "solve_induced_velocity",
    "EpisodeMetrics", "RewardScales", "SimulationError", "Transition",
    "WorldState", "run_episode",
    "CompareResult", "MethodId", "MetricsReport", "NormalizationBounds",
    "combined_cost", "compare_methods", "early_arrival", "gini",
    "load_policy", "method_service_map", "run_method", "save_policy", "train_policy",
    "LearningConfig", "LearningError", "PolicyNetwork", "ValueNetwork",
    "load_checkpoint", "save_checkpoint",
    "InfeasiblePartition", "Plan", "PlannerContext", "PlannerError",
    "plan_window", "plan_window_global",
    "ServiceMap", "grid_segment", "kmeans_segment",
    "__version__",
]
