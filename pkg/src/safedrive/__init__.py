"""Supervised safe-control simulation toolkit for vehicle obstacle avoidance."""

from .mismatch import (DisturbanceSet, GridSpec, default_grid, estimate_delta,
                       one_step_mismatch, rollout_mismatch)
from .paths import PathExtentError, ReferencePath
from .qp import (Feasible, Infeasible, MaxIter, QpProblem, QpSettings,
                 check_certificate, solve)
from .scenario import (Metrics, ScenarioConfig, SimulationLog,
                       counterfactual_rollout, run_scenario, run_sweep,
                       scenario_metrics)
from .supervisor import (Certified, DetectionEvent, MpcConfig, ObstacleSpec,
                         PolytopeSpec, Supervisor, SupervisorState,
                         build_horizon_constraints, condense, default_config)
from .vehicle import (ContinuousLTI, DiscreteLTI, ErrorState, PlantState,
                      RateInput, ReferenceInput, VehicleParams,
                      build_continuous_model, default_params, discretize_exact,
                      plant_step, pose_from_error_state, to_error_state)

__all__ = [
    "Certified", "ContinuousLTI", "DetectionEvent", "DiscreteLTI",
    "DisturbanceSet", "ErrorState", "Feasible", "GridSpec", "Infeasible",
    "MaxIter", "Metrics", "MpcConfig", "ObstacleSpec", "PathExtentError",
    "PlantState", "PolytopeSpec", "QpProblem", "QpSettings", "RateInput",
    "ReferenceInput", "ReferencePath", "ScenarioConfig", "SimulationLog",
    "Supervisor", "SupervisorState", "VehicleParams",
    "build_continuous_model", "build_horizon_constraints", "check_certificate",
    "condense", "counterfactual_rollout", "default_config", "default_grid",
    "default_params", "discretize_exact", "estimate_delta",
    "one_step_mismatch", "plant_step", "pose_from_error_state",
    "rollout_mismatch", "run_scenario", "run_sweep", "scenario_metrics",
    "solve", "to_error_state",
]
