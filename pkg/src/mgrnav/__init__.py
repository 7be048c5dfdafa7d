"""Decentralized multi-robot navigation with merry-go-round deadlock prevention.

A CLF-CBF quadratic-program safety controller keeps robots collision-free;
a lightweight peer-to-peer roundabout maneuver predicts deadlocks and routes
the involved robots around a temporary circular reference path until each can
escape toward its goal.
"""

from .engine import Metrics, TraceRecord, compute_metrics, run, run_batch
from .geometry import Circle, Rect, Sector, min_dist_linear_trajectories
from .mgr import Roundabout, RoundaboutRegistry, step_mgr
from .params import ControlParams, MgrParams, SimParams, default_params
from .qp import QpProblem, QpSolution, enumeration_oracle, solve
from .world import (
    PlacementInfeasible,
    RobotState,
    ScenarioConfig,
    Workspace,
    generate_scenario,
    obstacle_coverage,
)

__version__ = "0.1.0"

__all__ = [
    "Circle", "ControlParams", "Metrics", "MgrParams", "PlacementInfeasible",
    "QpProblem", "QpSolution", "Rect", "RobotState", "Roundabout",
    "RoundaboutRegistry", "ScenarioConfig", "Sector", "SimParams",
    "TraceRecord", "Workspace", "compute_metrics", "default_params",
    "enumeration_oracle", "generate_scenario", "min_dist_linear_trajectories",
    "obstacle_coverage", "run", "run_batch", "solve", "step_mgr",
]
