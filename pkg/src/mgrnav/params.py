"""Simulation parameters and their validity ranges.

Defaults match the experimental setup this package reproduces: 16m x 16m
workspace, robot safety margin r_safe = 0.22 m, v_max = 0.8 m/s,
omega_max = pi/2 rad/s, H = diag(2, 2, 1), gamma(V) = V, alpha(h) = 5h,
deadlock threshold k_D = 1, roundabout proximity delta_c = 2 m, roundabout
radius 0.3 m, communication range 1 m, radius increment k = 0.1 m and
proportional gain k_p = 0.05. The escape half-angle delta_theta defaults per
environment: pi/6 with obstacles, pi/12 without.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

METHOD_MGR = "mgr"
METHOD_CLF_CBF = "clf-cbf"
METHODS = (METHOD_MGR, METHOD_CLF_CBF)

ENVIRONMENTS = ("free", "circ15", "rect15", "swap")
OBSTACLE_ENVIRONMENTS = ("circ15", "rect15")


class ParamError(ValueError):
    """A parameter violates its documented range."""


@dataclass
class ControlParams:
    """Gains and limits for the per-robot safety controller."""

    r_safe: float = 0.22          # per-robot safety margin [m]
    clf_gain: float = 1.0         # lambda in gamma(V) = lambda*V
    cbf_gain: float = 5.0         # beta in alpha(h) = beta*h
    v_max: float = 0.8            # max linear speed [m/s]
    omega_max: float = math.pi / 2  # max angular speed [rad/s]
    lookahead: float = 0.05       # look-ahead offset for unicycle conversion [m]
    goal_gain: float = 1.0        # proportional gain of the goal-seeking law [1/s]
    obstacle_trigger: float = 0.3  # extra range beyond d_safe that arms wall-following [m]
    clf_ref_dist: float = 1.0     # receding-reference horizon of the stability row [m]

    @property
    def d_safe(self) -> float:
        """Minimum allowed inter-robot distance; exactly 2 * r_safe."""
        return 2.0 * self.r_safe

    def validate(self) -> None:
        for name in ("r_safe", "clf_gain", "cbf_gain", "v_max", "omega_max",
                     "lookahead", "goal_gain", "obstacle_trigger", "clf_ref_dist"):
            if not getattr(self, name) > 0.0:
                raise ParamError(f"{name} must be positive")


@dataclass
class MgrParams:
    """Knobs of the merry-go-round deadlock-prevention layer."""

    horizon: float = 1.0          # T, deadlock prediction horizon [s]
    k_d: float = 1.0              # deadlock prediction threshold, in [1, 2)
    delta_c: float = 2.0          # roundabout proximity for joining [m]
    base_radius: float = 0.3      # C.r of newly created roundabouts [m]
    delta_comm: float = 1.0       # communication range [m]
    delta_sensing: float = 1.0    # sensing range, equal to delta_comm [m]
    k_inc: float = 0.1            # k, clearance increment per orbiting robot [m]
    k_p: float = 0.05             # radial proportional gain, in (0, 1]
    delta_theta: float = math.pi / 12  # escape sector half-angle [rad]
    eps: float = 0.1              # goal arrival threshold, < r_safe [m]
    tol_eq: float = 0.01          # one-sided band for the contact-distance test [m]
    cos_tol: float = 0.1          # |cos| tolerance of the escape orthogonality test
    grid_cell: float = 0.2        # cell size of the center relocation grid [m]
    search_radius: float = 3.0    # relocation search half-width, 10 * base_radius [m]

    def validate(self, r_safe: float) -> None:
        if not 1.0 <= self.k_d < 2.0:
            raise ParamError("k_d must lie in [1, 2)")
        if not 0.0 < self.k_p <= 1.0:
            raise ParamError("k_p must lie in (0, 1]")
        if not 0.0 < self.eps < r_safe:
            raise ParamError("eps must lie in (0, r_safe)")
        if self.delta_sensing != self.delta_comm:
            raise ParamError("delta_sensing must equal delta_comm")
        for name in ("horizon", "delta_c", "base_radius", "delta_comm", "k_inc",
                     "delta_theta", "tol_eq", "cos_tol", "grid_cell", "search_radius"):
            if not getattr(self, name) > 0.0:
                raise ParamError(f"{name} must be positive")


@dataclass
class SimParams:
    """Everything a simulation run depends on besides the scenario itself."""

    dt: float = 0.05              # control period [s]
    time_limit: float = 120.0     # wall of simulated time before a run fails [s]
    method: str = METHOD_MGR      # "mgr" or "clf-cbf" (deadlock layer disabled)
    control: ControlParams = field(default_factory=ControlParams)
    mgr: MgrParams = field(default_factory=MgrParams)

    def validate(self) -> None:
        if not self.dt > 0.0:
            raise ParamError("dt must be positive")
        if not self.time_limit > 0.0:
            raise ParamError("time_limit must be positive")
        if self.method not in METHODS:
            raise ParamError(f"method must be one of {METHODS}")
        self.control.validate()
        self.mgr.validate(self.control.r_safe)

    def with_method(self, method: str) -> "SimParams":
        return replace(self, method=method)


def default_delta_theta(env: str) -> float:
    """Escape half-angle default: pi/6 in cluttered maps, pi/12 in open ones."""
    return math.pi / 6 if env in OBSTACLE_ENVIRONMENTS else math.pi / 12


def default_params(env: str = "free", method: str = METHOD_MGR) -> SimParams:
    p = SimParams(method=method)
    p.mgr.delta_theta = default_delta_theta(env)
    p.validate()
    return p
