"""Per-robot control synthesis.

The controller works in single-integrator space: a nominal planar velocity is
filtered through a QP whose rows enforce goal stability (relaxed) and pairwise
plus obstacle safety, and the filtered velocity is converted to unicycle
commands through the look-ahead point transform. With position p, goal g and
single-integrator dynamics (f = 0, g = I):

  stability row   2 (p - g) . u + lambda * ||p - g||^2 <= delta
  robot barrier   -2 (p_i - p_j) . u <= beta * (||p_i - p_j||^2 - d_safe^2)
  obstacle row    -2 (p - q) . u <= beta * (||p - q||^2 - d_safe^2)

with q the closest obstacle point. Static obstacles are additionally handled
by a right-hand rule: a robot about to run into one redirects its nominal
velocity along the clockwise boundary tangent (obstacle kept on its right).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import clamp_norm, closest_point_on_obstacle, dist_point_obstacle
from .params import SimParams
from .qp import OPTIMAL, NumericalFailure, QpProblem, box_rows, solve_rows


@dataclass
class UnicycleCmd:
    v: float      # linear velocity [m/s]
    omega: float  # angular velocity [rad/s]


def pairwise_h(p_i, p_j, params: SimParams) -> float:
    """Pairwise safety value ||p_i - p_j||^2 - d_safe^2 (>= 0 means safe)."""
    dx = p_i[0] - p_j[0]
    dy = p_i[1] - p_j[1]
    d_safe = params.control.d_safe
    return dx * dx + dy * dy - d_safe * d_safe


def nominal_goal_velocity(robot, params: SimParams) -> tuple[float, float]:
    """Proportional goal-seeking velocity, norm-capped at v_max.

    Returns the zero vector once the robot is within the arrival threshold,
    so arrived robots do not jitter around their goals.
    """
    px, py = robot.position
    gx, gy = robot.goal
    dx, dy = gx - px, gy - py
    if math.hypot(dx, dy) <= params.mgr.eps:
        return (0.0, 0.0)
    k = params.control.goal_gain
    return clamp_norm((k * dx, k * dy), params.control.v_max)


def goal_reference(px, py, gx, gy, ref_dist):
    """Receding reference on the segment toward the goal, at most ref_dist out.

    The stability row is evaluated against this reference instead of the raw
    goal: within ref_dist of the goal the two coincide and the row is the
    exact quadratic-Lyapunov condition, while far away the bounded reference
    keeps the relaxation penalty from swamping velocity tracking (a raw
    workspace-scale V would dominate the objective and steer every distant
    robot into a box corner instead of at its goal).
    """
    ex, ey = gx - px, gy - py
    d = math.hypot(ex, ey)
    if d <= ref_dist:
        return gx, gy
    s = ref_dist / d
    return px + ex * s, py + ey * s


def lyapunov_value(p, g, params: SimParams) -> float:
    """Quadratic Lyapunov value against the receding goal reference."""
    rx, ry = goal_reference(p[0], p[1], g[0], g[1], params.control.clf_ref_dist)
    return (p[0] - rx) ** 2 + (p[1] - ry) ** 2


def clf_row(px, py, gx, gy, clf_gain, ref_dist):
    rx, ry = goal_reference(px, py, gx, gy, ref_dist)
    ex, ey = px - rx, py - ry
    v_lyap = ex * ex + ey * ey
    return ((2.0 * ex, 2.0 * ey, -1.0), -clf_gain * v_lyap)


def robot_cbf_row(px, py, qx, qy, d_safe, cbf_gain):
    dx, dy = px - qx, py - qy
    h = dx * dx + dy * dy - d_safe * d_safe
    return ((-2.0 * dx, -2.0 * dy, 0.0), cbf_gain * h)


def obstacle_cbf_row(px, py, obstacle, d_safe, cbf_gain, sensing):
    """Barrier row against the closest obstacle point, None when out of range."""
    if dist_point_obstacle((px, py), obstacle) > sensing:
        return None
    qx, qy = closest_point_on_obstacle((px, py), obstacle)
    return robot_cbf_row(px, py, qx, qy, d_safe, cbf_gain)


def right_hand_rule_bias(u_des, robot, obstacles, params: SimParams):
    """Redirect u_des along the clockwise tangent of a blocking obstacle.

    Engages when the nearest obstacle is within d_safe + trigger range and
    u_des points toward it; the returned velocity keeps the obstacle on the
    robot's right so all robots circulate static obstacles the same way.
    """
    speed = math.hypot(u_des[0], u_des[1])
    if speed == 0.0 or not obstacles:
        return u_des
    px, py = robot.position
    nearest, nearest_d = None, math.inf
    for o in obstacles:
        d = dist_point_obstacle((px, py), o)
        if d < nearest_d:
            nearest, nearest_d = o, d
    if nearest_d > params.control.d_safe + params.control.obstacle_trigger:
        return u_des
    qx, qy = closest_point_on_obstacle((px, py), nearest)
    tx, ty = qx - px, qy - py
    tn = math.hypot(tx, ty)
    if tn == 0.0:
        return u_des
    if u_des[0] * tx + u_des[1] * ty <= 0.0:
        return u_des
    # clockwise tangent = outward normal rotated by -pi/2
    nx, ny = -tx / tn, -ty / tn
    return (ny * speed, -nx * speed)


@lru_cache(maxsize=8)
def _velocity_box(v_max):
    return ((-v_max, v_max), (-v_max, v_max), (0.0, math.inf))


@lru_cache(maxsize=8)
def _velocity_box_rows(v_max):
    return box_rows(_velocity_box(v_max))


def _control_rows(robot, u_des, neighbors, obstacles, params: SimParams, include_clf):
    px, py = robot.position
    ctrl = params.control
    rows = []
    if include_clf:
        rows.append(clf_row(px, py, robot.goal[0], robot.goal[1],
                            ctrl.clf_gain, ctrl.clf_ref_dist))
    for other in neighbors:
        q = other.position
        rows.append(robot_cbf_row(px, py, q[0], q[1], ctrl.d_safe, ctrl.cbf_gain))
    for o in obstacles:
        row = obstacle_cbf_row(px, py, o, ctrl.d_safe, ctrl.cbf_gain,
                               params.mgr.delta_sensing)
        if row is not None:
            rows.append(row)
    return rows


def build_qp(robot, u_des, neighbors, obstacles, params: SimParams,
             include_clf: bool) -> QpProblem:
    """Assemble the control QP: H = diag(2,2,1), F = [-2 u_des, 0].

    Neighbors must already be restricted to communication range by the caller
    (the controller never looks farther than the robot could). Obstacle rows
    are added for obstacles within sensing range only.
    """
    rows = _control_rows(robot, u_des, neighbors, obstacles, params, include_clf)
    return QpProblem(
        H=np.diag([2.0, 2.0, 1.0]),
        F=np.array([-2.0 * u_des[0], -2.0 * u_des[1], 0.0]),
        ineq_rows=[(np.array(a), b) for a, b in rows],
        box=_velocity_box(params.control.v_max),
    )


def si_to_unicycle(u, heading: float, params: SimParams) -> UnicycleCmd:
    """Map a planar velocity to (v, omega) via the look-ahead point transform."""
    return _si_to_unicycle_cs(u[0], u[1], math.cos(heading), math.sin(heading), params)


def _si_to_unicycle_cs(ux, uy, cos_h, sin_h, params: SimParams) -> UnicycleCmd:
    ctrl = params.control
    v = cos_h * ux + sin_h * uy
    omega = (-sin_h * ux + cos_h * uy) / ctrl.lookahead
    v = min(max(v, -ctrl.v_max), ctrl.v_max)
    omega = min(max(omega, -ctrl.omega_max), ctrl.omega_max)
    return UnicycleCmd(v, omega)


def compute_control(robot, neighbors, obstacles, u_des, mode: str,
                    params: SimParams):
    """End-to-end control step: QP filter then unicycle conversion.

    Returns (UnicycleCmd, si_velocity); si_velocity is the filtered planar
    velocity the robot broadcasts as its own velocity estimate. Solver
    infeasibility or numerical failure degrades to a full stop.

    The linear speed is additionally braked so that the velocity the robot
    actually executes, v * heading, satisfies every barrier row. The QP bounds
    the single-integrator command, but while the heading is still turning
    toward it the unicycle would otherwise close on a neighbor faster than
    the barrier allows.
    """
    include_clf = mode == "GOAL"
    rows = _control_rows(robot, u_des, neighbors, obstacles, params, include_clf)
    v_max = params.control.v_max
    all_rows = rows + list(_velocity_box_rows(v_max))
    f = (-2.0 * u_des[0], -2.0 * u_des[1], 0.0)
    try:
        x, _, status = solve_rows((2.0, 2.0, 1.0), f, all_rows)
    except NumericalFailure:
        status = None
    if status != OPTIMAL:
        si = (0.0, 0.0)
    else:
        si = clamp_norm((x[0], x[1]), v_max)
    cos_h = math.cos(robot.heading)
    sin_h = math.sin(robot.heading)
    cmd = _si_to_unicycle_cs(si[0], si[1], cos_h, sin_h, params)
    barrier_rows = rows[1:] if include_clf else rows
    if barrier_rows:
        cmd.v = _brake_for_barriers(cmd.v, cos_h, sin_h, barrier_rows)
    return cmd, si


def _brake_for_barriers(v, cos_h, sin_h, barrier_rows):
    """Clamp linear speed so a . (v * heading) <= b holds for every row."""
    v_lo, v_hi = -math.inf, math.inf
    for a, b in barrier_rows:
        coef = a[0] * cos_h + a[1] * sin_h
        if coef > 1e-12:
            v_hi = min(v_hi, b / coef)
        elif coef < -1e-12:
            v_lo = max(v_lo, b / coef)
    if v_lo > v_hi:
        return 0.0
    return min(max(v, v_lo), v_hi)
