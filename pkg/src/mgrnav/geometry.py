"""Plane geometry primitives shared by the controller, deadlock layer and simulator.

Everything here works on plain float pairs so it stays cheap inside the
per-robot control loop; numpy arrays and sequences are accepted wherever a
point is expected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi


def vec2(x: float, y: float) -> tuple[float, float]:
    """Validated 2D point/vector constructor (components must be finite)."""
    x = float(x)
    y = float(y)
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError(f"vector components must be finite, got ({x}, {y})")
    return (x, y)


def wrap_angle(a: float) -> float:
    """Normalize an angle to the canonical branch (-pi, pi]."""
    r = math.remainder(a, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


def norm(v) -> float:
    return math.hypot(v[0], v[1])


def clamp_norm(v, limit: float) -> tuple[float, float]:
    """Scale v down so its Euclidean norm does not exceed limit."""
    n = math.hypot(v[0], v[1])
    if n <= limit or n == 0.0:
        return (float(v[0]), float(v[1]))
    s = limit / n
    return (v[0] * s, v[1] * s)


@dataclass(frozen=True)
class Circle:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", vec2(*self.center))
        if not self.radius > 0.0:
            raise ValueError("circle radius must be positive")


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle given by min and max corners."""

    min_corner: tuple[float, float]
    max_corner: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "min_corner", vec2(*self.min_corner))
        object.__setattr__(self, "max_corner", vec2(*self.max_corner))
        if not (self.max_corner[0] > self.min_corner[0] and self.max_corner[1] > self.min_corner[1]):
            raise ValueError("rect max corner must exceed min corner componentwise")


Obstacle = Circle | Rect


def obstacle_area(obs: Obstacle) -> float:
    if isinstance(obs, Circle):
        return math.pi * obs.radius * obs.radius
    w = obs.max_corner[0] - obs.min_corner[0]
    h = obs.max_corner[1] - obs.min_corner[1]
    return w * h


def dist_point_obstacle(p, obs: Obstacle) -> float:
    """Euclidean distance from p to the obstacle, 0 if p lies inside it."""
    if isinstance(obs, Circle):
        d = math.hypot(p[0] - obs.center[0], p[1] - obs.center[1]) - obs.radius
        return d if d > 0.0 else 0.0
    dx = max(obs.min_corner[0] - p[0], 0.0, p[0] - obs.max_corner[0])
    dy = max(obs.min_corner[1] - p[1], 0.0, p[1] - obs.max_corner[1])
    return math.hypot(dx, dy)


def closest_point_on_obstacle(p, obs: Obstacle) -> tuple[float, float]:
    """Closest point of the obstacle set to p (p itself when inside)."""
    if isinstance(obs, Circle):
        dx = p[0] - obs.center[0]
        dy = p[1] - obs.center[1]
        d = math.hypot(dx, dy)
        if d <= obs.radius:
            return (float(p[0]), float(p[1]))
        s = obs.radius / d
        return (obs.center[0] + dx * s, obs.center[1] + dy * s)
    qx = min(max(p[0], obs.min_corner[0]), obs.max_corner[0])
    qy = min(max(p[1], obs.min_corner[1]), obs.max_corner[1])
    return (qx, qy)


@dataclass(frozen=True)
class Sector:
    """Annular sector: radial band [inner_radius, outer_radius] around center,
    angular band mid_angle +- half_width (angles compared modulo 2*pi)."""

    center: tuple[float, float]
    inner_radius: float
    outer_radius: float
    mid_angle: float
    half_width: float

    def __post_init__(self):
        object.__setattr__(self, "center", vec2(*self.center))
        if not (self.outer_radius > self.inner_radius >= 0.0):
            raise ValueError("sector requires outer_radius > inner_radius >= 0")
        if not (0.0 < self.half_width <= math.pi):
            raise ValueError("sector half_width must lie in (0, pi]")


def sector_contains(s: Sector, p) -> bool:
    dx = p[0] - s.center[0]
    dy = p[1] - s.center[1]
    r = math.hypot(dx, dy)
    if r < s.inner_radius or r > s.outer_radius:
        return False
    if r == 0.0:
        return s.inner_radius == 0.0
    dphi = wrap_angle(math.atan2(dy, dx) - s.mid_angle)
    return abs(dphi) <= s.half_width


def sector_distance(s: Sector, p) -> float:
    """Distance from p to the sector region (0 when p is inside).

    Used for exact sector/circle intersection tests: a circle of radius r
    intersects the sector iff this distance is <= r.
    """
    dx = p[0] - s.center[0]
    dy = p[1] - s.center[1]
    r = math.hypot(dx, dy)
    if r == 0.0:
        return s.inner_radius
    dphi = wrap_angle(math.atan2(dy, dx) - s.mid_angle)
    if abs(dphi) <= s.half_width:
        return max(s.inner_radius - r, r - s.outer_radius, 0.0)
    # nearest sector point lies on one of the two straight radial edges
    best = math.inf
    for sign in (1.0, -1.0):
        ang = s.mid_angle + sign * s.half_width
        ex, ey = math.cos(ang), math.sin(ang)
        t = dx * ex + dy * ey
        t = min(max(t, s.inner_radius), s.outer_radius)
        best = min(best, math.hypot(dx - t * ex, dy - t * ey))
    return best


def sector_intersects_obstacle(s: Sector, obs: Obstacle, edge_step: float = 0.05) -> bool:
    """True if the obstacle overlaps the sector.

    Circles are tested exactly through sector_distance. Rectangles are tested
    by sampling their boundary at edge_step spacing (plus corners) and by
    checking a few interior probes of the sector against the rectangle, which
    is enough at robot scale.
    """
    if isinstance(obs, Circle):
        return sector_distance(s, obs.center) <= obs.radius
    x0, y0 = obs.min_corner
    x1, y1 = obs.max_corner
    # sector probe points inside the rect -> overlap
    rmid = 0.5 * (s.inner_radius + s.outer_radius)
    for rr in (s.inner_radius, rmid, s.outer_radius):
        for aa in (s.mid_angle - s.half_width, s.mid_angle, s.mid_angle + s.half_width):
            px = s.center[0] + rr * math.cos(aa)
            py = s.center[1] + rr * math.sin(aa)
            if x0 <= px <= x1 and y0 <= py <= y1:
                return True
    # rect boundary samples inside the sector -> overlap
    for ax, ay, bx, by in (
        (x0, y0, x1, y0),
        (x1, y0, x1, y1),
        (x1, y1, x0, y1),
        (x0, y1, x0, y0),
    ):
        length = math.hypot(bx - ax, by - ay)
        n = max(1, int(math.ceil(length / edge_step)))
        for i in range(n + 1):
            t = i / n
            if sector_contains(s, (ax + (bx - ax) * t, ay + (by - ay) * t)):
                return True
    return False


def min_dist_linear_trajectories(p_i, v_i, p_j, v_j, horizon: float) -> tuple[float, float]:
    """Minimum distance between two constant-velocity trajectories over [0, horizon].

    Returns (d_min, t_star) where t_star attains the minimum. The distance
    ||dp + dv*t|| is convex in t, so the unconstrained minimizer
    t = -dp.dv/||dv||^2 clamped to [0, horizon] is exact (t = 0 when dv = 0).
    """
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    dpx = p_i[0] - p_j[0]
    dpy = p_i[1] - p_j[1]
    dvx = v_i[0] - v_j[0]
    dvy = v_i[1] - v_j[1]
    vv = dvx * dvx + dvy * dvy
    if vv == 0.0:
        t = 0.0
    else:
        t = -(dpx * dvx + dpy * dvy) / vv
        if t < 0.0:
            t = 0.0
        elif t > horizon:
            t = horizon
    return math.hypot(dpx + dvx * t, dpy + dvy * t), t
