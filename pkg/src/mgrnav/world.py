"""Workspace, robots and random scenario generation.

Coordinates are centered: a width x height workspace spans
[-width/2, width/2] x [-height/2, height/2]. The four environments are

* ``free``   -- open space, uniformly random starts and goals,
* ``circ15`` -- circular obstacles covering 15% (+-1%) of the workspace,
* ``rect15`` -- rectangular obstacles covering 15% (+-1%),
* ``swap``   -- robots evenly spaced on a circle of diameter 15 m centered in
  the workspace, each robot's goal at the antipode of its start.

Placement honors the separation rules the controller assumes: starts (and
goals) pairwise more than 2*r_safe apart and at least 2*r_safe clear of every
obstacle. Obstacles are generated non-overlapping with a minimum corridor gap
so the clutter stays traversable; everything is rejection-sampled against a
fixed retry budget and reproducible from the scenario seed.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Circle, Obstacle, Rect, dist_point_obstacle, obstacle_area
from .params import ENVIRONMENTS, SimParams

GOAL = "GOAL"
MGR = "MGR"

SCENARIO_SCHEMA = "mgr-scenario/1"

_RETRY_BUDGET = 100_000
_OBSTACLE_GAP = 1.2       # min boundary-to-boundary corridor between obstacles [m]
_EXTRA_SEP = 0.2          # placement margin on top of the required 2*r_safe
_EXTRA_CLEAR = 0.1        # placement margin for obstacle clearance
_SWAP_DIAMETER = 15.0


class PlacementInfeasible(RuntimeError):
    """Scenario constraints could not be met within the retry budget."""


@dataclass
class Workspace:
    width: float
    height: float
    obstacles: list = field(default_factory=list)

    def __post_init__(self):
        if not (self.width > 0.0 and self.height > 0.0):
            raise ValueError("workspace dimensions must be positive")

    @property
    def half_w(self) -> float:
        return 0.5 * self.width

    @property
    def half_h(self) -> float:
        return 0.5 * self.height

    def contains(self, p, margin: float = 0.0) -> bool:
        return (abs(p[0]) <= self.half_w - margin) and (abs(p[1]) <= self.half_h - margin)


@dataclass
class NavMode:
    tag: str = GOAL
    roundabout_id: int | None = None


@dataclass
class RobotState:
    id: int
    position: tuple[float, float]
    heading: float
    velocity: tuple[float, float]
    goal: tuple[float, float]
    mode: NavMode = field(default_factory=NavMode)
    arrived: bool = False
    arrival_time: float | None = None


@dataclass
class ScenarioConfig:
    env: str
    n: int
    seed: int
    width: float = 16.0
    height: float = 16.0

    def __post_init__(self):
        if self.env not in ENVIRONMENTS:
            raise ValueError(f"env must be one of {ENVIRONMENTS}")
        if self.n < 1:
            raise ValueError("robot count must be >= 1")
        if self.env == "swap" and self.n % 2 != 0:
            raise ValueError("swap requires an even robot count")


def obstacle_coverage(ws: Workspace) -> float:
    """Fraction of the workspace area covered by obstacles (non-overlapping)."""
    return sum(obstacle_area(o) for o in ws.obstacles) / (ws.width * ws.height)


def boundary_rects(ws: Workspace, thickness: float = 1.0) -> list[Rect]:
    """The workspace boundary as four rectangles hugging the outside."""
    hw, hh, t = ws.half_w, ws.half_h, thickness
    return [
        Rect((-hw - t, -hh - t), (-hw, hh + t)),
        Rect((hw, -hh - t), (hw + t, hh + t)),
        Rect((-hw - t, -hh - t), (hw + t, -hh)),
        Rect((-hw - t, hh), (hw + t, hh + t)),
    ]


def _obstacle_gap(a: Obstacle, b: Obstacle) -> float:
    """Boundary-to-boundary distance between two obstacles (0 if touching)."""
    if isinstance(a, Circle) and isinstance(b, Circle):
        return math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]) \
            - a.radius - b.radius
    if isinstance(a, Circle):
        return dist_point_obstacle(a.center, b) - a.radius
    if isinstance(b, Circle):
        return dist_point_obstacle(b.center, a) - b.radius
    gx = max(a.min_corner[0] - b.max_corner[0], b.min_corner[0] - a.max_corner[0], 0.0)
    gy = max(a.min_corner[1] - b.max_corner[1], b.min_corner[1] - a.max_corner[1], 0.0)
    return math.hypot(gx, gy)


class _Budget:
    def __init__(self, tries: int = _RETRY_BUDGET):
        self.left = tries

    def spend(self):
        self.left -= 1
        if self.left < 0:
            raise PlacementInfeasible(
                f"placement rejection budget of {_RETRY_BUDGET} samples exhausted")


def _gen_obstacles(rng, ws: Workspace, kind: str, budget: _Budget) -> list[Obstacle]:
    area_ws = ws.width * ws.height
    target_lo, target_hi = 0.15, 0.16
    covered = 0.0
    obstacles: list[Obstacle] = []
    while covered / area_ws < target_lo:
        rem = target_hi * area_ws - covered
        budget.spend()
        if kind == "circle":
            r = rng.uniform(0.5, min(1.5, math.sqrt(rem / math.pi)))
            cx = rng.uniform(-ws.half_w + r + 0.05, ws.half_w - r - 0.05)
            cy = rng.uniform(-ws.half_h + r + 0.05, ws.half_h - r - 0.05)
            cand: Obstacle = Circle((cx, cy), r)
        else:
            w = rng.uniform(1.0, min(3.0, rem))
            h = rng.uniform(1.0, min(3.0, rem / w))
            x0 = rng.uniform(-ws.half_w + 0.05, ws.half_w - w - 0.05)
            y0 = rng.uniform(-ws.half_h + 0.05, ws.half_h - h - 0.05)
            cand = Rect((x0, y0), (x0 + w, y0 + h))
        if all(_obstacle_gap(cand, o) >= _OBSTACLE_GAP for o in obstacles):
            obstacles.append(cand)
            covered += obstacle_area(cand)
    return obstacles


def _sample_points(rng, ws: Workspace, n: int, d_safe: float, budget: _Budget):
    """n points pairwise > d_safe apart and >= d_safe clear of all obstacles."""
    margin = d_safe
    sep = d_safe + _EXTRA_SEP
    clear = d_safe + _EXTRA_CLEAR
    pts: list[tuple[float, float]] = []
    while len(pts) < n:
        budget.spend()
        x = rng.uniform(-ws.half_w + margin, ws.half_w - margin)
        y = rng.uniform(-ws.half_h + margin, ws.half_h - margin)
        if any(math.hypot(x - px, y - py) <= sep for px, py in pts):
            continue
        if any(dist_point_obstacle((x, y), o) < clear for o in ws.obstacles):
            continue
        pts.append((x, y))
    return pts


def generate_scenario(cfg: ScenarioConfig, params: SimParams):
    """Build (Workspace, robots) for a scenario config, reproducibly from its seed."""
    rng = np.random.default_rng(cfg.seed)
    ws = Workspace(cfg.width, cfg.height, [])
    budget = _Budget()
    d_safe = params.control.d_safe

    if cfg.env == "circ15":
        ws.obstacles = _gen_obstacles(rng, ws, "circle", budget)
    elif cfg.env == "rect15":
        ws.obstacles = _gen_obstacles(rng, ws, "rect", budget)

    if cfg.env == "swap":
        radius = 0.5 * _SWAP_DIAMETER
        if radius > min(ws.half_w, ws.half_h):
            raise PlacementInfeasible("swap circle does not fit the workspace")
        if 2.0 * radius * math.sin(math.pi / cfg.n) <= d_safe:
            raise PlacementInfeasible("too many robots for the swap circle spacing")
        phase = rng.uniform(0.0, 2.0 * math.pi)
        half = cfg.n // 2
        starts = [(0.0, 0.0)] * cfg.n
        for i in range(half):
            ang = phase + 2.0 * math.pi * i / cfg.n
            sx, sy = radius * math.cos(ang), radius * math.sin(ang)
            starts[i] = (sx, sy)
            starts[i + half] = (-sx, -sy)  # exact antipode
        goals = [starts[(i + half) % cfg.n] for i in range(cfg.n)]
    else:
        starts = _sample_points(rng, ws, cfg.n, d_safe, budget)
        goals = _sample_points(rng, ws, cfg.n, d_safe, budget)

    robots = []
    for i, (s, g) in enumerate(zip(starts, goals)):
        heading = math.atan2(g[1] - s[1], g[0] - s[0]) if g != s else 0.0
        robots.append(RobotState(id=i, position=s, heading=heading,
                                 velocity=(0.0, 0.0), goal=g))
    return ws, robots


def audit_scenario(ws: Workspace, robots, params: SimParams) -> list[str]:
    """Check every placement constraint; returns a list of violation messages."""
    d_safe = params.control.d_safe
    problems = []
    for i, a in enumerate(robots):
        for b in robots[i + 1:]:
            if math.hypot(a.position[0] - b.position[0], a.position[1] - b.position[1]) <= d_safe:
                problems.append(f"starts {a.id}/{b.id} within d_safe")
            if math.hypot(a.goal[0] - b.goal[0], a.goal[1] - b.goal[1]) <= d_safe:
                problems.append(f"goals {a.id}/{b.id} within d_safe")
        for o in ws.obstacles:
            if dist_point_obstacle(a.position, o) < d_safe:
                problems.append(f"start {a.id} within d_safe of an obstacle")
            if dist_point_obstacle(a.goal, o) < d_safe:
                problems.append(f"goal {a.id} within d_safe of an obstacle")
    return problems


# --- serialization ---------------------------------------------------------

def _obstacle_doc(o: Obstacle) -> dict:
    if isinstance(o, Circle):
        return {"kind": "circle", "center": list(o.center), "radius": o.radius}
    return {"kind": "rect", "min": list(o.min_corner), "max": list(o.max_corner)}


def _obstacle_from_doc(doc: dict) -> Obstacle:
    if doc["kind"] == "circle":
        return Circle(tuple(doc["center"]), doc["radius"])
    if doc["kind"] == "rect":
        return Rect(tuple(doc["min"]), tuple(doc["max"]))
    raise ValueError(f"unknown obstacle kind {doc['kind']!r}")


def scenario_doc(cfg: ScenarioConfig, ws: Workspace, robots) -> dict:
    return {
        "schema": SCENARIO_SCHEMA,
        "env": cfg.env,
        "seed": cfg.seed,
        "workspace": {"width": ws.width, "height": ws.height},
        "obstacles": [_obstacle_doc(o) for o in ws.obstacles],
        "robots": [{"id": r.id, "start": list(r.position), "goal": list(r.goal)}
                   for r in robots],
    }


def scenario_from_doc(doc: dict):
    if doc.get("schema") != SCENARIO_SCHEMA:
        raise ValueError(f"unsupported scenario schema {doc.get('schema')!r}")
    cfg = ScenarioConfig(env=doc["env"], n=len(doc["robots"]), seed=doc["seed"],
                         width=doc["workspace"]["width"], height=doc["workspace"]["height"])
    ws = Workspace(cfg.width, cfg.height,
                   [_obstacle_from_doc(d) for d in doc["obstacles"]])
    robots = []
    for rd in sorted(doc["robots"], key=lambda d: d["id"]):
        s, g = tuple(rd["start"]), tuple(rd["goal"])
        heading = math.atan2(g[1] - s[1], g[0] - s[0]) if g != s else 0.0
        robots.append(RobotState(id=rd["id"], position=s, heading=heading,
                                 velocity=(0.0, 0.0), goal=g))
    return cfg, ws, robots


def scenario_hash(doc: dict) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()
