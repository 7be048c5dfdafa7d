"""Merry-go-round deadlock prevention.

Each robot runs one pass of the roundabout protocol per control period:

1. an incoming invite forces it onto the sender's roundabout;
2. otherwise it scans received neighbor states for deadlock candidates
   (contact distance, or predicted trajectory proximity over a horizon),
   skipping pairs that are both about to reach their goals, and joins a
   nearby roundabout or creates one at the pair midpoint, inviting the
   conflicting neighbor;
3. a robot orbiting a roundabout leaves it once its goal direction is
   orthogonal to the center direction and the outward sector is clear.

The functions here are pure: a robot works on its local view (its own state,
messages from robots within communication range, roundabouts within its
locality bound and the static map). Mutations are described by the returned
actions and applied serially in robot-id order by `RoundaboutRegistry.apply`,
which also merges simultaneously created roundabouts closer than the joining
proximity so lockstep peers converge on one shared roundabout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .geometry import (
    Sector,
    dist_point_obstacle,
    min_dist_linear_trajectories,
    sector_contains,
    sector_intersects_obstacle,
)
from .params import SimParams
from .world import GOAL, MGR, NavMode


class NoValidCenter(RuntimeError):
    """No relocation cell clears the obstacles; keep the old center."""


class DegenerateCenter(ValueError):
    """Robot sits on the roundabout center; the orbit direction is undefined."""


@dataclass
class Roundabout:
    id: int
    center: tuple[float, float]
    radius: float
    members: set[int] = field(default_factory=set)

    @property
    def n(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class RobotView:
    """Immutable per-period snapshot of one robot, as its peers see it."""

    id: int
    position: tuple[float, float]
    heading: float
    velocity: tuple[float, float]
    goal: tuple[float, float]
    mode: str
    roundabout_id: int | None
    arrived: bool


@dataclass(frozen=True)
class StateShare:
    sender: int
    position: tuple[float, float]
    velocity: tuple[float, float]
    goal: tuple[float, float]
    mode: str
    arrived: bool = False


@dataclass(frozen=True)
class Invite:
    sender: int
    roundabout: Roundabout


@dataclass
class MgrStepResult:
    mode: NavMode
    outbox: list          # (recipient_id, Invite) pairs
    roundabouts: list     # the robot's updated local view
    actions: list         # registry mutations, applied in robot-id order


def is_deadlock_candidate(a_i, a_j, params: SimParams) -> bool:
    """Deadlock test: already at contact distance, or predicted to close in.

    True when ||p_i - p_j|| is within a one-sided band of 2*r_safe (the
    barrier constraint is active) or the constant-velocity extrapolations
    come within k_d * r_safe of each other over the prediction horizon.
    """
    dx = a_i.position[0] - a_j.position[0]
    dy = a_i.position[1] - a_j.position[1]
    if math.hypot(dx, dy) <= params.control.d_safe + params.mgr.tol_eq:
        return True
    d_min, _ = min_dist_linear_trajectories(a_i.position, a_i.velocity,
                                            a_j.position, a_j.velocity,
                                            params.mgr.horizon)
    return d_min <= params.mgr.k_d * params.control.r_safe


def is_goal_checking(a_i, a_j, params: SimParams) -> bool:
    """Both robots within eps of their goals and both in GOAL mode."""
    eps = params.mgr.eps
    if a_i.mode != GOAL or a_j.mode != GOAL:
        return False
    di = math.hypot(a_i.position[0] - a_i.goal[0], a_i.position[1] - a_i.goal[1])
    dj = math.hypot(a_j.position[0] - a_j.goal[0], a_j.position[1] - a_j.goal[1])
    return di <= eps and dj <= eps


def find_center(a_i, a_j) -> tuple[float, float]:
    """Initial roundabout center: the midpoint between the two robots."""
    return (0.5 * (a_i.position[0] + a_j.position[0]),
            0.5 * (a_i.position[1] + a_j.position[1]))


def is_mgr_valid(c: Roundabout, obstacles, params: SimParams) -> bool:
    """Clearance test d_C >= C.r + k * C.n against every obstacle.

    The caller includes the workspace boundary as four rectangles in
    `obstacles`; with no obstacles the test is vacuously true.
    """
    need = c.radius + params.mgr.k_inc * c.n
    for o in obstacles:
        if dist_point_obstacle(c.center, o) < need:
            return False
    return True


def adjust_mgr(c: Roundabout, obstacles, params: SimParams) -> Roundabout:
    """Relocate an invalid roundabout center by grid search.

    A square of half-width `search_radius` around the current center is
    discretized into `grid_cell` cells, indexed row-major from the minimum
    corner. A cell is valid when its center clears every obstacle by
    C.r + k * C.n; among valid cells closest to the old center the lowest
    index wins. Raises NoValidCenter when the whole region is blocked.
    """
    need = c.radius + params.mgr.k_inc * c.n
    cell = params.mgr.grid_cell
    half = params.mgr.search_radius
    ncells = max(1, int(2.0 * half / cell + 1e-9))
    x0 = c.center[0] - half
    y0 = c.center[1] - half
    best = None
    best_d2 = math.inf
    for row in range(ncells):
        cy = y0 + (row + 0.5) * cell
        for col in range(ncells):
            cx = x0 + (col + 0.5) * cell
            ok = True
            for o in obstacles:
                if dist_point_obstacle((cx, cy), o) < need:
                    ok = False
                    break
            if not ok:
                continue
            d2 = (cx - c.center[0]) ** 2 + (cy - c.center[1]) ** 2
            if d2 < best_d2:
                best_d2 = d2
                best = (cx, cy)
    if best is None:
        raise NoValidCenter(f"no valid cell within {half} m of {c.center}")
    return replace(c, center=best, members=set(c.members))


def orbit_field(p, c: Roundabout, params: SimParams) -> tuple[float, float]:
    """Orbit reference velocity at an arbitrary point (see mgr_desired_velocity)."""
    rx = p[0] - c.center[0]
    ry = p[1] - c.center[1]
    r = math.hypot(rx, ry)
    if r < 1e-9:
        raise DegenerateCenter("point coincides with the roundabout center")
    v_max = params.control.v_max
    ux, uy = rx / r, ry / r
    tx, ty = -uy * v_max, ux * v_max
    scale = (params.mgr.k_p / max(c.n, 1)) * (r - c.radius) * v_max
    wx = tx - scale * ux
    wy = ty - scale * uy
    wn = math.hypot(wx, wy)
    return (v_max * wx / wn, v_max * wy / wn)


def mgr_desired_velocity(robot, c: Roundabout, params: SimParams) -> tuple[float, float]:
    """Counterclockwise orbit reference: tangential plus radial correction.

    The tangential component is v_max along the counterclockwise tangent; the
    radial component is proportional (gain k_p / C.n) to the error between the
    current center distance and C.r, pointing at the center. The sum is
    rescaled to exactly v_max.
    """
    return orbit_field(robot.position, c, params)


def is_escapable(robot, c: Roundabout, neighbors, obstacles, params: SimParams) -> bool:
    """Escape test: goal direction orthogonal to the center direction and the
    outward annular sector (half-angle delta_theta, reaching delta_sensing
    beyond the robot's orbit) free of robots and obstacles."""
    px, py = robot.position
    icx, icy = c.center[0] - px, c.center[1] - py
    d_ic = math.hypot(icx, icy)
    if d_ic < 1e-9:
        return False
    igx, igy = robot.goal[0] - px, robot.goal[1] - py
    d_ig = math.hypot(igx, igy)
    if d_ig < 1e-12:
        return True
    cos = (icx * igx + icy * igy) / (d_ic * d_ig)
    if abs(cos) > params.mgr.cos_tol:
        return False
    sector = Sector(center=c.center, inner_radius=d_ic,
                    outer_radius=d_ic + params.mgr.delta_sensing,
                    mid_angle=math.atan2(-icy, -icx),
                    half_width=params.mgr.delta_theta)
    for nb in neighbors:
        if nb.sender != robot.id and sector_contains(sector, nb.position):
            return False
    for o in obstacles:
        if sector_intersects_obstacle(sector, o):
            return False
    return True


def step_mgr(robot: RobotView, inbox, roundabouts, obstacles, params: SimParams,
             validity_obstacles=None) -> MgrStepResult:
    """One pass of the roundabout protocol for one robot.

    `roundabouts` is the robot's local registry view (own roundabout
    included); `obstacles` is the static map used for escape clearance and
    `validity_obstacles` (defaults to `obstacles`) additionally carries the
    workspace boundary rectangles for center validity. Created roundabouts
    get the provisional id -(robot.id + 1) until the registry assigns a real
    one.
    """
    if validity_obstacles is None:
        validity_obstacles = obstacles
    mgrp = params.mgr

    invites = sorted((m for m in inbox if isinstance(m, Invite)), key=lambda m: m.sender)
    states = sorted((m for m in inbox if isinstance(m, StateShare)), key=lambda m: m.sender)

    local: dict[int, Roundabout] = {r.id: r for r in roundabouts}
    mode_tag = robot.mode
    rid = robot.roundabout_id
    outbox: list = []
    actions: list = []

    def join(target: Roundabout):
        nonlocal mode_tag, rid
        if rid is not None and rid != target.id and rid in local:
            old = local[rid]
            local[rid] = replace(old, members=old.members - {robot.id})
            actions.append(("leave", rid))
        if robot.id not in target.members:
            local[target.id] = replace(target, members=target.members | {robot.id})
        actions.append(("join", target.id))
        mode_tag = MGR
        rid = target.id

    if invites:
        inv = invites[0]
        live = local.get(inv.roundabout.id)
        if live is not None:
            join(live)
    else:
        for sh in states:
            if sh.arrived:
                continue
            if not is_deadlock_candidate(robot, sh, params):
                continue
            if is_goal_checking(robot, sh, params):
                continue
            center = find_center(robot, sh)
            nearest = None
            nearest_d = math.inf
            for r in sorted(local.values(), key=lambda r: r.id):
                d = math.hypot(r.center[0] - center[0], r.center[1] - center[1])
                if d <= mgrp.delta_c and d < nearest_d:
                    nearest, nearest_d = r, d
            if nearest is not None:
                if not is_mgr_valid(nearest, validity_obstacles, params):
                    try:
                        nearest = adjust_mgr(nearest, validity_obstacles, params)
                        local[nearest.id] = nearest
                        actions.append(("adjust", nearest.id, nearest.center))
                    except NoValidCenter:
                        pass
                join(local[nearest.id])
            else:
                created = Roundabout(id=-(robot.id + 1), center=center,
                                     radius=mgrp.base_radius, members=set())
                if not is_mgr_valid(created, validity_obstacles, params):
                    try:
                        created = adjust_mgr(created, validity_obstacles, params)
                    except NoValidCenter:
                        pass
                local[created.id] = created
                actions.append(("create", created))
                join(local[created.id])
            outbox.append((sh.sender, Invite(sender=robot.id, roundabout=local[rid])))

    if mode_tag == MGR and rid in local:
        cur = local[rid]
        # A goal strictly inside the robot's orbit makes the orthogonality
        # condition unattainable (the locus (c-p).(g-p)=0 is the circle with
        # diameter [c, g], which then lies inside the orbit), so the robot
        # would circle forever; release it toward its goal instead.
        d_goal = math.hypot(cur.center[0] - robot.goal[0], cur.center[1] - robot.goal[1])
        d_self = math.hypot(cur.center[0] - robot.position[0],
                            cur.center[1] - robot.position[1])
        if d_goal < d_self or is_escapable(robot, cur, states, obstacles, params):
            local[rid] = replace(cur, members=cur.members - {robot.id})
            actions.append(("leave", rid))
            mode_tag = GOAL
            rid = None

    mode = NavMode(tag=mode_tag, roundabout_id=rid if mode_tag == MGR else None)
    return MgrStepResult(mode=mode, outbox=outbox,
                         roundabouts=sorted(local.values(), key=lambda r: r.id),
                         actions=actions)


class RoundaboutRegistry:
    """Authoritative store of live roundabouts, mutated once per period.

    Robots read filtered views during the period; all step results are then
    applied serially in robot-id order. Creations landing within delta_c of an
    already-registered center are merged into it (the decentralized analogue of
    two peers discovering the same conflict simultaneously), and roundabouts
    whose membership drops to zero are deleted at the end of the pass.
    """

    def __init__(self):
        self._rounds: dict[int, Roundabout] = {}
        self._next_id = 0

    @property
    def roundabouts(self) -> dict[int, Roundabout]:
        return self._rounds

    def get(self, rid):
        return self._rounds.get(rid)

    def locality_bound(self, r: Roundabout, params: SimParams) -> float:
        return params.mgr.delta_sensing + r.radius + params.mgr.k_inc * r.n

    def view_for(self, position, params: SimParams, own_id=None) -> list[Roundabout]:
        """Roundabouts this robot may read: within its locality bound, plus
        the one it is currently orbiting."""
        out = []
        for rid in sorted(self._rounds):
            r = self._rounds[rid]
            d = math.hypot(r.center[0] - position[0], r.center[1] - position[1])
            if rid == own_id or d <= self.locality_bound(r, params):
                out.append(r)
        return out

    def apply(self, decisions, params: SimParams) -> dict[int, int]:
        """Apply (robot_id, MgrStepResult) pairs in robot-id order.

        Returns the provisional-to-final id remapping for created roundabouts
        so callers can rewrite modes and queued invites.
        """
        remap: dict[int, int] = {}

        def resolve(rid):
            return remap.get(rid, rid)

        for robot_id, result in sorted(decisions, key=lambda d: d[0]):
            for action in result.actions:
                kind = action[0]
                if kind == "create":
                    created: Roundabout = action[1]
                    target = None
                    for rid in sorted(self._rounds):
                        r = self._rounds[rid]
                        d = math.hypot(r.center[0] - created.center[0],
                                       r.center[1] - created.center[1])
                        if d <= params.mgr.delta_c:
                            target = rid
                            break
                    if target is None:
                        final = Roundabout(id=self._next_id, center=created.center,
                                           radius=created.radius, members=set())
                        self._rounds[final.id] = final
                        self._next_id += 1
                        remap[created.id] = final.id
                    else:
                        remap[created.id] = target
                elif kind == "join":
                    rid = resolve(action[1])
                    target = self._rounds.get(rid)
                    if target is None:
                        continue
                    for other in self._rounds.values():
                        other.members.discard(robot_id)
                    target.members.add(robot_id)
                elif kind == "leave":
                    rid = resolve(action[1])
                    if rid in self._rounds:
                        self._rounds[rid].members.discard(robot_id)
                elif kind == "adjust":
                    rid = resolve(action[1])
                    if rid in self._rounds:
                        self._rounds[rid].center = action[2]
        for rid in [r for r, c in self._rounds.items() if c.n == 0]:
            del self._rounds[rid]
        return remap
