"""Synchronous lockstep simulation of the full robot team.

Each control period: deliver last period's invites and current state
broadcasts (restricted to communication range), run the deadlock layer per
robot, compute the mode-dependent nominal velocity, filter it through the
safety QP, convert to unicycle commands and integrate the poses with Euler
steps. Robots freeze once within the arrival threshold of their goals; they
keep broadcasting state and acting as barrier neighbors but drop out of
deadlock prediction.

All per-robot computations inside a period read an immutable snapshot, so the
step is order-independent; registry mutations and integration are applied in
robot-id order, which makes a run a pure function of (scenario, params).
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .control import compute_control, nominal_goal_velocity, right_hand_rule_bias
from .geometry import Circle, dist_point_obstacle, wrap_angle
from .mgr import (
    DegenerateCenter,
    Invite,
    RobotView,
    RoundaboutRegistry,
    StateShare,
    orbit_field,
    step_mgr,
)
from .params import METHOD_MGR, SimParams
from .world import (
    GOAL,
    MGR,
    ScenarioConfig,
    Workspace,
    boundary_rects,
    generate_scenario,
)

TRACE_SCHEMA = "mgr-trace/1"


@dataclass
class TraceRecord:
    t: float
    robots: list   # {id, position, heading, mode, roundabout_id?, si_velocity}
    roundabouts: list  # {id, center, radius, n}

    def to_doc(self) -> dict:
        return {"t": self.t, "robots": self.robots, "roundabouts": self.roundabouts}

    @classmethod
    def from_doc(cls, doc: dict) -> "TraceRecord":
        return cls(t=doc["t"], robots=doc["robots"], roundabouts=doc["roundabouts"])


@dataclass
class Metrics:
    success: bool
    arrival_rate: float
    makespan: float | None
    mean_time: float | None
    min_pairwise_distance: float | None
    min_obstacle_distance: float | None = None
    per_robot_compute_mean: float | None = None
    per_robot_compute_max: float | None = None
    steps: int = 0
    sim_time: float = 0.0

    def to_doc(self) -> dict:
        return {
            "success": self.success,
            "arrival_rate": self.arrival_rate,
            "makespan": self.makespan,
            "mean_time": self.mean_time,
            "min_pairwise_distance": self.min_pairwise_distance,
            "min_obstacle_distance": self.min_obstacle_distance,
            "per_robot_compute": {"mean": self.per_robot_compute_mean,
                                  "max": self.per_robot_compute_max},
            "steps": self.steps,
            "sim_time": self.sim_time,
        }


def _obstacle_distances(obstacles, pos: np.ndarray) -> np.ndarray:
    """(n_obstacles, n_robots) boundary distances, vectorized per obstacle."""
    n = pos.shape[0]
    out = np.empty((len(obstacles), n))
    for k, o in enumerate(obstacles):
        if isinstance(o, Circle):
            d = np.hypot(pos[:, 0] - o.center[0], pos[:, 1] - o.center[1]) - o.radius
            out[k] = np.maximum(d, 0.0)
        else:
            dx = np.maximum(np.maximum(o.min_corner[0] - pos[:, 0],
                                       pos[:, 0] - o.max_corner[0]), 0.0)
            dy = np.maximum(np.maximum(o.min_corner[1] - pos[:, 1],
                                       pos[:, 1] - o.max_corner[1]), 0.0)
            out[k] = np.hypot(dx, dy)
    return out


class _Audit:
    """Records decentralization evidence: how far away any consumed state or
    roundabout actually was."""

    def __init__(self):
        self.max_neighbor_dist = 0.0
        self.max_roundabout_excess = 0.0
        self.membership_violations = 0


def _orbit_velocity(view, roundabout, params: SimParams):
    """MGR-mode reference with fail-safes for missing/degenerate roundabouts.

    The field is evaluated at the robot's look-ahead point, advanced half a
    control period along itself. The look-ahead transform slaves that point
    (not the center) to the commanded velocity, and the rotating reference is
    held constant over the period; sampling the field at the robot center and
    current time makes the point trail the field and every orbit balloon
    outward until the weak radial gain is spent.
    """
    if roundabout is None:
        return nominal_goal_velocity(view, params)
    la = params.control.lookahead
    px = view.position[0] + la * math.cos(view.heading)
    py = view.position[1] + la * math.sin(view.heading)
    try:
        u = orbit_field((px, py), roundabout, params)
        half = 0.5 * params.dt
        return orbit_field((px + u[0] * half, py + u[1] * half), roundabout, params)
    except DegenerateCenter:
        return (0.0, 0.0)


def run(ws: Workspace, robots, params: SimParams, collect_trace: bool = True,
        audit: "_Audit | None" = None):
    """Simulate one scenario to completion or time limit.

    Returns (Metrics, list[TraceRecord]); the trace list is empty when
    collect_trace is False. `audit` optionally gathers decentralization and
    membership-conservation evidence for the test suite.
    """
    params.validate()
    n = len(robots)
    dt = params.dt
    eps = params.mgr.eps
    comm = params.mgr.delta_comm
    sensing = params.mgr.delta_sensing
    v_cap = params.control.v_max
    use_mgr = params.method == METHOD_MGR

    pos = np.array([r.position for r in robots], dtype=float)
    heading = np.array([r.heading for r in robots], dtype=float)
    vel = np.zeros((n, 2))
    goal = np.array([r.goal for r in robots], dtype=float)
    mode = [GOAL] * n
    rid: list[int | None] = [None] * n
    arrived = [False] * n
    arrival_time: list[float | None] = [None] * n

    obstacles = list(ws.obstacles)
    validity_obs = obstacles + boundary_rects(ws)
    registry = RoundaboutRegistry()
    pending_invites: list = []

    steps_total = int(round(params.time_limit / dt))
    min_pair = math.inf
    min_obs = math.inf
    compute_per_robot: list[float] = []
    trace: list[TraceRecord] = []

    def roundabout_docs():
        return [{"id": r.id, "center": [r.center[0], r.center[1]],
                 "radius": r.radius, "n": r.n}
                for _, r in sorted(registry.roundabouts.items())]

    def record(t):
        if not collect_trace:
            return
        robots_doc = []
        for i in range(n):
            doc = {"id": i, "position": [pos[i, 0], pos[i, 1]],
                   "heading": heading[i], "mode": mode[i],
                   "si_velocity": [vel[i, 0], vel[i, 1]]}
            if mode[i] == MGR:
                doc["roundabout_id"] = rid[i]
            robots_doc.append(doc)
        trace.append(TraceRecord(t=float(t), robots=robots_doc,
                                 roundabouts=roundabout_docs()))

    def update_min_distances():
        nonlocal min_pair, min_obs
        if n > 1:
            diff = pos[:, None, :] - pos[None, :, :]
            d2 = diff[:, :, 0] ** 2 + diff[:, :, 1] ** 2
            np.fill_diagonal(d2, np.inf)
            m = math.sqrt(float(d2.min()))
            if m < min_pair:
                min_pair = m
            dists = np.sqrt(d2)
        else:
            dists = np.zeros((1, 1))
        obs_d = _obstacle_distances(obstacles, pos) if obstacles else None
        if obs_d is not None:
            m = float(obs_d.min())
            if m < min_obs:
                min_obs = m
        return dists, obs_d

    record(0.0)
    steps_done = 0
    for step in range(steps_total):
        if all(arrived):
            break
        t = step * dt
        t0 = time.perf_counter()

        dists, obs_d = update_min_distances()
        pos_list = pos.tolist()
        vel_list = vel.tolist()
        goal_list = goal.tolist()

        shares = [StateShare(sender=j, position=(pos_list[j][0], pos_list[j][1]),
                             velocity=(vel_list[j][0], vel_list[j][1]),
                             goal=(goal_list[j][0], goal_list[j][1]),
                             mode=mode[j], arrived=arrived[j])
                  for j in range(n)]
        views = [RobotView(id=i, position=shares[i].position, heading=float(heading[i]),
                           velocity=shares[i].velocity, goal=shares[i].goal,
                           mode=mode[i], roundabout_id=rid[i], arrived=arrived[i])
                 for i in range(n)]
        if n > 1:
            neighbor_idx = [np.nonzero(dists[i] <= comm)[0] for i in range(n)]
        else:
            neighbor_idx = [np.zeros(0, dtype=int)]
        if obstacles:
            near_obs = [[obstacles[k] for k in np.nonzero(obs_d[:, i] <= sensing)[0]]
                        for i in range(n)]
        else:
            near_obs = [[] for _ in range(n)]

        if audit is not None:
            for i in range(n):
                for j in neighbor_idx[i]:
                    audit.max_neighbor_dist = max(audit.max_neighbor_dist,
                                                  float(dists[i][j]))

        # deadlock-prevention pass
        if use_mgr:
            invites_for: dict[int, list] = {}
            for recipient, inv in pending_invites:
                invites_for.setdefault(recipient, []).append(inv)
            decisions = []
            for i in range(n):
                if arrived[i]:
                    continue
                inbox = list(invites_for.get(i, ()))
                inbox.extend(shares[j] for j in neighbor_idx[i])
                rounds_view = registry.view_for(views[i].position, params, own_id=rid[i])
                if audit is not None:
                    for r in rounds_view:
                        d = math.hypot(r.center[0] - pos_list[i][0],
                                       r.center[1] - pos_list[i][1])
                        excess = d - registry.locality_bound(r, params)
                        if r.id != rid[i] and excess > audit.max_roundabout_excess:
                            audit.max_roundabout_excess = excess
                decisions.append((i, step_mgr(views[i], inbox, rounds_view,
                                              obstacles, params, validity_obs)))
            remap = registry.apply(decisions, params)
            next_invites = []
            for i, res in decisions:
                new_rid = res.mode.roundabout_id
                if new_rid is not None:
                    new_rid = remap.get(new_rid, new_rid)
                if res.mode.tag == MGR and (new_rid is None or registry.get(new_rid) is None):
                    mode[i], rid[i] = GOAL, None
                elif res.mode.tag == MGR:
                    mode[i], rid[i] = MGR, new_rid
                else:
                    mode[i], rid[i] = GOAL, None
                for recipient, inv in res.outbox:
                    fid = remap.get(inv.roundabout.id, inv.roundabout.id)
                    live = registry.get(fid)
                    if live is not None and not arrived[recipient]:
                        next_invites.append((recipient, Invite(sender=i, roundabout=live)))
            pending_invites = next_invites
            if audit is not None:
                counted = sum(1 for i in range(n) if mode[i] == MGR)
                members = sum(r.n for r in registry.roundabouts.values())
                referenced = sum(1 for i in range(n)
                                 if mode[i] == MGR and rid[i] in registry.roundabouts
                                 and i in registry.roundabouts[rid[i]].members)
                if not (counted == members == referenced):
                    audit.membership_violations += 1

        # control pass
        v_arr = np.zeros(n)
        w_arr = np.zeros(n)
        for i in range(n):
            if arrived[i]:
                vel[i, 0] = vel[i, 1] = 0.0
                continue
            view = views[i]
            if mode[i] == MGR:
                u_des = _orbit_velocity(view, registry.get(rid[i]), params)
            else:
                u_des = nominal_goal_velocity(view, params)
                if near_obs[i]:
                    u_des = right_hand_rule_bias(u_des, view, near_obs[i], params)
            nbrs = [shares[j] for j in neighbor_idx[i]]
            cmd, si = compute_control(view, nbrs, near_obs[i], u_des, mode[i], params)
            v_arr[i] = cmd.v
            w_arr[i] = cmd.omega
            vel[i, 0], vel[i, 1] = si

        compute_per_robot.append((time.perf_counter() - t0) / n)

        # integrate and mark arrivals
        pos[:, 0] += v_arr * np.cos(heading) * dt
        pos[:, 1] += v_arr * np.sin(heading) * dt
        heading = np.array([wrap_angle(a) for a in heading + w_arr * dt])
        t_next = (step + 1) * dt
        for i in range(n):
            if arrived[i]:
                continue
            if math.hypot(pos[i, 0] - goal[i, 0], pos[i, 1] - goal[i, 1]) <= eps:
                arrived[i] = True
                arrival_time[i] = t_next
                vel[i, 0] = vel[i, 1] = 0.0
                if rid[i] is not None:
                    c = registry.get(rid[i])
                    if c is not None:
                        c.members.discard(i)
                        if c.n == 0:
                            del registry.roundabouts[rid[i]]
                mode[i], rid[i] = GOAL, None
        steps_done = step + 1
        record(t_next)

    update_min_distances()

    success = all(arrived)
    times = [at for at in arrival_time if at is not None]
    metrics = Metrics(
        success=success,
        arrival_rate=len(times) / n,
        makespan=max(times) if success else None,
        mean_time=(sum(times) / len(times)) if times else None,
        min_pairwise_distance=min_pair if n > 1 else None,
        min_obstacle_distance=min_obs if obstacles else None,
        per_robot_compute_mean=(sum(compute_per_robot) / len(compute_per_robot))
        if compute_per_robot else None,
        per_robot_compute_max=max(compute_per_robot) if compute_per_robot else None,
        steps=steps_done,
        sim_time=steps_done * dt,
    )
    return metrics, trace


def compute_metrics(trace, params: SimParams, workspace: Workspace | None = None,
                    goals=None) -> Metrics:
    """Recompute run metrics from a trace alone.

    Arrival times are the first record times at which each robot is within the
    arrival threshold of its goal; goals default to each robot's final
    position in the trace unless given. Obstacle distances need `workspace`.
    Compute-time fields cannot be recovered from a trace and stay None.
    """
    if not trace:
        raise ValueError("trace must be nonempty")
    n = len(trace[0].robots)
    if goals is None:
        goals = [tuple(r["position"]) for r in trace[-1].robots]
    eps = params.mgr.eps
    arrival: list[float | None] = [None] * n
    min_pair = math.inf
    min_obs = math.inf
    for rec in trace:
        pts = [r["position"] for r in rec.robots]
        for i, p in enumerate(pts):
            if arrival[i] is None and math.hypot(p[0] - goals[i][0], p[1] - goals[i][1]) <= eps:
                arrival[i] = rec.t
        for i in range(n):
            for j in range(i + 1, n):
                d = math.hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1])
                if d < min_pair:
                    min_pair = d
        if workspace is not None:
            for p in pts:
                for o in workspace.obstacles:
                    d = dist_point_obstacle(p, o)
                    if d < min_obs:
                        min_obs = d
    times = [a for a in arrival if a is not None]
    success = len(times) == n
    return Metrics(
        success=success,
        arrival_rate=len(times) / n,
        makespan=max(times) if success else None,
        mean_time=(sum(times) / len(times)) if times else None,
        min_pairwise_distance=min_pair if n > 1 else None,
        min_obstacle_distance=(min_obs if (workspace is not None and workspace.obstacles)
                               else None),
        steps=len(trace) - 1,
        sim_time=trace[-1].t,
    )


# --- trace files ------------------------------------------------------------

def write_trace(path, trace):
    with open(path, "w") as fh:
        fh.write(json.dumps({"schema": TRACE_SCHEMA}) + "\n")
        for rec in trace:
            fh.write(json.dumps(rec.to_doc()) + "\n")


def read_trace(path):
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("schema") != TRACE_SCHEMA:
            raise ValueError(f"unsupported trace schema {header.get('schema')!r}")
        return [TraceRecord.from_doc(json.loads(line)) for line in fh if line.strip()]


# --- batch experiments ------------------------------------------------------

@dataclass
class BatchRow:
    env: str
    n: int
    method: str
    seeds: int
    success_rate: float
    arrival_rate: float
    makespan_mean: float | None
    makespan_sd: float | None
    mean_time_mean: float | None
    mean_time_sd: float | None
    runs: list


def _run_job(job):
    cfg, params = job
    ws, robots = generate_scenario(cfg, params)
    metrics, _ = run(ws, robots, params, collect_trace=False)
    return metrics


def _mean_sd(values):
    if not values:
        return None, None
    mean = sum(values) / len(values)
    if len(values) == 1:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in values) / (len(values) - 1)
    return mean, math.sqrt(var)


def batch_workers() -> int:
    env_cap = os.environ.get("MGR_THREADS")
    if env_cap:
        return max(1, int(env_cap))
    return os.cpu_count() or 1


def run_batch(env: str, n_list, seeds, params: SimParams, methods=None) -> list[BatchRow]:
    """Run the (env x N x seed x method) matrix and aggregate per (env, N, method).

    Seeds may be an int (uses range(seeds)) or an explicit iterable. Runs fan
    out over processes when MGR_THREADS (or the CPU count) allows; per-run
    determinism makes the execution order irrelevant.
    """
    if isinstance(seeds, int):
        seeds = range(seeds)
    seeds = list(seeds)
    methods = list(methods) if methods else [params.method]
    jobs = []
    keys = []
    for n in n_list:
        for method in methods:
            for seed in seeds:
                cfg = ScenarioConfig(env=env, n=n, seed=seed)
                jobs.append((cfg, params.with_method(method)))
                keys.append((n, method))
    workers = min(batch_workers(), max(1, len(jobs)))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]

    rows = []
    for n in n_list:
        for method in methods:
            group = [m for k, m in zip(keys, results) if k == (n, method)]
            if not group:
                rows.append(BatchRow(env, n, method, 0, 0.0, 0.0,
                                     None, None, None, None, []))
                continue
            mk_mean, mk_sd = _mean_sd([m.makespan for m in group if m.makespan is not None])
            mt_mean, mt_sd = _mean_sd([m.mean_time for m in group if m.mean_time is not None])
            rows.append(BatchRow(
                env=env, n=n, method=method, seeds=len(group),
                success_rate=sum(1 for m in group if m.success) / len(group),
                arrival_rate=sum(m.arrival_rate for m in group) / len(group),
                makespan_mean=mk_mean, makespan_sd=mk_sd,
                mean_time_mean=mt_mean, mean_time_sd=mt_sd,
                runs=group,
            ))
    return rows


CSV_HEADER = ("env,N,method,success_rate,arrival_rate,"
              "makespan_mean,makespan_sd,mean_time_mean,mean_time_sd")


def rows_to_csv(rows) -> str:
    def fmt(v):
        return "" if v is None else f"{v:.6g}"

    lines = [CSV_HEADER]
    for r in rows:
        lines.append(",".join([r.env, str(r.n), r.method,
                               f"{r.success_rate:.6g}", f"{r.arrival_rate:.6g}",
                               fmt(r.makespan_mean), fmt(r.makespan_sd),
                               fmt(r.mean_time_mean), fmt(r.mean_time_sd)]))
    return "\n".join(lines) + "\n"
