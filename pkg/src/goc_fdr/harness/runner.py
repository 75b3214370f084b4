"""Closed detection and recovery loop over one scenario run.

Time bookkeeping is logical: the world freezes from fault detection until
the recovery motions finish, and every delay of the fault handling pipeline
is appended to a per-fault timeline as ``(component, seconds)``. Component
totals and ``t_fdr`` are ``math.fsum`` reductions of that timeline, so the
stored values can be recomputed from it bit for bit.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from ..channel import LinkModel
from ..edge_points.attention import EdgePointSet, extract_edge_points
from ..fault_detect import MOTION_LEVEL, TASK_LEVEL, FaultEvent, detect, expected_for_motion
from ..offload import EDGE, LOCAL, DataSizes, OffloadDecision, decide, thresholds
from ..planner import ObstacleSummary, RecoveryContext, make_planner
from ..scene_graph.geometry import workspace_scene_graph
from ..scene_graph.triplets import SceneGraph3D, serialize_sg
from ..twin import DigitalTwin, Trajectory, reconstruct, recover_motion, verify
from ..world import MotionCommand, Workspace
from .config import ScenarioConfig, build_workspace

POINT_BITS = 96  # three float32 coordinates
MAX_FAULTS_PER_RUN = 10
COMPONENTS = ("t_sg", "t_dt", "t_com", "t_inf", "t_exe")

METRICS_HEADER = ("scenario", "seed", "fault_index", "kind", "frame", "strategy", "psi_sg", "psi_edge",
                  "psi_full", "uplink_bits", "downlink_bits", "t_sg", "t_dt", "t_com", "t_inf", "t_exe",
                  "t_fdr", "rounds", "recovered", "success", "steps", "run_uplink_bits", "region")


@dataclass
class FaultRecord:
    kind: str
    frame: int
    robot: str
    implicated: tuple
    strategy: str
    psi_sg: int
    psi_edge: int
    psi_full: int
    timeline: list = field(default_factory=list)  # (component, seconds) in pipeline order
    uplink_bits: int = 0
    downlink_bits: int = 0
    rounds: int = 0
    recovered: bool = False
    evidence: tuple = ()
    trajectories: list = field(default_factory=list)  # verified recovery trajectories
    twin: DigitalTwin | None = None  # twin the trajectories were verified in
    excluded: frozenset = frozenset()  # carried object ids skipped during verification

    def component(self, name: str) -> float:
        return math.fsum(v for c, v in self.timeline if c == name)

    @property
    def t_sg(self) -> float:
        return self.component("t_sg")

    @property
    def t_dt(self) -> float:
        return self.component("t_dt")

    @property
    def t_com(self) -> float:
        return self.component("t_com")

    @property
    def t_inf(self) -> float:
        return self.component("t_inf")

    @property
    def t_exe(self) -> float:
        return self.component("t_exe")

    @property
    def t_fdr(self) -> float:
        """Task-level: t_sg + t_com + t_inf + t_exe; motion-level adds t_dt."""
        return math.fsum(self.component(c) for c in COMPONENTS)


@dataclass
class RunMetrics:
    scenario: str
    seed: int
    decision: OffloadDecision
    faults: list = field(default_factory=list)
    success: bool = False
    steps: int = 0
    frame_uplink_bits: list = field(default_factory=list)  # (frame, bits) per detection frame
    failure: str = ""
    proactive_rounds: int = 0
    final_sg: SceneGraph3D | None = None

    @property
    def uplink_bits(self) -> int:
        return int(sum(b for _, b in self.frame_uplink_bits)) + sum(f.uplink_bits for f in self.faults)

    def rows(self) -> list[tuple]:
        base = (self.scenario, self.seed)
        tail = (int(self.success), self.steps, self.uplink_bits, self.decision.region)
        if not self.faults:
            return [base + (-1, "none", -1, "", 0, 0, 0, 0, 0) + (0.0,) * 6 + (0, 0) + tail]
        out = []
        for i, f in enumerate(self.faults):
            out.append(base + (i, f.kind, f.frame, f.strategy, f.psi_sg, f.psi_edge, f.psi_full,
                               f.uplink_bits, f.downlink_bits, f.t_sg, f.t_dt, f.t_com, f.t_inf,
                               f.t_exe, f.t_fdr, f.rounds, int(f.recovered)) + tail)
        return out


def _cell(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def metrics_csv(runs) -> str:
    """Header plus one row per fault (or one per fault-free run), floats as repr."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for m in runs:
        for row in m.rows():
            w.writerow([_cell(v) for v in row])
    return buf.getvalue()


# -- payloads -------------------------------------------------------------------------

def payload_sizes(ws: Workspace, clouds: dict, sg: SceneGraph3D, k: int) -> DataSizes:
    """Bits of the three candidate uplink payloads for the current frame.

    Edge points are ``min(k, N)`` per non-robot object; the full cloud
    includes the robots' own points.
    """
    psi_sg = len(serialize_sg(sg)) * 8
    psi_edge = sum(min(k, len(c)) for oid, c in clouds.items() if oid in ws.objects) * POINT_BITS
    psi_full = sum(len(c) for c in clouds.values()) * POINT_BITS
    return DataSizes(psi_sg, psi_edge, psi_full)


def offload_decision(cfg: ScenarioConfig, sizes: DataSizes) -> OffloadDecision:
    limits = thresholds(cfg.timing, sizes, cfg.channel)
    if cfg.offload_mode == "force_local":
        return OffloadDecision(LOCAL, LOCAL, *limits)
    if cfg.offload_mode == "force_edge":
        return OffloadDecision(EDGE, EDGE, *limits)
    return decide(cfg.channel.bandwidth_hz, limits)


class _Timed:
    """Planner proxy logging the charged latency of every call."""

    def __init__(self, planner, sink: list):
        self.planner = planner
        self.sink = sink

    def _log(self, fn, *args):
        try:
            return fn(*args)
        finally:
            self.sink.append(("t_inf", float(self.planner.last_latency)))

    def replan_task(self, ctx):
        return self._log(self.planner.replan_task, ctx)

    def propose_trajectory(self, ctx):
        return self._log(self.planner.propose_trajectory, ctx)

    def refine(self, ctx, report):
        return self._log(self.planner.refine, ctx, report)


def _text_bits(text: str) -> int:
    return len(text.encode("utf-8")) * 8


def _trajectory_text(traj: Trajectory) -> str:
    return "".join(f"wp {' '.join(repr(float(c)) for c in p)}\n" for p in traj.waypoints)


def _move_commands(robot, waypoints, group) -> list[MotionCommand]:
    cmds, prev = [], robot.gripper_pose.copy()
    for wp in waypoints:
        wp = np.asarray(wp, dtype=float)
        dist = float(np.linalg.norm(wp - prev))
        cmds.append(MotionCommand("move_to", target=wp, speed=robot.speed, group=group,
                                  nominal_duration=max(dist / robot.speed, 1e-3)))
        prev = wp
    return cmds


class Run:
    """State of one scenario execution; use :func:`run_scenario`."""

    def __init__(self, cfg: ScenarioConfig, planner=None):
        self.cfg = cfg
        self.ws = build_workspace(cfg)
        self.rng = np.random.default_rng(cfg.seed)
        self.link = LinkModel(cfg.channel)
        self.th = cfg.tolerances.relation_thresholds()
        self.planner = planner if planner is not None else make_planner(
            cfg.planner.kind, cfg.planner.endpoint, cfg.planner.timeout, cfg.planner.t_inf)
        self.relevant = set(cfg.relevant())
        self.robot_caps = {r.caption for r in self.ws.robots.values()}
        self.goals = cfg.goals()
        self.known_obstacles: dict[int, object] = {}  # object id -> ObjectHull
        sg0 = workspace_scene_graph(self.ws, self.th, 0)
        clouds0 = self._clouds()
        self.initial_sizes = self._sizes(clouds0, sg0)
        self.metrics = RunMetrics(cfg.name, cfg.seed, offload_decision(cfg, self.initial_sizes))
        self.prev = sg0
        self.expected = {rid: None for rid in self.ws.robots}
        self.motion_counter = 0

    # -- helpers ----------------------------------------------------------------

    def _clouds(self) -> dict:
        c = self.cfg
        return self.ws.synth_point_cloud(c.density, c.noise_sigma, self.rng)

    def _sizes(self, clouds, sg) -> DataSizes:
        return payload_sizes(self.ws, clouds, sg, self.cfg.tolerances.k)

    def _streaming(self) -> bool:
        return self.cfg.payload_mode == "periodic" or self.metrics.decision.task == EDGE

    def _carried(self) -> set:
        return {r.carried_object for r in self.ws.robots.values() if r.carried_object is not None}

    def _execute(self, rid: int, cmds: list) -> float:
        """Run ``cmds`` on one robot with the others held; returns nominal time."""
        robot = self.ws.robots[rid]
        robot.motion_queue.extendleft(reversed(cmds))
        pending = {id(c) for c in cmds}
        while any(id(c) in pending for c in robot.motion_queue):
            if self.ws.step_index >= self.cfg.max_steps:
                break
            self.ws.step(self.cfg.dt, robots=[rid])
        return math.fsum(c.nominal_duration for c in cmds)

    # -- main loop ----------------------------------------------------------------

    def run(self, stop_at_first_fault: bool = False) -> RunMetrics:
        ws, m = self.ws, self.metrics
        while any(r.motion_queue for r in ws.robots.values()) and ws.step_index < self.cfg.max_steps:
            for rid in sorted(ws.robots):
                q = ws.robots[rid].motion_queue
                if q and q[0].status == "pending":
                    if self.known_obstacles and q[0].kind == "move_to":
                        self._guard_move(rid)
                    self.motion_counter += 1
                    self.expected[rid] = expected_for_motion(ws, rid, q[0], self.prev, self.motion_counter)
            finished = ws.step(self.cfg.dt)
            done = {rid for rid, _ in finished}
            curr = workspace_scene_graph(ws, self.th, ws.step_index)
            clouds = None
            if self._streaming():
                clouds = self._clouds()
                m.frame_uplink_bits.append((ws.step_index, int(self._sizes(clouds, curr).psi_full_points)))
            else:
                m.frame_uplink_bits.append((ws.step_index, 0))
            event, rid = None, None
            for r in sorted(ws.robots):
                event = detect(self.prev, curr, self.expected[r], self.relevant,
                               completed=r in done, robots=self.robot_caps)
                if event is not None:
                    rid = r
                    break
            if event is None:
                for r in done:
                    self.expected[r] = None
                self.prev = curr
                continue
            if stop_at_first_fault:
                m.faults.append(self._record(event, rid, curr, clouds))
                break
            self.touched = set(done)
            rec = self._handle(event, rid, curr, clouds)
            m.faults.append(rec)
            if not rec.recovered or len(m.faults) >= MAX_FAULTS_PER_RUN:
                break
            for r in self.touched:
                self.expected[r] = None
            self.prev = workspace_scene_graph(ws, self.th, ws.step_index)
        m.steps = ws.step_index
        m.final_sg = workspace_scene_graph(ws, self.th, ws.step_index)
        goals_met = all(g.triplet in m.final_sg for g in self.goals)
        idle = not any(r.motion_queue for r in ws.robots.values())
        m.success = bool(goals_met and idle and all(f.recovered for f in m.faults))
        if not m.success and not m.failure:
            m.failure = "goal triplets not satisfied" if idle else "run did not finish"
        return m

    def _record(self, event: FaultEvent, rid: int, sg: SceneGraph3D, clouds) -> FaultRecord:
        if clouds is None:
            clouds = self._clouds()
        self._fault_clouds = clouds
        sizes = self._sizes(clouds, sg)
        return FaultRecord(event.kind, event.frame, self.ws.robots[rid].caption, event.implicated,
                           self.metrics.decision.strategy(event.kind), int(sizes.psi_sg),
                           int(sizes.psi_edge_points), int(sizes.psi_full_points), evidence=event.evidence)

    def _handle(self, event: FaultEvent, rid: int, sg: SceneGraph3D, clouds) -> FaultRecord:
        timing = self.cfg.timing
        rec = self._record(event, rid, sg, clouds)
        clouds = self._fault_clouds
        strategy = rec.strategy
        tl = rec.timeline
        local = strategy == LOCAL
        tl.append(("t_sg", timing.t_sg_local if local else timing.t_sg_edge))
        if event.kind == TASK_LEVEL:
            rec.uplink_bits = rec.psi_sg if local else rec.psi_full
        else:
            tl.append(("t_dt", timing.t_dt_local if local else timing.t_dt_edge))
            rec.uplink_bits = rec.psi_edge if local else rec.psi_full
        tl.append(("t_com", self.link.time(rec.uplink_bits)))
        planner = _Timed(self.planner, tl)
        if event.kind == TASK_LEVEL:
            self._recover_task(rec, event, rid, sg, planner)
        else:
            self._recover_motion(rec, event, sg, clouds, planner)
        return rec

    def _recover_task(self, rec, event, rid, sg, planner) -> None:
        ws, tl = self.ws, rec.timeline
        ctx = RecoveryContext(fault=event, sg=sg, goals=self.goals,
                              objects=frozenset(o.caption for o in ws.objects.values()) | self.robot_caps,
                              robot=ws.robots[rid].caption, delta=self.cfg.tolerances.delta)
        plan = planner.replan_task(ctx)
        rec.rounds = 1
        text = "unrecoverable\n" if plan.unrecoverable else (
            "".join(f"{a}\n" for a in plan.actions) or "noop\n")
        rec.downlink_bits = _text_bits(text)
        tl.append(("t_com", self.link.time(rec.downlink_bits)))
        if plan.unrecoverable:
            self.metrics.failure = f"unrecoverable: {plan.reason}"
            return
        implicated = {ws.by_caption(c).id for c in event.implicated if c in {o.caption for o in ws.objects.values()}}
        robot = ws.robots[rid]
        robot.motion_queue = type(robot.motion_queue)(c for c in robot.motion_queue if c.group not in implicated)
        self.touched.add(rid)
        cmds = []
        for a in plan.actions:
            cmds.extend(ws.expand_action(rid, a))
        # expand_action starts each chain from the current pose; re-anchor the durations
        cmds = self._rechain(robot, cmds)
        tl.append(("t_exe", self._execute(rid, cmds) if cmds else 0.0))
        after = workspace_scene_graph(ws, self.th, ws.step_index)
        rec.recovered = all(g.triplet in after for g in self.goals if g.obj in event.implicated)

    def _rechain(self, robot, cmds: list) -> list:
        """Nominal durations for a queued chain, each leg starting where the last ended."""
        pos = robot.gripper_pose.copy()
        out = []
        for c in cmds:
            if c.kind == "move_to":
                dist = float(np.linalg.norm(c.target - pos))
                c.nominal_duration = max(dist / c.speed, 1e-3)
                pos = c.target.copy()
            elif c.kind == "pick":
                obj = self.ws.objects[c.object_id]
                grasp = self.ws.grasp_point(obj)
                c.nominal_duration = max(float(np.linalg.norm(grasp - pos)) / c.speed, 1e-3)
                pos = grasp
            else:
                obj = self.ws.objects[c.object_id]
                goal = c.target + np.array([0.0, 0.0, obj.aabb_half()[2]])
                c.nominal_duration = max(float(np.linalg.norm(goal - pos)) / c.speed, 1e-3)
                pos = goal
            out.append(c)
        return out

    def _edge_sets(self, clouds) -> list[EdgePointSet]:
        k = self.cfg.tolerances.k
        return [extract_edge_points(clouds[oid], k=k) for oid in sorted(clouds) if oid in self.ws.objects]

    def _recover_motion(self, rec, event, sg, clouds, planner) -> None:
        ws, tol, tl = self.ws, self.cfg.tolerances, rec.timeline
        captions = {o.id: o.caption for o in ws.objects.values()}
        twin = reconstruct(self._edge_sets(clouds), captions, fit_curves=self.cfg.fit_curves,
                           curve_params={"eps": tol.eps, "min_pts": tol.min_pts, "lam": tol.lam})
        obstacle_ids = [ws.by_caption(c).id for c in event.implicated]
        for oid in obstacle_ids:
            self.known_obstacles[oid] = twin.hulls[oid]
        self.relevant |= set(event.implicated)
        rec.twin, rec.excluded = twin, frozenset(self._carried())
        blocked = sorted({ws.by_caption(c).id for t in event.evidence for c in (t.caption_m, t.caption_n)
                          if c in self.robot_caps})
        rec.recovered = True
        for rid in blocked:
            robot = ws.robots[rid]
            head = robot.motion_queue[0] if robot.motion_queue else None
            if head is None or head.kind != "move_to" or head.status != "active":
                continue
            ctx = RecoveryContext(fault=event, sg=sg, robot=robot.caption, start=robot.gripper_pose.copy(),
                                  goal=head.goal.copy(), obstacles=self._summaries(twin, obstacle_ids),
                                  delta=tol.delta)
            res = recover_motion(planner, twin, ctx, tol.max_rounds, tol.delta, tol.eps_goal,
                                 exclude=rec.excluded)
            rec.rounds += res.rounds
            if not res.success:
                rec.recovered = False
                self.metrics.failure = f"no verified trajectory after {res.rounds} rounds"
                return
            rec.trajectories.append(res.trajectory)
            bits = _text_bits(_trajectory_text(res.trajectory))
            rec.downlink_bits += bits
            tl.append(("t_com", self.link.time(bits)))
            robot.motion_queue.popleft()
            self.touched.add(rid)
            cmds = _move_commands(robot, res.trajectory.waypoints[1:], head.group)
            tl.append(("t_exe", self._execute(rid, cmds)))

    def _summaries(self, twin: DigitalTwin, ids) -> tuple:
        out = []
        for oid in ids:
            h = twin.hulls[oid]
            c = h.centroid
            r = float(np.max(np.linalg.norm((h.vertices - c)[:, :2], axis=1)))
            out.append(ObstacleSummary(oid, h.caption, tuple(float(v) for v in c), r))
        return tuple(out)

    def _guard_move(self, rid: int) -> None:
        """Route a move about to start around obstacles already in the twin."""
        ws, tol = self.ws, self.cfg.tolerances
        robot = ws.robots[rid]
        cmd = robot.motion_queue[0]
        twin = DigitalTwin(dict(self.known_obstacles))
        start = robot.gripper_pose.copy()
        straight = Trajectory(np.vstack([start, cmd.target]), cmd.target)
        if verify(twin, straight, tol.delta, tol.eps_goal).passed:
            return
        ctx = RecoveryContext(robot=robot.caption, start=start, goal=cmd.target.copy(),
                              obstacles=self._summaries(twin, sorted(self.known_obstacles)), delta=tol.delta)
        res = recover_motion(self.planner, twin, ctx, tol.max_rounds, tol.delta, tol.eps_goal)
        self.metrics.proactive_rounds += res.rounds
        if not res.success:
            return  # leave the straight move; the run will be judged on its outcome
        robot.motion_queue.popleft()
        robot.motion_queue.extendleft(reversed(_move_commands(robot, res.trajectory.waypoints[1:], cmd.group)))


def run_scenario(cfg: ScenarioConfig, planner=None, *, stop_at_first_fault: bool = False) -> RunMetrics:
    """Execute one scenario; see :class:`RunMetrics` for what is recorded."""
    return Run(cfg, planner).run(stop_at_first_fault=stop_at_first_fault)
