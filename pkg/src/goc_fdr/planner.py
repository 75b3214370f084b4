"""Recovery planners behind one contract.

``RulePlanner`` does goal regression for task-level faults and a detour
heuristic for motion-level faults. ``RemotePlanner`` sends the same context
to an HTTP service and falls back to the rule planner on any failure.
"""

from __future__ import annotations

import logging
import os
import socket
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field

import numpy as np

from .scene_graph.triplets import GRASPED_BY, SceneGraph3D, Triplet
from .twin import COLLISION, Trajectory, VerificationReport
from .world import Action

log = logging.getLogger(__name__)

DEFAULT_T_INF = 0.005
ENV_URL = "GOC_PLANNER_URL"


class PlanParseError(ValueError):
    pass


@dataclass(frozen=True)
class GoalSpec:
    """One goal triplet plus the pose that realises it."""

    obj: str
    relation: str
    reference: str
    pose: tuple
    slot: int = 0

    @property
    def triplet(self) -> Triplet:
        return Triplet.make(self.obj, self.relation, self.reference)


@dataclass(frozen=True)
class ObstacleSummary:
    object_id: int
    caption: str
    centroid: tuple
    radius: float  # horizontal circumradius of the hull


@dataclass
class RecoveryContext:
    fault: object | None = None  # FaultEvent
    sg: SceneGraph3D | None = None
    goals: tuple = ()  # GoalSpec
    objects: frozenset = frozenset()  # captions present in the scene
    robot: str = "robot"
    start: np.ndarray | None = None
    goal: np.ndarray | None = None
    obstacles: tuple = ()  # ObstacleSummary
    delta: float = 0.03
    history: list = field(default_factory=list)


@dataclass(frozen=True)
class RecoveryPlan:
    actions: tuple = ()
    trajectory: Trajectory | None = None
    unrecoverable: bool = False
    reason: str = ""

    @property
    def noop(self) -> bool:
        return not self.actions and self.trajectory is None and not self.unrecoverable


# -- rule-based planner -----------------------------------------------------------

class RulePlanner:
    t_inf = DEFAULT_T_INF
    growth = 1.5

    def __init__(self, t_inf: float = DEFAULT_T_INF):
        self.t_inf = t_inf
        self.last_latency = t_inf

    def replan_task(self, ctx: RecoveryContext) -> RecoveryPlan:
        """Pick/place actions that restore the unmet goal triplets.

        Only goals involving objects implicated by the fault are considered
        (others may simply not have been reached yet). Actions are ordered by
        slot index, then caption.
        """
        self.last_latency = self.t_inf
        sg = ctx.sg or SceneGraph3D()
        implicated = set(getattr(ctx.fault, "implicated", ()) or ())
        todo = []
        for g in ctx.goals:
            if implicated and g.obj not in implicated:
                continue
            if g.triplet in sg:
                continue
            for cap in (g.obj, g.reference):
                if cap not in ctx.objects:
                    return RecoveryPlan(unrecoverable=True, reason=f"{cap!r} is not in the scene")
            todo.append(g)
        actions = []
        for g in sorted(todo, key=lambda g: (g.slot, g.obj)):
            if Triplet(g.obj, GRASPED_BY, ctx.robot) not in sg:
                actions.append(Action("pick", g.obj))
            actions.append(Action("place", g.obj, g.reference, tuple(float(v) for v in g.pose)))
        return RecoveryPlan(tuple(actions))

    def propose_trajectory(self, ctx: RecoveryContext) -> Trajectory:
        self.last_latency = self.t_inf
        return Trajectory(np.vstack([ctx.start, ctx.goal]), ctx.goal, source=1)

    def refine(self, ctx: RecoveryContext, report: VerificationReport) -> Trajectory:
        """Straight line plus one horizontal detour waypoint per offending object.

        An object named in ``n`` collision reports is passed at
        ``(radius + delta) * 1.5**(n - 1)`` from its centroid, on the side of
        the blocked segment away from the centroid.
        """
        self.last_latency = self.t_inf
        counts: dict[int, int] = {}
        for _, rep in ctx.history:
            if rep.verdict == COLLISION and rep.object_id is not None:
                counts[rep.object_id] = counts.get(rep.object_id, 0) + 1
        if report.verdict == COLLISION and report.object_id is not None and report.object_id not in counts:
            counts[report.object_id] = 1
        by_id = {o.object_id: o for o in ctx.obstacles}
        wps = [np.asarray(ctx.start, float), np.asarray(ctx.goal, float)]
        for oid in counts:  # insertion order = order of first offence
            ob = by_id.get(oid)
            if ob is None:
                continue
            offset = self.detour_offset(ob, ctx.delta, counts[oid])
            wps = insert_detour(wps, np.asarray(ob.centroid, float), offset)
        return Trajectory(np.vstack(wps), ctx.goal, source=len(ctx.history) + 1)

    def detour_offset(self, ob: ObstacleSummary, delta: float, n: int) -> float:
        return (ob.radius + delta) * self.growth ** (n - 1)


def insert_detour(wps: list, centroid: np.ndarray, offset: float) -> list:
    """Insert a waypoint beside ``centroid`` into the nearest segment."""
    best, seg, foot = np.inf, 0, None
    for i in range(len(wps) - 1):
        a, b = wps[i], wps[i + 1]
        ab = b - a
        t = np.clip(np.dot(centroid - a, ab) / max(np.dot(ab, ab), 1e-12), 0.0, 1.0)
        p = a + t * ab
        d = np.linalg.norm((p - centroid)[:2])
        if d < best:
            best, seg, foot = d, i, p
    a, b = wps[seg], wps[seg + 1]
    direction = (b - a)[:2]
    norm = np.linalg.norm(direction)
    perp = np.array([-direction[1], direction[0]]) / norm if norm > 1e-12 else np.array([0.0, 1.0])
    side = np.dot((foot - centroid)[:2], perp)
    if side < 0:
        perp = -perp
    wp = np.array([centroid[0] + offset * perp[0], centroid[1] + offset * perp[1], foot[2]])
    return wps[:seg + 1] + [wp] + wps[seg + 1:]


# -- wire format -------------------------------------------------------------------

def _xyz(v) -> str:
    return " ".join(repr(float(c)) for c in v)


def task_request(ctx: RecoveryContext) -> str:
    lines = ["task"]
    sg = ctx.sg or SceneGraph3D()
    lines += [f"sg {t.line()}" for t in sg]
    for g in ctx.goals:
        lines.append(f"goal {g.triplet.line()} {_xyz(g.pose)} {g.slot}")
    lines += [f"evidence {t.line()}" for t in getattr(ctx.fault, "evidence", ())]
    return "\n".join(lines) + "\n"


def motion_request(ctx: RecoveryContext) -> str:
    lines = ["motion", f"start {_xyz(ctx.start)}", f"goal {_xyz(ctx.goal)}"]
    for o in ctx.obstacles:
        lines.append(f"obj {o.object_id} {_xyz(o.centroid)} {o.radius!r}")
    lines += [f"report {rep.to_text()}" for _, rep in ctx.history]
    return "\n".join(lines) + "\n"


def parse_action(line: str) -> Action:
    parts = line.split()
    try:
        if parts[0] == "pick" and len(parts) == 2:
            return Action("pick", parts[1])
        if parts[0] == "place" and len(parts) == 6:
            return Action("place", parts[1], parts[2], tuple(float(v) for v in parts[3:]))
        if parts[0] == "moveto" and len(parts) == 4:
            return Action("moveto", target=tuple(float(v) for v in parts[1:]))
    except (ValueError, IndexError):
        pass
    raise PlanParseError(f"bad action line {line!r}")


def parse_task_response(text: str) -> RecoveryPlan:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise PlanParseError("empty response")
    if lines == ["noop"]:
        return RecoveryPlan()
    if lines == ["unrecoverable"]:
        return RecoveryPlan(unrecoverable=True, reason="remote planner")
    return RecoveryPlan(tuple(parse_action(ln) for ln in lines))


def parse_motion_response(text: str, goal, source: int) -> Trajectory:
    pts = []
    for ln in text.strip().splitlines():
        parts = ln.split()
        if not parts:
            continue
        if parts[0] != "wp" or len(parts) != 4:
            raise PlanParseError(f"bad waypoint line {ln!r}")
        try:
            pts.append([float(v) for v in parts[1:]])
        except ValueError:
            raise PlanParseError(f"bad waypoint line {ln!r}") from None
    try:
        return Trajectory(np.array(pts), goal, source)
    except ValueError as exc:
        raise PlanParseError(str(exc)) from None


# -- remote client -------------------------------------------------------------------

class RemotePlanner:
    """HTTP planner client with rule-based fallback.

    ``t_inf`` fixes the per-round latency charged to the timeline; when it is
    None the measured wall time of the request is used. ``events`` records
    one entry per fallback ('unset', 'timeout', 'refused', 'schema',
    'error').
    """

    def __init__(self, endpoint: str | None = None, timeout: float = 2.0, t_inf: float | None = None,
                 fallback: RulePlanner | None = None):
        self.endpoint = endpoint if endpoint is not None else os.environ.get(ENV_URL) or None
        self.timeout = timeout
        self.t_inf = t_inf
        self.fallback = fallback or RulePlanner()
        self.events: list[str] = []
        self.last_latency = t_inf if t_inf is not None else 0.0

    def _post(self, body: str) -> str:
        req = urllib.request.Request(self.endpoint, data=body.encode("utf-8"), method="POST",
                                     headers={"Content-Type": "text/plain; charset=utf-8"})
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return resp.read().decode("utf-8")

    def _call(self, body: str, parse, fallback):
        if not self.endpoint:
            self.events.append("unset")
            log.info("no planner endpoint configured; using rule-based planner")
            return self._fall(fallback)
        t0 = time.perf_counter()
        try:
            text = self._post(body)
            out = parse(text)
        except PlanParseError as exc:
            return self._fail("schema", f"schema violation from planner: {exc}", fallback)
        except (socket.timeout, TimeoutError):
            return self._fail("timeout", "planner request timed out", fallback)
        except urllib.error.URLError as exc:
            reason = exc.reason
            if isinstance(reason, (socket.timeout, TimeoutError)):
                return self._fail("timeout", "planner request timed out", fallback)
            if isinstance(reason, ConnectionRefusedError):
                return self._fail("refused", "planner connection refused", fallback)
            return self._fail("error", f"planner request failed: {reason}", fallback)
        except (ConnectionError, OSError, UnicodeDecodeError) as exc:
            kind = "refused" if isinstance(exc, ConnectionRefusedError) else "error"
            return self._fail(kind, f"planner request failed: {exc}", fallback)
        self.last_latency = self.t_inf if self.t_inf is not None else time.perf_counter() - t0
        return out

    def _fail(self, kind: str, msg: str, fallback):
        self.events.append(kind)
        log.warning("%s; falling back to rule-based planner", msg)
        return self._fall(fallback)

    def _fall(self, fallback):
        out = fallback()
        self.last_latency = self.t_inf if self.t_inf is not None else self.fallback.last_latency
        return out

    def replan_task(self, ctx: RecoveryContext) -> RecoveryPlan:
        return self._call(task_request(ctx), parse_task_response, lambda: self.fallback.replan_task(ctx))

    def propose_trajectory(self, ctx: RecoveryContext) -> Trajectory:
        return self._call(motion_request(ctx), lambda t: parse_motion_response(t, ctx.goal, 1),
                          lambda: self.fallback.propose_trajectory(ctx))

    def refine(self, ctx: RecoveryContext, report: VerificationReport) -> Trajectory:
        src = len(ctx.history) + 1
        return self._call(motion_request(ctx), lambda t: parse_motion_response(t, ctx.goal, src),
                          lambda: self.fallback.refine(ctx, report))


def make_planner(kind: str = "rule", endpoint: str | None = None, timeout: float = 2.0,
                 t_inf: float | None = DEFAULT_T_INF):
    if kind == "rule":
        return RulePlanner(DEFAULT_T_INF if t_inf is None else t_inf)
    if kind == "remote":
        return RemotePlanner(endpoint, timeout, t_inf, RulePlanner(DEFAULT_T_INF if t_inf is None else t_inf))
    raise ValueError(f"unknown planner {kind!r}")
