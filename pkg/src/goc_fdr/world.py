"""Deterministic tabletop workspace standing in for the physics simulator.

Objects are boxes (centroid + yaw + half extents). Robots are reduced to a
gripper point with a small collision box. Motions are straight-line moves at
constant speed; grasping attaches an object rigidly to the gripper. Faults
are injected as one-shot events and reproduce the scene-graph signatures of
dropped objects, noisy placements and human obstructions without contact
dynamics.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

logger = logging.getLogger(__name__)

_EPS = 1e-9


class ConfigError(ValueError):
    """Scenario/configuration problem detected at load time."""


@dataclass
class ObjectState:
    id: int
    caption: str
    position: np.ndarray
    half_extents: np.ndarray
    yaw: float = 0.0
    carried_by: int | None = None
    container: bool = False
    is_robot: bool = False

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.half_extents = np.asarray(self.half_extents, dtype=float).reshape(3)
        if np.any(self.half_extents <= 0):
            raise ConfigError(f"object {self.caption!r}: half extents must be positive")
        if not np.all(np.isfinite(self.position)):
            raise ConfigError(f"object {self.caption!r}: non-finite position")

    def aabb_half(self) -> np.ndarray:
        """Half extents of the axis-aligned bounds of the yawed box."""
        c, s = abs(math.cos(self.yaw)), abs(math.sin(self.yaw))
        hx, hy, hz = self.half_extents
        return np.array([c * hx + s * hy, s * hx + c * hy, hz])

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        h = self.aabb_half()
        return self.position - h, self.position + h

    def copy(self) -> "ObjectState":
        return ObjectState(self.id, self.caption, self.position.copy(), self.half_extents.copy(),
                           self.yaw, self.carried_by, self.container, self.is_robot)


@dataclass
class MotionCommand:
    """One low-level motion.

    ``kind`` is ``"move_to"``, ``"pick"`` or ``"place"``. ``target`` is the
    gripper goal for move_to and the object goal centroid for place; pick
    targets the current top centre of ``object_id``. ``group`` tags motions
    that belong to the same high-level action (the manipulated object id).
    """

    kind: str
    target: np.ndarray | None = None
    object_id: int | None = None
    support_id: int | None = None
    speed: float = 0.5
    nominal_duration: float = 1.0
    group: int | None = None
    # runtime state
    goal: np.ndarray | None = None
    status: str = "pending"

    def __post_init__(self) -> None:
        if self.kind not in ("move_to", "pick", "place"):
            raise ConfigError(f"unknown motion kind {self.kind!r}")
        if not self.speed > 0:
            raise ConfigError("motion speed must be positive")
        if not self.nominal_duration > 0:
            raise ConfigError("nominal_duration must be positive")
        if self.target is not None:
            self.target = np.asarray(self.target, dtype=float).reshape(3)
        if self.kind in ("pick", "place") and self.object_id is None:
            raise ConfigError(f"{self.kind} needs an object id")
        if self.kind in ("move_to", "place") and self.target is None:
            raise ConfigError(f"{self.kind} needs a target")

    def describe(self) -> str:
        if self.kind == "move_to":
            return "move_to"
        return f"{self.kind}:{self.object_id}"


@dataclass
class RobotState:
    id: int
    caption: str
    gripper_pose: np.ndarray
    gripper_closed: bool = False
    carried_object: int | None = None
    motion_queue: deque = field(default_factory=deque)
    speed: float = 0.5
    half_extents: np.ndarray = field(default_factory=lambda: np.array([0.04, 0.04, 0.04]))
    grasp_offset: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.gripper_pose = np.asarray(self.gripper_pose, dtype=float).reshape(3)
        self.half_extents = np.asarray(self.half_extents, dtype=float).reshape(3)
        self.motion_queue = deque(self.motion_queue)

    def as_object(self) -> ObjectState:
        return ObjectState(self.id, self.caption, self.gripper_pose.copy(), self.half_extents.copy(),
                           is_robot=True)

    @property
    def busy(self) -> bool:
        return bool(self.motion_queue)


@dataclass(frozen=True)
class FaultInjection:
    """One-shot fault.

    kind ``"drop"``: release ``object_id`` at the first step >= ``trigger_step``
    at which it is carried. kind ``"placement_noise"``: add ``offset`` to the
    achieved pose of the next place of ``object_id``. kind ``"obstruct"``:
    insert ``new_object`` at ``trigger_step``.
    """

    kind: str
    object_id: int | None = None
    trigger_step: int = 0
    offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    new_object: ObjectState | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("drop", "placement_noise", "obstruct"):
            raise ConfigError(f"unknown fault kind {self.kind!r}")
        if self.kind == "obstruct" and self.new_object is None:
            raise ConfigError("obstruct fault needs an object spec")
        if self.kind in ("drop", "placement_noise") and self.object_id is None:
            raise ConfigError(f"{self.kind} fault needs an object id")


@dataclass(frozen=True)
class FiredFault:
    step: int
    kind: str
    object_id: int
    robot_id: int | None = None


@dataclass
class PointCloud:
    object_id: int
    points: np.ndarray

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError(f"point cloud {self.object_id}: non-finite coordinates")

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class Action:
    """High-level symbolic action, e.g. ``place parcel_1 on pallet``."""

    verb: str
    caption: str | None = None
    reference: str | None = None
    target: tuple[float, float, float] | None = None

    def __str__(self) -> str:
        if self.verb == "pick":
            return f"pick {self.caption}"
        if self.verb == "place":
            x, y, z = self.target
            return f"place {self.caption} {self.reference} {x!r} {y!r} {z!r}"
        if self.verb == "moveto":
            x, y, z = self.target
            return f"moveto {x!r} {y!r} {z!r}"
        return self.verb


class Workspace:
    """Mutable simulated workspace. One instance per run."""

    def __init__(self, objects: Iterable[ObjectState], robots: Iterable[RobotState], *,
                 bounds=((-2.0, -2.0, 0.0), (3.0, 2.0, 2.5)), grasp_radius: float = 0.05,
                 carry_height: float = 1.05):
        self.objects: dict[int, ObjectState] = {}
        self.robots: dict[int, RobotState] = {}
        for o in objects:
            self._add_object(o)
        for r in robots:
            if r.id in self.objects or r.id in self.robots:
                raise ConfigError(f"duplicate entity id {r.id}")
            self.robots[r.id] = r
        captions = [o.caption for o in self.objects.values()] + [r.caption for r in self.robots.values()]
        if len(set(captions)) != len(captions):
            raise ConfigError("captions must be unique within a workspace")
        self.bounds = (np.asarray(bounds[0], dtype=float), np.asarray(bounds[1], dtype=float))
        self.grasp_radius = grasp_radius
        self.carry_height = carry_height
        self.time = 0.0
        self.step_index = 0
        self.pending_faults: list[FaultInjection] = []
        self.fired: list[FiredFault] = []
        self.frozen: set[int] = set()

    def _add_object(self, o: ObjectState) -> None:
        if o.id in self.objects or o.id in getattr(self, "robots", {}):
            raise ConfigError(f"duplicate entity id {o.id}")
        self.objects[o.id] = o

    # -- lookup -----------------------------------------------------------

    def by_caption(self, caption: str) -> ObjectState | RobotState:
        for o in self.objects.values():
            if o.caption == caption:
                return o
        for r in self.robots.values():
            if r.caption == caption:
                return r
        raise KeyError(caption)

    def entities(self) -> list[ObjectState]:
        """Objects plus robot gripper boxes, ordered by id."""
        ents = list(self.objects.values()) + [r.as_object() for r in self.robots.values()]
        return sorted(ents, key=lambda e: e.id)

    def in_bounds(self, p: np.ndarray) -> bool:
        lo, hi = self.bounds
        return bool(np.all(p >= lo - _EPS) and np.all(p <= hi + _EPS))

    def snapshot(self) -> tuple:
        """Hashable state used by determinism checks."""
        objs = tuple((o.id, tuple(o.position.tolist()), o.carried_by) for o in sorted(self.objects.values(), key=lambda o: o.id))
        robs = tuple((r.id, tuple(r.gripper_pose.tolist()), r.carried_object, len(r.motion_queue))
                     for r in sorted(self.robots.values(), key=lambda r: r.id))
        return (self.step_index, objs, robs)

    # -- faults -----------------------------------------------------------

    def inject_fault(self, fault: FaultInjection) -> "Workspace":
        if fault.kind in ("drop", "placement_noise") and fault.object_id not in self.objects:
            raise ConfigError(f"fault references unknown object id {fault.object_id}")
        if fault.kind == "obstruct":
            ids = set(self.objects) | set(self.robots)
            if fault.new_object.id in ids:
                raise ConfigError(f"obstacle id {fault.new_object.id} already in use")
        self.pending_faults.append(fault)
        return self

    def _placement_offset(self, object_id: int) -> np.ndarray:
        for f in self.pending_faults:
            if f.kind == "placement_noise" and f.object_id == object_id:
                self.pending_faults.remove(f)
                self.fired.append(FiredFault(self.step_index, "placement_noise", object_id))
                return np.asarray(f.offset, dtype=float)
        return np.zeros(3)

    def _fire_triggers(self) -> None:
        remaining = []
        for f in self.pending_faults:
            if f.kind == "placement_noise" or self.step_index < f.trigger_step:
                remaining.append(f)
                continue
            if f.kind == "drop":
                obj = self.objects[f.object_id]
                if obj.carried_by is None:
                    remaining.append(f)
                    continue
                robot = self.robots[obj.carried_by]
                self._release(robot)
                self.settle(obj)
                self.fired.append(FiredFault(self.step_index, "drop", obj.id, robot.id))
            elif f.kind == "obstruct":
                new = f.new_object.copy()
                self._add_object(new)
                self.fired.append(FiredFault(self.step_index, "obstruct", new.id))
        self.pending_faults = remaining

    # -- physics stand-ins ---------------------------------------------------

    def support_height(self, obj: ObjectState) -> float:
        """Height of the highest surface directly below the object's centroid."""
        cx, cy = obj.position[0], obj.position[1]
        bottom = obj.position[2] - obj.aabb_half()[2]
        oh = obj.aabb_half()
        best = 0.0
        for other in self.objects.values():
            if other.id == obj.id or other.carried_by is not None:
                continue
            lo, hi = other.bounds()
            if not (lo[0] - _EPS <= cx <= hi[0] + _EPS and lo[1] - _EPS <= cy <= hi[1] + _EPS):
                continue
            fits = (other.container
                    and cx - oh[0] >= lo[0] - _EPS and cx + oh[0] <= hi[0] + _EPS
                    and cy - oh[1] >= lo[1] - _EPS and cy + oh[1] <= hi[1] + _EPS)
            surface = lo[2] if fits else hi[2]
            if surface <= bottom + 1e-6 and surface > best:
                best = surface
        return best

    def settle(self, obj: ObjectState) -> None:
        obj.position[2] = self.support_height(obj) + obj.aabb_half()[2]

    def _release(self, robot: RobotState) -> ObjectState | None:
        if robot.carried_object is None:
            return None
        obj = self.objects[robot.carried_object]
        obj.carried_by = None
        robot.carried_object = None
        robot.gripper_closed = False
        robot.grasp_offset = None
        return obj

    def grasp_point(self, obj: ObjectState) -> np.ndarray:
        return obj.position + np.array([0.0, 0.0, obj.aabb_half()[2]])

    # -- motion execution ----------------------------------------------------

    def _start(self, robot: RobotState, cmd: MotionCommand) -> None:
        if cmd.kind == "move_to":
            cmd.goal = cmd.target.copy()
        elif cmd.kind == "pick":
            obj = self.objects.get(cmd.object_id)
            cmd.goal = self.grasp_point(obj) if obj is not None else robot.gripper_pose.copy()
        else:
            obj = self.objects.get(cmd.object_id)
            hz = obj.aabb_half()[2] if obj is not None else 0.0
            cmd.goal = cmd.target + np.array([0.0, 0.0, hz])
        cmd.status = "active"
        if not self.in_bounds(cmd.goal):
            cmd.status = "failed"

    def _finish(self, robot: RobotState, cmd: MotionCommand) -> None:
        if cmd.kind == "move_to":
            cmd.status = "done"
        elif cmd.kind == "pick":
            obj = self.objects.get(cmd.object_id)
            if (obj is None or robot.gripper_closed or obj.carried_by is not None
                    or np.linalg.norm(robot.gripper_pose - self.grasp_point(obj)) > self.grasp_radius):
                cmd.status = "failed"
                return
            robot.gripper_closed = True
            robot.carried_object = obj.id
            robot.grasp_offset = obj.position - robot.gripper_pose
            obj.carried_by = robot.id
            cmd.status = "done"
        else:
            if robot.carried_object != cmd.object_id:
                cmd.status = "failed"
                return
            obj = self._release(robot)
            obj.position = cmd.target + self._placement_offset(obj.id)
            self.settle(obj)
            cmd.status = "done"

    def _advance(self, robot: RobotState, dt: float) -> MotionCommand | None:
        cmd = robot.motion_queue[0]
        if cmd.status == "pending":
            self._start(robot, cmd)
        if cmd.status == "failed":
            robot.motion_queue.popleft()
            return cmd
        delta = cmd.goal - robot.gripper_pose
        dist = float(np.linalg.norm(delta))
        stride = cmd.speed * dt
        arrived = dist <= stride + 1e-12
        if arrived:
            robot.gripper_pose = cmd.goal.copy()
        else:
            robot.gripper_pose = robot.gripper_pose + delta * (stride / dist)
        if robot.carried_object is not None:
            self.objects[robot.carried_object].position = robot.gripper_pose + robot.grasp_offset
        if arrived:
            self._finish(robot, cmd)
            robot.motion_queue.popleft()
            return cmd
        return None

    def step(self, dt: float, robots: Iterable[int] | None = None) -> list[tuple[int, MotionCommand]]:
        """Advance the world by ``dt`` seconds.

        Returns the motions that finished (successfully or not) during this
        step as ``(robot_id, command)`` pairs. ``robots`` restricts which
        robots move; frozen robots never move.
        """
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.step_index += 1
        self.time += dt
        active = sorted(self.robots) if robots is None else sorted(robots)
        finished = []
        for rid in active:
            if rid in self.frozen:
                continue
            robot = self.robots[rid]
            if robot.motion_queue:
                done = self._advance(robot, dt)
                if done is not None:
                    finished.append((rid, done))
        self._fire_triggers()
        return finished

    # -- action mapping ------------------------------------------------------

    def expand_action(self, robot_id: int, action: Action) -> list[MotionCommand]:
        """Map a high-level action onto executable motions."""
        robot = self.robots[robot_id]
        v = robot.speed
        zc = self.carry_height
        if action.verb == "moveto":
            return [_move(action.target, v, None, robot.gripper_pose)]
        obj = self.by_caption(action.caption)
        if isinstance(obj, RobotState):
            raise ConfigError(f"cannot manipulate robot {action.caption!r}")
        if action.verb == "pick":
            above = np.array([obj.position[0], obj.position[1], zc])
            grasp = self.grasp_point(obj)
            return [
                _move(above, v, obj.id, robot.gripper_pose),
                MotionCommand("pick", object_id=obj.id, speed=v, group=obj.id,
                              nominal_duration=max(abs(zc - grasp[2]) / v, 1e-3)),
                _move(above, v, obj.id, grasp),
            ]
        if action.verb == "place":
            target = np.asarray(action.target, dtype=float)
            support = self.by_caption(action.reference) if action.reference else None
            above = np.array([target[0], target[1], zc])
            goal = target + np.array([0.0, 0.0, obj.aabb_half()[2]])
            return [
                _move(above, v, obj.id, robot.gripper_pose),
                MotionCommand("place", target=target, object_id=obj.id,
                              support_id=None if support is None else support.id, speed=v,
                              group=obj.id, nominal_duration=max(abs(zc - goal[2]) / v, 1e-3)),
                _move(above, v, obj.id, goal),
            ]
        raise ConfigError(f"unknown action verb {action.verb!r}")

    def enqueue(self, robot_id: int, actions: Iterable[Action], front: bool = False) -> list[MotionCommand]:
        motions = []
        for a in actions:
            motions.extend(self.expand_action(robot_id, a))
        q = self.robots[robot_id].motion_queue
        if front:
            q.extendleft(reversed(motions))
        else:
            q.extend(motions)
        return motions

    def run_until_idle(self, dt: float, max_steps: int = 100_000) -> int:
        n = 0
        while any(r.motion_queue for r in self.robots.values()) and n < max_steps:
            self.step(dt)
            n += 1
        return n

    # -- sensing ------------------------------------------------------------

    def synth_point_cloud(self, density: float, noise_sigma: float, rng: np.random.Generator,
                          drop_face_fraction: float = 0.0, include_robots: bool = True) -> dict[int, PointCloud]:
        """Sample points on every box face (and robot gripper boxes).

        Face point counts are Poisson with mean density * face area; points
        are uniform on the face and perturbed by isotropic Gaussian noise.
        With ``drop_face_fraction > 0`` each face is independently removed
        with that probability (at least one face is always kept).
        """
        if not density > 0:
            raise ValueError("density must be positive")
        if noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        ents = sorted(self.objects.values(), key=lambda o: o.id)
        if include_robots:
            ents = sorted(ents + [r.as_object() for r in self.robots.values()], key=lambda o: o.id)
        return {e.id: PointCloud(e.id, box_surface_points(e, density, noise_sigma, rng, drop_face_fraction))
                for e in ents}


def _move(target, speed, group, start) -> MotionCommand:
    target = np.asarray(target, dtype=float)
    dist = float(np.linalg.norm(target - np.asarray(start, dtype=float)))
    return MotionCommand("move_to", target=target, speed=speed, group=group,
                         nominal_duration=max(dist / speed, 1e-3))


def box_surface_points(obj: ObjectState, density: float, noise_sigma: float, rng: np.random.Generator,
                       drop_face_fraction: float = 0.0) -> np.ndarray:
    hx, hy, hz = obj.half_extents
    # (normal axis, sign, the two in-plane axes)
    faces = [(0, 1), (0, -1), (1, 1), (1, -1), (2, 1), (2, -1)]
    keep = np.ones(6, dtype=bool)
    if drop_face_fraction > 0:
        keep = rng.random(6) >= drop_face_fraction
        if not keep.any():
            keep[rng.integers(6)] = True
    h = np.array([hx, hy, hz])
    chunks = []
    for (axis, sign), kept in zip(faces, keep):
        a, b = [i for i in range(3) if i != axis]
        area = 4.0 * h[a] * h[b]
        n = rng.poisson(density * area)
        if not kept or n == 0:
            continue
        local = np.empty((n, 3))
        local[:, axis] = sign * h[axis]
        local[:, a] = rng.uniform(-h[a], h[a], n)
        local[:, b] = rng.uniform(-h[b], h[b], n)
        chunks.append(local)
    if not chunks:
        local = np.zeros((1, 3))
        local[0, 2] = hz
        chunks.append(local)
    pts = np.concatenate(chunks)
    c, s = math.cos(obj.yaw), math.sin(obj.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    pts = pts @ rot.T + obj.position
    if noise_sigma > 0:
        pts = pts + rng.normal(0.0, noise_sigma, pts.shape)
    return pts


def write_point_clouds(path: str | Path, clouds: dict[int, PointCloud] | Iterable[PointCloud]) -> None:
    """Text export, one ``x y z object_id`` line per point."""
    items = clouds.values() if isinstance(clouds, dict) else clouds
    lines = []
    for cloud in items:
        for x, y, z in cloud.points.tolist():
            lines.append(f"{x!r} {y!r} {z!r} {cloud.object_id}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_point_clouds(path: str | Path) -> dict[int, PointCloud]:
    groups: dict[int, list] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 'x y z object_id'")
        try:
            xyz = [float(p) for p in parts[:3]]
            oid = int(parts[3])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
        groups.setdefault(oid, []).append(xyz)
    return {oid: PointCloud(oid, np.array(pts)) for oid, pts in sorted(groups.items())}
