"""Fault detection by diffing consecutive scene graphs against expected transitions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .scene_graph.triplets import GRASPED_BY, INSIDE, NEXT_TO, STANDING_ON, SceneGraph3D, Triplet

TASK_LEVEL = "task_level"
MOTION_LEVEL = "motion_level"

NO_PAYLOAD = "none"
SG_PAYLOAD = "sg_payload"
EDGE_POINT_PAYLOAD = "edge_point_payload"


@dataclass(frozen=True)
class ExpectedTransition:
    """Symbolic effect of one motion.

    ``removed`` and ``added`` are checked when the motion completes.
    ``held`` must hold on every frame while the motion runs (for example
    the grasp while transporting an object).
    """

    motion_id: int = 0
    removed: frozenset = field(default_factory=frozenset)
    added: frozenset = field(default_factory=frozenset)
    held: frozenset = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        for name in ("removed", "added", "held"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))
        if self.removed & self.added:
            raise ValueError("a triplet cannot be both removed and added")


@dataclass(frozen=True)
class FaultEvent:
    kind: str
    frame: int
    evidence: tuple
    implicated: tuple = ()

    def __post_init__(self) -> None:
        if self.kind not in (TASK_LEVEL, MOTION_LEVEL):
            raise ValueError(f"unknown fault kind {self.kind!r}")
        if not self.evidence:
            raise ValueError("a fault event needs evidence")

    def csv_line(self) -> str:
        return f"{self.frame},{self.kind},{';'.join(t.line() for t in self.evidence)}"


def _default_is_robot(caption: str) -> bool:
    return caption.startswith("robot")


def detect(prev: SceneGraph3D, curr: SceneGraph3D, expected: ExpectedTransition | None,
           task_relevant: Iterable[str], *, completed: bool = False,
           robots: Iterable[str] | None = None) -> FaultEvent | None:
    """Check one frame.

    Motion-level: ``curr`` holds a 'next to' between a robot and a caption
    outside ``task_relevant``. Robots never count as task-irrelevant.
    Task-level: a ``held`` triplet is missing, or, when ``completed`` is
    set, an ``added`` triplet is missing or a ``removed`` one is still
    present. A motion-level fault takes precedence when both occur in the
    same frame. ``prev`` is part of the contract for frame pairing; the
    checks themselves only need ``curr``.
    """
    del prev  # consecutive-frame contract; detection needs only the current graph
    relevant = set(task_relevant)
    robot_set = set(robots) if robots is not None else None
    is_robot = robot_set.__contains__ if robot_set is not None else _default_is_robot

    proximity, obstacles = [], set()
    for t in sorted(t for t in curr.triplets if t.relation == NEXT_TO):
        a, b = t.caption_m, t.caption_n
        for r, o in ((a, b), (b, a)):
            if is_robot(r) and not is_robot(o) and o not in relevant:
                proximity.append(t)
                obstacles.add(o)
                break
    if proximity:
        return FaultEvent(MOTION_LEVEL, curr.frame_index, tuple(proximity), tuple(sorted(obstacles)))

    if expected is None:
        return None
    missing = sorted(t for t in expected.held if t not in curr)
    if completed:
        missing += sorted(t for t in expected.added if t not in curr and t not in expected.held)
        missing += sorted(t for t in expected.removed if t in curr)
    if missing:
        implicated = sorted({c for t in missing for c in (t.caption_m, t.caption_n) if not is_robot(c)})
        return FaultEvent(TASK_LEVEL, curr.frame_index, tuple(missing), tuple(implicated))
    return None


def transmission_trigger(event: FaultEvent | None) -> str:
    """Payload to send for a detection result; both fault kinds also stop the robot."""
    if event is None:
        return NO_PAYLOAD
    return SG_PAYLOAD if event.kind == TASK_LEVEL else EDGE_POINT_PAYLOAD


def support_triplets(sg: SceneGraph3D, caption: str) -> frozenset:
    """Contact relations in which ``caption`` is the supported party."""
    return frozenset(t for t in sg.triplets
                     if t.caption_m == caption and t.relation in (STANDING_ON, INSIDE))


def expected_pick(obj: str, robot: str, motion_id: int = 0) -> ExpectedTransition:
    # the object still rests on its support when the gripper closes; the
    # support relation is expected to vanish during the following lift
    return ExpectedTransition(motion_id, added={Triplet(obj, GRASPED_BY, robot)})


def expected_place(obj: str, robot: str, support: str | None, container: bool,
                   motion_id: int = 0) -> ExpectedTransition:
    grasp = Triplet(obj, GRASPED_BY, robot)
    added = set()
    if support is not None:
        added.add(Triplet(obj, INSIDE if container else STANDING_ON, support))
    return ExpectedTransition(motion_id, {grasp}, added)


def expected_move(carrying: str | None, robot: str, sg: SceneGraph3D | None = None,
                  motion_id: int = 0) -> ExpectedTransition:
    """Moving while carrying keeps the grasp and leaves any support behind."""
    if carrying is None:
        return ExpectedTransition(motion_id)
    grasp = Triplet(carrying, GRASPED_BY, robot)
    removed = support_triplets(sg, carrying) if sg is not None else frozenset()
    return ExpectedTransition(motion_id, removed, {grasp}, {grasp})


def expected_for_motion(ws, robot_id: int, cmd, sg: SceneGraph3D, motion_id: int = 0) -> ExpectedTransition:
    """Instantiate the Pick/Place/MoveTo template for a motion about to start."""
    robot = ws.robots[robot_id]
    if cmd.kind == "pick":
        return expected_pick(ws.objects[cmd.object_id].caption, robot.caption, motion_id)
    if cmd.kind == "place":
        obj = ws.objects[cmd.object_id].caption
        support = ws.objects.get(cmd.support_id) if cmd.support_id is not None else None
        return expected_place(obj, robot.caption, None if support is None else support.caption,
                              bool(support is not None and support.container), motion_id)
    carrying = robot.carried_object
    return expected_move(None if carrying is None else ws.objects[carrying].caption, robot.caption, sg, motion_id)
