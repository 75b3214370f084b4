"""Built-in tasks and the seeded synthetic fault suite.

Three tasks (workpiece sorting, grocery packing, parcel palletising) share a
table at the origin. Faults are placed from a fault-free dry run of the same
seeded layout so that every injected fault has a scene-graph signature:

* ``drop``: the carried object is released over bare floor during transport.
* ``placement_noise``: a place lands outside its goal support (in the other
  bin for sorting, on the floor beside the bin or pallet otherwise).
* ``obstruct``: a person appears on a transport path as that move starts.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..world import Action, ConfigError
from .config import ActionSpec, FaultSpec, ObjectSpec, RobotSpec, ScenarioConfig, build_workspace

TASKS = ("sorting", "grocery", "palletising")
FAULT_KINDS = ("drop", "placement_noise", "obstruct")
SUITE_SEEDS = tuple(range(25))
HUMAN_ID = 20
HUMAN_HALF = (0.1, 0.1, 0.8)

TABLE = ObjectSpec(1, "table", (0.0, 0.0, 0.375), (0.4, 0.4, 0.375))


def _jitter(rng: np.random.Generator, xy, amount: float = 0.03) -> tuple:
    dx, dy = rng.uniform(-amount, amount, size=2)
    return (float(xy[0] + dx), float(xy[1] + dy))


def _item(oid, cap, xy, half, top=0.75) -> ObjectSpec:
    return ObjectSpec(oid, cap, (xy[0], xy[1], top + half[2]), half)


def _pick_place(robot, obj: ObjectSpec, ref: str, target) -> list:
    return [ActionSpec(robot, Action("pick", obj.caption)),
            ActionSpec(robot, Action("place", obj.caption, ref, tuple(float(v) for v in target)))]


def sorting(seed: int = 0) -> ScenarioConfig:
    """One robot sorts a red and a blue workpiece into matching bins."""
    rng = np.random.default_rng([seed, 1])
    half = (0.04, 0.04, 0.04)
    red = _item(2, "cube_red", _jitter(rng, (-0.15, 0.15)), half)
    blue = _item(3, "cube_blue", _jitter(rng, (-0.15, -0.15)), half)
    bin_red = ObjectSpec(4, "bin_red", (1.2, 0.35, 0.1), (0.15, 0.15, 0.1), container=True)
    bin_blue = ObjectSpec(5, "bin_blue", (1.2, -0.35, 0.1), (0.15, 0.15, 0.1), container=True)
    actions = (_pick_place("robot", red, "bin_red", (1.2, 0.35, 0.04))
               + _pick_place("robot", blue, "bin_blue", (1.2, -0.35, 0.04)))
    return ScenarioConfig("sorting", seed, (TABLE, red, blue, bin_red, bin_blue),
                          (RobotSpec(10, "robot", (0.3, 0.0, 1.05)),), tuple(actions))


def grocery(seed: int = 0) -> ScenarioConfig:
    """Two robots pack four grocery items into one bin."""
    rng = np.random.default_rng([seed, 2])
    items = [
        _item(2, "apple", _jitter(rng, (-0.2, 0.25)), (0.04, 0.04, 0.04)),
        _item(3, "cereal", _jitter(rng, (0.12, 0.25)), (0.06, 0.03, 0.1)),
        _item(4, "can", _jitter(rng, (-0.2, -0.25)), (0.035, 0.035, 0.06)),
        _item(5, "milk", _jitter(rng, (0.12, -0.25)), (0.045, 0.045, 0.1)),
    ]
    bin_ = ObjectSpec(6, "bin", (1.2, 0.0, 0.15), (0.3, 0.3, 0.15), container=True)
    slots = [(1.05, 0.15), (1.35, 0.15), (1.05, -0.15), (1.35, -0.15)]
    actions = []
    for i, (it, slot) in enumerate(zip(items, slots)):
        robot = "robot_a" if i < 2 else "robot_b"
        actions += _pick_place(robot, it, "bin", (slot[0], slot[1], it.half_extents[2]))
    robots = (RobotSpec(10, "robot_a", (0.3, 0.3, 1.05)), RobotSpec(11, "robot_b", (0.3, -0.3, 1.05)))
    return ScenarioConfig("grocery", seed, (TABLE, *items, bin_), robots, tuple(actions))


def palletising(seed: int = 0) -> ScenarioConfig:
    """Two robots stack four parcels onto a pallet."""
    rng = np.random.default_rng([seed, 3])
    half = (0.08, 0.08, 0.06)
    spots = [(-0.2, 0.2), (0.15, 0.2), (-0.2, -0.2), (0.15, -0.2)]
    parcels = [_item(2 + i, f"parcel_{i + 1}", _jitter(rng, xy), half) for i, xy in enumerate(spots)]
    pallet = ObjectSpec(6, "pallet", (1.3, 0.0, 0.06), (0.4, 0.4, 0.06))
    slots = [(1.1, 0.2), (1.5, 0.2), (1.1, -0.2), (1.5, -0.2)]
    actions = []
    for i, (p, slot) in enumerate(zip(parcels, slots)):
        robot = "robot_a" if i < 2 else "robot_b"
        actions += _pick_place(robot, p, "pallet", (slot[0], slot[1], 0.12 + half[2]))
    robots = (RobotSpec(10, "robot_a", (0.3, 0.3, 1.05)), RobotSpec(11, "robot_b", (0.3, -0.3, 1.05)))
    return ScenarioConfig("palletising", seed, (TABLE, *parcels, pallet), robots, tuple(actions))


BUILDERS = {"sorting": sorting, "grocery": grocery, "palletising": palletising}


def task_config(task: str, seed: int = 0) -> ScenarioConfig:
    try:
        return BUILDERS[task](seed)
    except KeyError:
        raise ConfigError(f"unknown task {task!r}; choose from {TASKS}") from None


# -- dry runs and fault placement ------------------------------------------------------

@dataclass(frozen=True)
class TransportWindow:
    """Steps during which ``robot`` carries ``obj`` at carry height."""

    robot: str
    obj: str
    first_step: int
    start_xy: tuple
    goal_xy: tuple
    floor_steps: tuple  # steps whose end state has the object over bare floor


def _footprints_overlap(lo_a, hi_a, lo_b, hi_b, margin: float = 0.0) -> bool:
    return (lo_a[0] < hi_b[0] + margin and lo_b[0] < hi_a[0] + margin
            and lo_a[1] < hi_b[1] + margin and lo_b[1] < hi_a[1] + margin)


def transport_windows(cfg: ScenarioConfig, max_steps: int | None = None) -> list[TransportWindow]:
    """Fault-free dry run recording every carrying transport move."""
    ws = build_workspace(replace(cfg, faults=()))
    open_: dict[int, dict] = {}
    windows = []
    limit = max_steps or cfg.max_steps
    while any(r.motion_queue for r in ws.robots.values()) and ws.step_index < limit:
        heads = {rid: (r.motion_queue[0], r.gripper_pose[:2].copy())
                 for rid, r in ws.robots.items() if r.motion_queue}
        ws.step(cfg.dt)
        for rid, r in sorted(ws.robots.items()):
            cmd, xy = heads.get(rid, (None, None))
            transporting = (cmd is not None and cmd.kind == "move_to" and r.carried_object is not None
                            and abs(cmd.target[2] - ws.carry_height) < 1e-9
                            and float(np.linalg.norm(cmd.target[:2] - xy)) > 1e-6)
            w = open_.get(rid)
            if w is not None and (not transporting or w["cmd"] is not cmd):
                windows.append(_close(open_.pop(rid)))
                w = None
            if not transporting:
                continue
            obj = ws.objects[r.carried_object]
            if w is None:
                w = open_[rid] = {"cmd": cmd, "robot": r.caption, "obj": obj.caption,
                                  "first": ws.step_index, "start": tuple(xy.tolist()),
                                  "goal": tuple(cmd.target[:2].tolist()), "floor": []}
            lo, hi = obj.bounds()
            if all(not _footprints_overlap(lo, hi, *o.bounds(), margin=0.02)
                   for o in ws.objects.values() if o.id != obj.id and o.carried_by is None):
                w["floor"].append(ws.step_index)
    windows += [_close(w) for w in open_.values()]
    return sorted(windows, key=lambda w: (w.first_step, w.robot))


def _close(w: dict) -> TransportWindow:
    return TransportWindow(w["robot"], w["obj"], w["first"], w["start"], w["goal"], tuple(w["floor"]))


def _static_footprints(cfg: ScenarioConfig, exclude: str | None = None) -> list:
    """Footprints of every object at its start pose and at its place target."""
    out = []
    for o in cfg.objects:
        if o.caption == exclude:
            continue
        c, h = np.array(o.position), np.array(o.half_extents)
        out.append((c - h, c + h))
    for a in cfg.actions:
        act = a.action
        if act.verb == "place" and act.caption != exclude:
            h = np.array(cfg.object_by_caption(act.caption).half_extents)
            c = np.array(act.target)
            out.append((c - h, c + h))
    return out


def make_fault(cfg: ScenarioConfig, kind: str, seed: int) -> FaultSpec:
    rng = np.random.default_rng([seed, 101, FAULT_KINDS.index(kind)])
    if kind == "drop":
        wins = [w for w in transport_windows(cfg) if len(w.floor_steps) >= 3]
        if not wins:
            raise ConfigError(f"{cfg.name}: no transport passes over bare floor")
        w = wins[int(rng.integers(len(wins)))]
        inner = w.floor_steps[1:-1]
        return FaultSpec("drop", w.obj, int(inner[int(rng.integers(len(inner)))]))
    if kind == "placement_noise":
        places = [a.action for a in cfg.actions if a.action.verb == "place"]
        act = places[int(rng.integers(len(places)))]
        return FaultSpec("placement_noise", act.caption, 0, _noise_offset(cfg, act, rng))
    if kind == "obstruct":
        wins = transport_windows(cfg)
        order = rng.permutation(len(wins))
        for i in order:
            w = wins[int(i)]
            start, goal = np.array(w.start_xy), np.array(w.goal_xy)
            for _ in range(20):
                f = rng.uniform(0.5, 0.6)
                xy = start + f * (goal - start) + rng.uniform(-0.02, 0.02, size=2)
                lo = np.array([xy[0] - HUMAN_HALF[0], xy[1] - HUMAN_HALF[1], 0.0])
                hi = np.array([xy[0] + HUMAN_HALF[0], xy[1] + HUMAN_HALF[1], 2 * HUMAN_HALF[2]])
                if all(not _footprints_overlap(lo, hi, a, b, margin=0.02) for a, b in _static_footprints(cfg)):
                    human = ObjectSpec(HUMAN_ID, "human", (float(xy[0]), float(xy[1]), HUMAN_HALF[2]), HUMAN_HALF)
                    return FaultSpec("obstruct", None, w.first_step, (0.0, 0.0, 0.0), human)
        raise ConfigError(f"{cfg.name}: no free spot for an obstacle on any transport path")
    raise ConfigError(f"unknown fault kind {kind!r}")


def _noise_offset(cfg: ScenarioConfig, act: Action, rng: np.random.Generator) -> tuple:
    support = cfg.object_by_caption(act.reference)
    target = np.array(act.target)
    obj = cfg.object_by_caption(act.caption)
    if cfg.name == "sorting":
        # the workpiece ends up in the bin of the other colour, off its centre
        other = next(o for o in cfg.objects if o.container and o.caption != support.caption)
        dest = np.array([other.position[0] + 0.09, other.position[1], target[2]])
        return tuple(float(v) for v in dest - target)
    c = np.array(support.position)
    side = 1.0 if target[1] >= c[1] else -1.0
    reach = support.half_extents[1] - abs(target[1] - c[1]) + obj.half_extents[1]
    mag = reach + 0.08 + rng.uniform(0.0, 0.1)
    return (0.0, float(side * mag), 0.0)


def with_fault(cfg: ScenarioConfig, kind: str) -> ScenarioConfig:
    return replace(cfg, faults=(make_fault(cfg, kind, cfg.seed),))


@dataclass(frozen=True)
class SuiteCase:
    task: str
    kind: str | None  # None for fault-free runs
    seed: int
    config: ScenarioConfig

    @property
    def label(self) -> str:
        return f"{self.task}/{self.kind or 'none'}/{self.seed}"


def fault_suite(seeds=SUITE_SEEDS, tasks=TASKS, kinds=FAULT_KINDS) -> list[SuiteCase]:
    """Tasks x fault kinds x seeds, one injected fault per run."""
    out = []
    for task in tasks:
        for seed in seeds:
            base = task_config(task, seed)
            for kind in kinds:
                out.append(SuiteCase(task, kind, seed, with_fault(base, kind)))
    return out


def fault_free_suite(seeds=SUITE_SEEDS, tasks=TASKS) -> list[SuiteCase]:
    return [SuiteCase(t, None, s, task_config(t, s)) for t in tasks for s in seeds]
