"""Scenario configuration and its versioned INI file format.

A scenario file is plain INI. Fixed sections hold scalars; objects, robots,
actions and faults each get one section, named ``[object <caption>]``,
``[robot <caption>]``, ``[action <n>]`` and ``[fault <n>]``. Vectors are
whitespace-separated numbers. See ``scenarios/README.md`` for the schema.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

from ..channel import ChannelParams
from ..offload import TimingProfile
from ..planner import GoalSpec, parse_action
from ..scene_graph.geometry import RelationThresholds
from ..scene_graph.triplets import INSIDE, STANDING_ON
from ..world import Action, ConfigError, FaultInjection, ObjectState, RobotState, Workspace

FORMAT_VERSION = 1
OFFLOAD_MODES = ("auto", "force_local", "force_edge")
PAYLOAD_MODES = ("goc", "periodic")
PLANNER_KINDS = ("rule", "remote")

# On-robot extraction is slower than the edge server; local times are
# per-frame compute, edge times exclude the uplink.
DEFAULT_TIMING = TimingProfile(t_sg_local=0.045, t_dt_local=0.030, t_sg_edge=0.015, t_dt_edge=0.010)


@dataclass(frozen=True)
class ObjectSpec:
    id: int
    caption: str
    position: tuple
    half_extents: tuple
    container: bool = False
    yaw: float = 0.0

    def build(self) -> ObjectState:
        return ObjectState(self.id, self.caption, list(self.position), list(self.half_extents),
                           yaw=self.yaw, container=self.container)


@dataclass(frozen=True)
class RobotSpec:
    id: int
    caption: str
    position: tuple
    speed: float = 0.5

    def build(self) -> RobotState:
        return RobotState(self.id, self.caption, list(self.position), speed=self.speed)


@dataclass(frozen=True)
class ActionSpec:
    robot: str
    action: Action


@dataclass(frozen=True)
class FaultSpec:
    """One injected fault; ``obstacle`` is only used by ``obstruct``."""

    kind: str
    object: str | None = None
    trigger_step: int = 0
    offset: tuple = (0.0, 0.0, 0.0)
    obstacle: ObjectSpec | None = None


@dataclass(frozen=True)
class PlannerSpec:
    kind: str = "rule"
    t_inf: float = 0.005
    endpoint: str | None = None
    timeout: float = 2.0


@dataclass(frozen=True)
class Tolerances:
    d_max: float = 1.5
    eps_z: float = 0.01
    tau: float = 0.25
    d_near: float = 0.3
    delta: float = 0.03
    eps_goal: float = 0.02
    k: int = 512
    lam: float = 1e-3
    eps: float = 0.05
    min_pts: int = 4
    max_rounds: int = 5

    def relation_thresholds(self) -> RelationThresholds:
        return RelationThresholds(self.d_max, self.eps_z, self.tau, self.d_near)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    objects: tuple
    robots: tuple
    actions: tuple
    faults: tuple = ()
    task_relevant: frozenset | None = None  # None: every object caption
    channel: ChannelParams = ChannelParams()
    timing: TimingProfile = DEFAULT_TIMING
    offload_mode: str = "auto"
    planner: PlannerSpec = PlannerSpec()
    tolerances: Tolerances = Tolerances()
    dt: float = 0.05
    max_steps: int = 6000
    density: float = 1500.0
    noise_sigma: float = 0.002
    fit_curves: bool = False
    payload_mode: str = "goc"  # periodic: raw clouds uplinked every frame

    def __post_init__(self) -> None:
        if self.payload_mode not in PAYLOAD_MODES:
            raise ConfigError(f"payload mode must be one of {PAYLOAD_MODES}, got {self.payload_mode!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("scenario seed must be an integer")
        if self.offload_mode not in OFFLOAD_MODES:
            raise ConfigError(f"offload mode must be one of {OFFLOAD_MODES}, got {self.offload_mode!r}")
        if self.planner.kind not in PLANNER_KINDS:
            raise ConfigError(f"planner kind must be one of {PLANNER_KINDS}")
        if not (self.dt > 0 and self.max_steps > 0 and self.density > 0 and self.noise_sigma >= 0):
            raise ConfigError("dt, max_steps and density must be positive, noise_sigma >= 0")
        ids = [o.id for o in self.objects] + [r.id for r in self.robots]
        caps = [o.caption for o in self.objects] + [r.caption for r in self.robots]
        for f in self.faults:
            if f.obstacle is not None:
                ids.append(f.obstacle.id)
                caps.append(f.obstacle.caption)
        if len(set(ids)) != len(ids):
            raise ConfigError("entity ids must be unique")
        if len(set(caps)) != len(caps):
            raise ConfigError("captions must be unique")
        if any(" " in c or "|" in c for c in caps):
            raise ConfigError("captions may not contain spaces or '|'")
        if not self.robots:
            raise ConfigError("a scenario needs at least one robot")
        objs = {o.caption for o in self.objects}
        robs = {r.caption for r in self.robots}
        for a in self.actions:
            if a.robot not in robs:
                raise ConfigError(f"action for unknown robot {a.robot!r}")
            for cap in (a.action.caption, a.action.reference):
                if cap is not None and cap not in objs:
                    raise ConfigError(f"action {a.action} references unknown object {cap!r}")
        for f in self.faults:
            FaultInjection(f.kind, 0 if f.object else None, f.trigger_step, f.offset,
                           f.obstacle.build() if f.obstacle else None)
            if f.kind in ("drop", "placement_noise") and f.object not in objs:
                raise ConfigError(f"fault references unknown object {f.object!r}")
        if self.task_relevant is not None:
            unknown = set(self.task_relevant) - objs
            if unknown:
                raise ConfigError(f"task_relevant names unknown objects {sorted(unknown)}")

    # -- derived views ----------------------------------------------------

    def object_by_caption(self, caption: str) -> ObjectSpec:
        for o in self.objects:
            if o.caption == caption:
                return o
        raise KeyError(caption)

    def relevant(self) -> frozenset:
        if self.task_relevant is not None:
            return frozenset(self.task_relevant)
        return frozenset(o.caption for o in self.objects)

    def goals(self) -> tuple:
        """One goal per place action, in action order."""
        out = []
        for a in self.actions:
            act = a.action
            if act.verb != "place" or act.reference is None:
                continue
            rel = INSIDE if self.object_by_caption(act.reference).container else STANDING_ON
            out.append(GoalSpec(act.caption, rel, act.reference, tuple(act.target), len(out)))
        return tuple(out)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=seed)


def build_workspace(cfg: ScenarioConfig) -> Workspace:
    """Fresh world with the action list queued and faults armed."""
    ws = Workspace([o.build() for o in cfg.objects], [r.build() for r in cfg.robots])
    for f in cfg.faults:
        oid = ws.by_caption(f.object).id if f.object else None
        ws.inject_fault(FaultInjection(f.kind, oid, f.trigger_step, tuple(f.offset),
                                       f.obstacle.build() if f.obstacle else None))
    ids = {r.caption: r.id for r in ws.robots.values()}
    for a in cfg.actions:
        ws.enqueue(ids[a.robot], [a.action])
    return ws


# -- INI serialisation ---------------------------------------------------------------

def _vec(s: str, n: int = 3) -> tuple:
    parts = s.split()
    if len(parts) != n:
        raise ConfigError(f"expected {n} numbers, got {s!r}")
    out = tuple(float(p) for p in parts)
    if not all(math.isfinite(v) for v in out):
        raise ConfigError(f"non-finite vector {s!r}")
    return out


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return " ".join(repr(float(c)) for c in v)
    return str(v)


def _scalars(obj) -> dict:
    return {f.name: _fmt(getattr(obj, f.name)) for f in fields(obj)}


def _read_dataclass(cls, sec, default):
    kwargs = {}
    for f in fields(cls):
        if f.name not in sec:
            continue
        cur = getattr(default, f.name)
        raw = sec[f.name]
        if isinstance(cur, bool):
            kwargs[f.name] = sec.getboolean(f.name)
        elif isinstance(cur, int):
            kwargs[f.name] = int(raw)
        elif isinstance(cur, float):
            kwargs[f.name] = float(raw)
        else:
            kwargs[f.name] = raw or None
    unknown = set(sec) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"[{sec.name}]: unknown keys {sorted(unknown)}")
    return replace(default, **kwargs)


def _object_section(o: ObjectSpec) -> dict:
    return {"id": str(o.id), "position": _fmt(o.position), "half_extents": _fmt(o.half_extents),
            "container": _fmt(o.container), "yaw": _fmt(float(o.yaw))}


def dumps(cfg: ScenarioConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    top = {"version": str(FORMAT_VERSION), "name": cfg.name, "seed": str(cfg.seed), "dt": _fmt(cfg.dt),
           "max_steps": str(cfg.max_steps), "density": _fmt(cfg.density),
           "noise_sigma": _fmt(cfg.noise_sigma), "offload": cfg.offload_mode,
           "fit_curves": _fmt(cfg.fit_curves), "payload": cfg.payload_mode}
    if cfg.task_relevant is not None:
        top["task_relevant"] = " ".join(sorted(cfg.task_relevant))
    cp["scenario"] = top
    cp["channel"] = _scalars(cfg.channel)
    cp["timing"] = _scalars(cfg.timing)
    planner = _scalars(cfg.planner)
    planner["endpoint"] = cfg.planner.endpoint or ""
    cp["planner"] = planner
    cp["tolerances"] = _scalars(cfg.tolerances)
    for o in cfg.objects:
        cp[f"object {o.caption}"] = _object_section(o)
    for r in cfg.robots:
        cp[f"robot {r.caption}"] = {"id": str(r.id), "position": _fmt(r.position), "speed": _fmt(r.speed)}
    for i, a in enumerate(cfg.actions, 1):
        cp[f"action {i}"] = {"robot": a.robot, "do": str(a.action)}
    for i, f in enumerate(cfg.faults, 1):
        sec = {"kind": f.kind, "trigger_step": str(f.trigger_step), "offset": _fmt(f.offset)}
        if f.object:
            sec["object"] = f.object
        if f.obstacle is not None:
            sec["obstacle"] = f.obstacle.caption
            sec.update({f"obstacle_{k}": v for k, v in _object_section(f.obstacle).items()})
        cp[f"fault {i}"] = sec
    buf = io.StringIO()
    buf.write(f"# goc-fdr scenario, format version {FORMAT_VERSION}\n")
    cp.write(buf)
    return buf.getvalue()


def loads(text: str) -> ScenarioConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable scenario file: {exc}") from None
    if "scenario" not in cp:
        raise ConfigError("missing [scenario] section")
    top = cp["scenario"]
    version = top.getint("version", fallback=None)
    if version != FORMAT_VERSION:
        raise ConfigError(f"unsupported scenario format version {version!r}")
    if "seed" not in top:
        raise ConfigError("scenario seed is required")

    objects, robots, actions, faults = [], [], [], []
    for name in cp.sections():
        sec = cp[name]
        kind, _, label = name.partition(" ")
        try:
            if kind == "object":
                objects.append(ObjectSpec(sec.getint("id"), label, _vec(sec["position"]),
                                          _vec(sec["half_extents"]), sec.getboolean("container", False),
                                          sec.getfloat("yaw", 0.0)))
            elif kind == "robot":
                robots.append(RobotSpec(sec.getint("id"), label, _vec(sec["position"]),
                                        sec.getfloat("speed", 0.5)))
            elif kind == "action":
                actions.append((int(label), ActionSpec(sec["robot"], parse_action(sec["do"]))))
            elif kind == "fault":
                obstacle = None
                if "obstacle" in sec:
                    obstacle = ObjectSpec(sec.getint("obstacle_id"), sec["obstacle"],
                                          _vec(sec["obstacle_position"]), _vec(sec["obstacle_half_extents"]),
                                          sec.getboolean("obstacle_container", False),
                                          sec.getfloat("obstacle_yaw", 0.0))
                faults.append((int(label), FaultSpec(sec["kind"], sec.get("object") or None,
                                                     sec.getint("trigger_step", 0),
                                                     _vec(sec.get("offset", "0 0 0")), obstacle)))
            elif kind not in ("scenario", "channel", "timing", "planner", "tolerances"):
                raise ConfigError(f"unknown section [{name}]")
        except (KeyError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"[{name}]: {exc}") from None

    default = ScenarioConfig("x", 0, (), (RobotSpec(0, "r", (0, 0, 1)),), ())
    channel = _read_dataclass(ChannelParams, cp["channel"], default.channel) if "channel" in cp else default.channel
    timing = _read_dataclass(TimingProfile, cp["timing"], default.timing) if "timing" in cp else default.timing
    planner = _read_dataclass(PlannerSpec, cp["planner"], default.planner) if "planner" in cp else default.planner
    tol = _read_dataclass(Tolerances, cp["tolerances"], default.tolerances) if "tolerances" in cp else default.tolerances
    relevant = top.get("task_relevant")
    try:
        return ScenarioConfig(
            name=top.get("name", "scenario"), seed=top.getint("seed"), objects=tuple(objects),
            robots=tuple(robots), actions=tuple(a for _, a in sorted(actions, key=lambda x: x[0])),
            faults=tuple(f for _, f in sorted(faults, key=lambda x: x[0])),
            task_relevant=frozenset(relevant.split()) if relevant is not None else None,
            channel=channel, timing=timing, offload_mode=top.get("offload", "auto"), planner=planner,
            tolerances=tol, dt=top.getfloat("dt", 0.05), max_steps=top.getint("max_steps", 6000),
            density=top.getfloat("density", 1500.0), noise_sigma=top.getfloat("noise_sigma", 0.002),
            fit_curves=top.getboolean("fit_curves", False), payload_mode=top.get("payload", "goc"))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def load(path: str | Path) -> ScenarioConfig:
    return loads(Path(path).read_text(encoding="utf-8"))


def save(cfg: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(dumps(cfg), encoding="utf-8")


def load_profiles(path: str | Path) -> dict:
    """Named planner and payload presets for ``compare``.

    Each ``[profile <name>]`` section may set ``t_inf`` (seconds per planner
    call), ``payload`` (``goc`` for event-triggered compact payloads or
    ``periodic`` for raw clouds every frame) and ``offload``.
    """
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(Path(path).read_text(encoding="utf-8"))
    out = {}
    for name in cp.sections():
        kind, _, label = name.partition(" ")
        if kind != "profile" or not label:
            raise ConfigError(f"unknown section [{name}] in profiles file")
        sec = cp[name]
        out[label] = Profile(label, sec.getfloat("t_inf", 0.005), sec.get("payload", "goc"),
                             sec.get("offload", "auto"))
    return out


@dataclass(frozen=True)
class Profile:
    name: str
    t_inf: float = 0.005
    payload: str = "goc"  # goc | periodic
    offload: str = "auto"

    def __post_init__(self) -> None:
        if self.payload not in PAYLOAD_MODES:
            raise ConfigError(f"profile payload must be 'goc' or 'periodic', got {self.payload!r}")
        if self.offload not in OFFLOAD_MODES:
            raise ConfigError(f"profile offload must be one of {OFFLOAD_MODES}")
        if not (self.t_inf >= 0 and math.isfinite(self.t_inf)):
            raise ConfigError("profile t_inf must be a finite non-negative time")

    def apply(self, cfg: ScenarioConfig) -> ScenarioConfig:
        return replace(cfg, planner=replace(cfg.planner, t_inf=self.t_inf), offload_mode=self.offload,
                       payload_mode=self.payload)
