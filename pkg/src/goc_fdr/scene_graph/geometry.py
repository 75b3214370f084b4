"""Candidate edges and the deterministic geometric relation classifier."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple

from ..world import ObjectState, RobotState
from .triplets import GRASPED_BY, INSIDE, NEXT_TO, NONE, STANDING_ON, SceneGraph3D, Triplet

_TOL = 1e-6


@dataclass(frozen=True)
class RelationThresholds:
    d_max: float = 1.5
    eps_z: float = 0.01
    tau: float = 0.25
    d_near: float = 0.3

    def __post_init__(self) -> None:
        if not (self.d_max > 0 and self.eps_z >= 0 and 0 < self.tau <= 1 and self.d_near > 0):
            raise ValueError(f"invalid relation thresholds {self}")


class _Geom(NamedTuple):
    id: int
    caption: str
    cx: float
    cy: float
    cz: float
    lo: tuple
    hi: tuple
    is_robot: bool
    carrying: int | None


def _geom(o: ObjectState, robots: Mapping[int, RobotState]) -> _Geom:
    lo, hi = o.bounds()
    carrying = robots[o.id].carried_object if (o.is_robot and o.id in robots) else None
    x, y, z = o.position.tolist()
    return _Geom(o.id, o.caption, x, y, z, tuple(lo.tolist()), tuple(hi.tolist()), o.is_robot, carrying)


def candidate_edges(objects: Iterable[ObjectState], d_max: float) -> list[tuple[int, int]]:
    """All unordered id pairs whose centroid distance is at most ``d_max``.

    Pairs come back as ``(smaller id, larger id)`` sorted.
    """
    if not d_max > 0:
        raise ValueError("d_max must be positive")
    objs = sorted(objects, key=lambda o: o.id)
    pairs = []
    for i, a in enumerate(objs):
        for b in objs[i + 1:]:
            if math.dist(a.position.tolist(), b.position.tolist()) <= d_max:
                pairs.append((a.id, b.id))
    return pairs


def _contains(outer: _Geom, inner: _Geom) -> bool:
    return all(outer.lo[k] - _TOL <= inner.lo[k] and inner.hi[k] <= outer.hi[k] + _TOL for k in range(3))


def _stands_on(top: _Geom, base: _Geom, th: RelationThresholds) -> bool:
    if abs(top.lo[2] - base.hi[2]) > th.eps_z:
        return False
    ox = min(top.hi[0], base.hi[0]) - max(top.lo[0], base.lo[0])
    oy = min(top.hi[1], base.hi[1]) - max(top.lo[1], base.lo[1])
    if ox <= 0 or oy <= 0:
        return False
    area = (top.hi[0] - top.lo[0]) * (top.hi[1] - top.lo[1])
    return ox * oy / area >= th.tau


def _classify(a: _Geom, b: _Geom, th: RelationThresholds) -> tuple[str, str, str] | None:
    """Oriented triplet for a pair, or None for the 'none' relation."""
    if a.is_robot and a.carrying == b.id:
        return (b.caption, GRASPED_BY, a.caption)
    if b.is_robot and b.carrying == a.id:
        return (a.caption, GRASPED_BY, b.caption)
    if not (a.is_robot or b.is_robot):
        if a.caption > b.caption:  # coincident boxes contain each other; fix roles by caption
            a, b = b, a
        if _contains(b, a):
            return (a.caption, INSIDE, b.caption)
        if _contains(a, b):
            return (b.caption, INSIDE, a.caption)
        if _stands_on(a, b, th):
            return (a.caption, STANDING_ON, b.caption)
        if _stands_on(b, a, th):
            return (b.caption, STANDING_ON, a.caption)
    if math.hypot(a.cx - b.cx, a.cy - b.cy) < th.d_near:
        return (a.caption, NEXT_TO, b.caption)
    return None


def relation_triplet(a: ObjectState, b: ObjectState, robots: Mapping[int, RobotState],
                     thresholds: RelationThresholds = RelationThresholds()) -> Triplet | None:
    """Canonical triplet for the pair, or None when the relation is 'none'."""
    if a.id == b.id:
        raise ValueError("relation of an object with itself")
    out = _classify(_geom(a, robots), _geom(b, robots), thresholds)
    return None if out is None else Triplet.make(*out)


def geometric_relation(a: ObjectState, b: ObjectState, robots: Mapping[int, RobotState],
                       thresholds: RelationThresholds = RelationThresholds()) -> str:
    """Relation label between two objects.

    Checked in order: grasped by (a robot carrying the other), inside (box
    containment), standing on (bottom face within ``eps_z`` of the other's
    top and footprint overlap ratio >= ``tau``), next to (horizontal centroid
    distance < ``d_near``), otherwise none. Robots only take part in
    'grasped by' and 'next to'.
    """
    t = relation_triplet(a, b, robots, thresholds)
    return NONE if t is None else t.relation


def build_scene_graph(entities: Iterable[ObjectState], robots: Mapping[int, RobotState],
                      thresholds: RelationThresholds = RelationThresholds(),
                      frame_index: int = 0) -> SceneGraph3D:
    """Scene graph over the pruned candidate edges; 'none' edges are omitted."""
    geoms = sorted((_geom(e, robots) for e in entities), key=lambda g: g.id)
    d2 = thresholds.d_max ** 2
    triplets = []
    for i, a in enumerate(geoms):
        for b in geoms[i + 1:]:
            if (a.cx - b.cx) ** 2 + (a.cy - b.cy) ** 2 + (a.cz - b.cz) ** 2 > d2:
                continue
            out = _classify(a, b, thresholds)
            if out is not None:
                triplets.append(Triplet.make(*out))
    return SceneGraph3D(frame_index, frozenset(triplets))


def workspace_scene_graph(ws, thresholds: RelationThresholds = RelationThresholds(),
                          frame_index: int = 0) -> SceneGraph3D:
    return build_scene_graph(ws.entities(), ws.robots, thresholds, frame_index)
