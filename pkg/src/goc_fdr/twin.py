"""Lightweight digital twin from edge points and trajectory verification.

Collision geometry is the 3D convex hull of each object's edge points.
Fitted contour curves are kept alongside for inspection and export.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .edge_points.contour import fit_contours

log = logging.getLogger(__name__)

PASS = "pass"
COLLISION = "collision"
GOAL_MISS = "goal_miss"
MALFORMED = "malformed"

_EPS = 1e-12


class TwinError(ValueError):
    pass


# -- geometry kernels (vectorised over triangles) --------------------------------

def _point_segment_dist(p, a, b):
    """Distance from points ``p`` (..., 3) to segments ``a``-``b`` (..., 3)."""
    ab = b - a
    denom = np.einsum("...i,...i", ab, ab)
    t = np.where(denom > _EPS, np.einsum("...i,...i", p - a, ab) / np.maximum(denom, _EPS), 0.0)
    t = np.clip(t, 0.0, 1.0)
    return np.linalg.norm(p - (a + t[..., None] * ab), axis=-1)


def _segment_segment_dist(p1, q1, p2, q2):
    """Closest distance between segments p1-q1 and p2-q2 (broadcast)."""
    d1, d2, r = q1 - p1, q2 - p2, p1 - p2
    a = np.einsum("...i,...i", d1, d1)
    e = np.einsum("...i,...i", d2, d2)
    f = np.einsum("...i,...i", d2, r)
    c = np.einsum("...i,...i", d1, r)
    b = np.einsum("...i,...i", d1, d2)
    denom = a * e - b * b
    s = np.where(denom > _EPS, np.clip((b * f - c * e) / np.where(denom > _EPS, denom, 1.0), 0, 1), 0.0)
    # second segment degenerate: closest point on the first to p2
    s = np.where(e <= _EPS, np.where(a > _EPS, np.clip(-c / np.where(a > _EPS, a, 1.0), 0, 1), 0.0), s)
    t = np.where(e > _EPS, (b * s + f) / np.where(e > _EPS, e, 1.0), 0.0)
    # clamp t and recompute s where needed
    s = np.where(t < 0, np.where(a > _EPS, np.clip(-c / np.where(a > _EPS, a, 1.0), 0, 1), 0.0), s)
    s = np.where(t > 1, np.where(a > _EPS, np.clip((b - c) / np.where(a > _EPS, a, 1.0), 0, 1), 0.0), s)
    t = np.clip(t, 0, 1)
    c1 = p1 + s[..., None] * d1
    c2 = p2 + t[..., None] * d2
    return np.linalg.norm(c1 - c2, axis=-1)


def _point_triangle_dist(p, A, B, C):
    """Distance from one point to many triangles."""
    n = np.cross(B - A, C - A)
    nn = np.linalg.norm(n, axis=-1)
    nhat = n / np.maximum(nn, _EPS)[:, None]
    h = np.einsum("ij,ij->i", p - A, nhat)
    proj = p - h[:, None] * nhat
    # barycentric inside test on the projection
    v0, v1, v2 = B - A, C - A, proj - A
    d00 = np.einsum("ij,ij->i", v0, v0)
    d01 = np.einsum("ij,ij->i", v0, v1)
    d11 = np.einsum("ij,ij->i", v1, v1)
    d20 = np.einsum("ij,ij->i", v2, v0)
    d21 = np.einsum("ij,ij->i", v2, v1)
    den = d00 * d11 - d01 * d01
    ok = (den > _EPS) & (nn > _EPS)
    den = np.where(ok, den, 1.0)
    v = (d11 * d20 - d01 * d21) / den
    w = (d00 * d21 - d01 * d20) / den
    inside = ok & (v >= 0) & (w >= 0) & (v + w <= 1)
    edge = np.minimum(np.minimum(_point_segment_dist(p, A, B), _point_segment_dist(p, B, C)),
                      _point_segment_dist(p, C, A))
    return np.where(inside, np.abs(h), edge)


def _segment_triangle_intersects(p, q, A, B, C):
    """Moller-Trumbore style test of one segment against many triangles."""
    d = q - p
    e1, e2 = B - A, C - A
    h = np.cross(d, e2)
    a = np.einsum("ij,ij->i", e1, h)
    ok = np.abs(a) > _EPS
    f = 1.0 / np.where(ok, a, 1.0)
    s = p - A
    u = f * np.einsum("ij,ij->i", s, h)
    qv = np.cross(s, e1)
    v = f * (qv @ d)
    t = f * np.einsum("ij,ij->i", e2, qv)
    return ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t >= 0) & (t <= 1)


# -- hulls -----------------------------------------------------------------------

@dataclass
class ObjectHull:
    object_id: int
    caption: str
    vertices: np.ndarray  # hull vertex coordinates
    triangles: np.ndarray  # T x 3 x 3
    equations: np.ndarray  # outward normals and offsets, n . x + d <= 0 inside
    thickened: bool = False

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    @property
    def volume(self) -> float:
        return float(ConvexHull(self.vertices).volume)

    def contains(self, p: np.ndarray, tol: float = 1e-12) -> bool:
        return bool(np.all(self.equations[:, :3] @ p + self.equations[:, 3] <= tol))

    def segment_distance(self, p, q) -> float:
        """Exact distance between a segment and the solid hull."""
        p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
        if self.contains(p) or self.contains(q):
            return 0.0
        A, B, C = self.triangles[:, 0], self.triangles[:, 1], self.triangles[:, 2]
        if np.any(_segment_triangle_intersects(p, q, A, B, C)):
            return 0.0
        d = min(_point_triangle_dist(p, A, B, C).min(), _point_triangle_dist(q, A, B, C).min())
        P, Q = np.broadcast_to(p, A.shape), np.broadcast_to(q, A.shape)
        for u, v in ((A, B), (B, C), (C, A)):
            d = min(d, _segment_segment_dist(P, Q, u, v).min())
        return float(d)

    def point_distance(self, p) -> float:
        return self.segment_distance(p, p)


def build_hull(points: np.ndarray, object_id: int = 0, caption: str = "", margin: float = 1e-3) -> ObjectHull:
    """Convex hull; degenerate inputs are thickened by ``margin`` along each axis."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(pts) == 0:
        raise TwinError(f"object {object_id} has no points")
    thickened = False
    hull = None
    if len(pts) >= 4:
        try:
            hull = ConvexHull(pts)
            if hull.volume < 1e-12:
                hull = None
        except QhullError:
            hull = None
    if hull is None:
        offs = margin * np.vstack([np.eye(3), -np.eye(3)])
        hull = ConvexHull((pts[:, None, :] + offs[None]).reshape(-1, 3))
        thickened = True
    verts = hull.points[hull.vertices]
    tris = hull.points[hull.simplices]
    return ObjectHull(object_id, caption, verts, tris, hull.equations.copy(), thickened)


@dataclass
class DigitalTwin:
    hulls: dict  # object id -> ObjectHull
    curves: dict = field(default_factory=dict)  # object id -> list of ContourCurve
    bounds: tuple | None = None

    def __len__(self) -> int:
        return len(self.hulls)

    def clearance(self, p, q, exclude: Iterable[int] = ()) -> tuple[float, int | None]:
        skip = set(exclude)
        best, who = np.inf, None
        for oid in sorted(self.hulls):
            if oid in skip:
                continue
            d = self.hulls[oid].segment_distance(p, q)
            if d < best:
                best, who = d, oid
        return best, who


def reconstruct(edge_sets, captions: dict | None = None, bounds=None, fit_curves: bool = True,
                margin: float = 1e-3, curve_params: dict | None = None) -> DigitalTwin:
    """Twin with one hull (and its contour curves) per edge-point set.

    ``curve_params`` is forwarded to ``fit_contours`` (eps, min_pts, lam).
    """
    sets = list(edge_sets)
    if not sets:
        raise TwinError("cannot build a twin without edge points")
    hulls, curves = {}, {}
    for e in sets:
        if e.object_id in hulls:
            raise TwinError(f"object {e.object_id} appears twice")
        cap = (captions or {}).get(e.object_id, str(e.object_id))
        hulls[e.object_id] = build_hull(e.points, e.object_id, cap, margin)
        if fit_curves:
            curves[e.object_id] = fit_contours(e.points, **(curve_params or {}))
    return DigitalTwin(hulls, curves, bounds)


def sampling_gap(full: np.ndarray, subset: np.ndarray) -> float:
    """Largest distance from a full-cloud point to its nearest subset point."""
    d, _ = cKDTree(np.asarray(subset, dtype=float)).query(np.asarray(full, dtype=float))
    return float(d.max())


def hull_hausdorff(a: ObjectHull, b: ObjectHull) -> float:
    """Hausdorff distance between two solid hulls (attained at vertices)."""
    ab = max(b.point_distance(v) for v in a.vertices)
    ba = max(a.point_distance(v) for v in b.vertices)
    return max(ab, ba)


# -- trajectories and verification -----------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    waypoints: np.ndarray
    goal: np.ndarray
    source: int = 0

    def __post_init__(self) -> None:
        wp = np.asarray(self.waypoints, dtype=float)
        goal = np.asarray(self.goal, dtype=float)
        if wp.ndim != 2 or wp.shape[1] != 3 or len(wp) < 2:
            raise ValueError("a trajectory needs at least two 3D waypoints")
        if not (np.all(np.isfinite(wp)) and np.all(np.isfinite(goal)) and goal.shape == (3,)):
            raise ValueError("trajectory coordinates must be finite")
        object.__setattr__(self, "waypoints", wp)
        object.__setattr__(self, "goal", goal)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1).sum())


def _fmt(v) -> str:
    return "" if v is None else repr(v)


@dataclass(frozen=True)
class VerificationReport:
    verdict: str
    object_id: int | None = None
    segment: int | None = None
    clearance: float | None = None
    goal_dist: float | None = None

    def __post_init__(self) -> None:
        if self.verdict not in (PASS, COLLISION, GOAL_MISS, MALFORMED):
            raise ValueError(f"unknown verdict {self.verdict!r}")
        if self.verdict == PASS and any(v is not None for v in
                                        (self.object_id, self.segment, self.clearance, self.goal_dist)):
            raise ValueError("a passing report carries no violation fields")

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def to_text(self) -> str:
        return ";".join([self.verdict, _fmt(self.object_id), _fmt(self.segment),
                         _fmt(self.clearance), _fmt(self.goal_dist)])

    @classmethod
    def from_text(cls, text: str) -> "VerificationReport":
        parts = text.strip().split(";")
        if len(parts) != 5:
            raise ValueError(f"malformed report {text!r}")
        v, o, s, c, g = parts
        return cls(v, int(o) if o else None, int(s) if s else None,
                   float(c) if c else None, float(g) if g else None)


def verify(twin: DigitalTwin, traj: Trajectory, delta: float = 0.03, eps_goal: float = 0.02,
           exclude: Iterable[int] = ()) -> VerificationReport:
    """First violation along the path: a segment within ``delta`` of a hull, or a missed goal."""
    if not (delta > 0 and eps_goal > 0):
        raise ValueError("delta and eps_goal must be positive")
    wp = traj.waypoints
    for i in range(len(wp) - 1):
        d, oid = twin.clearance(wp[i], wp[i + 1], exclude)
        if d < delta:
            return VerificationReport(COLLISION, oid, i, float(d))
    miss = float(np.linalg.norm(wp[-1] - traj.goal))
    if miss > eps_goal:
        return VerificationReport(GOAL_MISS, goal_dist=miss)
    return VerificationReport(PASS)


@dataclass
class RecoveryResult:
    trajectory: Trajectory | None
    rounds: int
    history: list  # (trajectory or None, VerificationReport) per round

    @property
    def success(self) -> bool:
        return self.trajectory is not None


def recover_motion(planner, twin: DigitalTwin, ctx, max_rounds: int = 5, delta: float = 0.03,
                   eps_goal: float = 0.02, exclude: Iterable[int] = ()) -> RecoveryResult:
    """Propose, verify and refine until a trajectory passes or rounds run out.

    Each round appends ``(trajectory, report)`` to ``ctx.history``. A planner
    error or an invalid trajectory counts as a failed round with a
    'malformed' report.
    """
    if max_rounds < 1:
        raise ValueError("max_rounds must be at least 1")
    exclude = tuple(exclude)
    history = ctx.history
    start = len(history)
    for rnd in range(1, max_rounds + 1):
        try:
            if rnd == 1:
                traj = planner.propose_trajectory(ctx)
            else:
                traj = planner.refine(ctx, history[-1][1])
            if not isinstance(traj, Trajectory):
                raise ValueError(f"planner returned {type(traj).__name__}")
        except ValueError as exc:
            log.warning("round %d: malformed trajectory: %s", rnd, exc)
            history.append((None, VerificationReport(MALFORMED)))
            continue
        report = verify(twin, traj, delta, eps_goal, exclude)
        history.append((traj, report))
        if report.passed:
            return RecoveryResult(traj, rnd, history[start:])
    return RecoveryResult(None, max_rounds, history[start:])
