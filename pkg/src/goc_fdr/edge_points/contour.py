"""Plane projection, fragment clustering and penalised B-spline contour fits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline
from scipy.spatial import cKDTree
from sklearn.cluster import DBSCAN

PLANES = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}
MAX_CONDITION = 1e12


class DegenerateFragmentError(ValueError):
    """The penalised normal equations are (numerically) rank deficient."""


@dataclass(frozen=True)
class ContourCurve:
    plane: str
    control_points: np.ndarray  # n_ctrl x 2
    degree: int
    knots: np.ndarray
    fragment_id: int = 0

    def __post_init__(self) -> None:
        if self.plane not in PLANES:
            raise ValueError(f"unknown plane {self.plane!r}")
        if np.any(np.diff(self.knots) < 0):
            raise ValueError("knot vector must be non-decreasing")
        if len(self.control_points) < self.degree + 1:
            raise ValueError("need at least degree + 1 control points")
        if len(self.knots) != len(self.control_points) + self.degree + 1:
            raise ValueError("knot count must equal control points + degree + 1")

    def evaluate(self, t) -> np.ndarray:
        return BSpline(self.knots, self.control_points, self.degree, extrapolate=False)(np.clip(t, 0.0, 1.0))

    def to_text(self) -> str:
        ctrl = " ".join(f"{x!r},{y!r}" for x, y in self.control_points)
        knots = " ".join(repr(float(k)) for k in self.knots)
        return f"{self.plane}, {ctrl}, {knots}"


def project(points: np.ndarray, plane: str) -> np.ndarray:
    return np.asarray(points, dtype=float)[:, list(PLANES[plane])]


def nn_chain(points: np.ndarray) -> np.ndarray:
    """Order points along a greedy nearest-neighbour chain.

    The chain starts at the point farthest from the first point, which is an
    extreme end for open curves.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if n <= 2:
        return pts.copy()
    start = int(np.argmax(np.linalg.norm(pts - pts[0], axis=1)))
    tree = cKDTree(pts)
    visited = np.zeros(n, dtype=bool)
    order = [start]
    visited[start] = True
    cur = start
    for _ in range(n - 1):
        k = 8
        while True:
            kk = min(k, n)
            _, idx = tree.query(pts[cur], k=kk)
            idx = np.atleast_1d(idx)
            free = [i for i in idx if not visited[i]]
            if free:
                nxt = free[0]
                break
            if kk == n:
                nxt = None
                break
            k *= 4
        cur = int(nxt)
        visited[cur] = True
        order.append(cur)
    return pts[order]


def cluster_fragments(points2d: np.ndarray, eps: float = 0.05, min_pts: int = 4) -> list[np.ndarray]:
    """Density clusters of 2D points, each ordered along a chain; noise dropped."""
    if not eps > 0 or min_pts < 1:
        raise ValueError("eps must be positive and min_pts at least 1")
    pts = np.asarray(points2d, dtype=float)
    if len(pts) == 0:
        return []
    labels = DBSCAN(eps=eps, min_samples=min_pts).fit_predict(pts)
    return [nn_chain(pts[labels == lab]) for lab in sorted(set(labels) - {-1})]


def project_and_cluster(edges, eps: float = 0.05, min_pts: int = 4) -> dict[str, list[np.ndarray]]:
    pts = np.asarray(getattr(edges, "points", edges), dtype=float)
    return {plane: cluster_fragments(project(pts, plane), eps, min_pts) for plane in PLANES}


def chord_parameter(points: np.ndarray) -> np.ndarray:
    """Normalised cumulative chord length (pseudo arc length) in [0, 1]."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] <= 0:
        raise DegenerateFragmentError("fragment has zero length")
    return s / s[-1]


def clamped_knots(n_ctrl: int, degree: int = 3) -> np.ndarray:
    """Clamped knots on [0, 1] built by successive midpoint insertion.

    Each extra control point inserts one knot at the midpoint of the widest
    span (leftmost on ties), so the spline space for ``n_ctrl + 1`` contains
    the one for ``n_ctrl``. Gives uniform knots whenever the interior count
    is one less than a power of two.
    """
    if n_ctrl < degree + 1:
        raise ValueError("n_ctrl must be at least degree + 1")
    interior = [0.0, 1.0]
    for _ in range(n_ctrl - degree - 1):
        widths = np.diff(interior)
        j = int(np.argmax(widths))
        interior.insert(j + 1, 0.5 * (interior[j] + interior[j + 1]))
    return np.concatenate([np.zeros(degree), interior, np.ones(degree)])


def second_difference(n: int) -> np.ndarray:
    d = np.zeros((max(n - 2, 0), n))
    for i in range(n - 2):
        d[i, i:i + 3] = (1.0, -2.0, 1.0)
    return d


def fit_bspline(fragment: np.ndarray, lam: float, degree: int = 3, n_ctrl: int = 8,
                plane: str = "xy", fragment_id: int = 0) -> ContourCurve:
    """Penalised least-squares B-spline through ordered 2D points.

    Solves ``(B^T B + lam D^T D) c = B^T y`` per coordinate, where ``B`` is
    the design matrix at the chord-length parameters and ``D`` takes second
    differences of the control points.
    """
    y = np.asarray(fragment, dtype=float)
    if lam < 0:
        raise ValueError("lam must be non-negative")
    if len(y) < n_ctrl:
        raise ValueError(f"fragment has {len(y)} points, fewer than n_ctrl={n_ctrl}")
    t = chord_parameter(y)
    knots = clamped_knots(n_ctrl, degree)
    b = BSpline.design_matrix(t, knots, degree).toarray()
    d = second_difference(n_ctrl)
    a = b.T @ b + lam * d.T @ d
    if np.linalg.cond(a) > MAX_CONDITION:
        raise DegenerateFragmentError("normal equations are rank deficient")
    ctrl = np.linalg.solve(a, b.T @ y)
    return ContourCurve(plane, ctrl, degree, knots, fragment_id)


def straight_segment(fragment: np.ndarray, plane: str = "xy", fragment_id: int = 0) -> ContourCurve:
    """Degree-1 fallback between the end points of an ordered fragment."""
    y = np.asarray(fragment, dtype=float)
    return ContourCurve(plane, np.vstack([y[0], y[-1]]), 1, np.array([0.0, 0.0, 1.0, 1.0]), fragment_id)


def fit_residuals(curve: ContourCurve, fragment: np.ndarray) -> np.ndarray:
    y = np.asarray(fragment, dtype=float)
    if curve.degree == 1 and len(curve.control_points) == 2:
        t = np.linspace(0.0, 1.0, len(y)) if len(y) > 1 else np.zeros(1)
    else:
        t = chord_parameter(y)
    return np.linalg.norm(curve.evaluate(t) - y, axis=1)


def fit_contours(edges, eps: float = 0.05, min_pts: int = 4, lam: float = 1e-3,
                 n_ctrl: int = 8, degree: int = 3) -> list[ContourCurve]:
    """Curves for every fragment on every plane, falling back to segments."""
    curves = []
    fid = 0
    for plane, frags in project_and_cluster(edges, eps, min_pts).items():
        for frag in frags:
            try:
                curves.append(fit_bspline(frag, lam, degree, n_ctrl, plane, fid))
            except (DegenerateFragmentError, ValueError):
                if len(frag) >= 2 and np.ptp(frag, axis=0).max() > 0:
                    curves.append(straight_segment(frag, plane, fid))
            fid += 1
    return curves
