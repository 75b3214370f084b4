"""Deterministic geometric point-cloud encoders for node and edge features.

Stand-ins for a learned point encoder. Clouds are centred on their centroid
but never rescaled, so absolute size stays visible to the relation
classifier. Features are zero-padded to the configured length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NODE_FEATURE_SIZE = 256
EDGE_FEATURE_SIZE = 512

# Layout of the node feature head (the remainder is zero padding).
NODE_LAYOUT = {
    "extents": slice(0, 3),
    "eigenvalues": slice(3, 6),
    "angles": slice(6, 9),
    "height": slice(9, 10),
    "count_fraction": slice(10, 11),
}
NODE_HEAD = 11

# Layout of the edge feature head.
EDGE_LAYOUT = {
    "stats_m": slice(0, NODE_HEAD),
    "stats_n": slice(NODE_HEAD, 2 * NODE_HEAD),
    "displacement": slice(22, 25),
    "gap_above": slice(25, 26),
    "gap_below": slice(26, 27),
    "horizontal_distance": slice(27, 28),
    "horizontal_offset": slice(28, 30),
}
EDGE_HEAD = 30


class EmptyCloudError(ValueError):
    """Raised when an object has no points, usually a segmentation failure upstream."""


@dataclass(frozen=True)
class EncoderConfig:
    n_points: int = 256
    node_size: int = NODE_FEATURE_SIZE
    edge_size: int = EDGE_FEATURE_SIZE
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_points < 1:
            raise ValueError("n_points must be positive")
        if self.node_size < NODE_HEAD or self.edge_size < EDGE_HEAD:
            raise ValueError("feature size too small for the encoder head")


def _as_points(cloud) -> np.ndarray:
    pts = np.asarray(getattr(cloud, "points", cloud), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
        raise EmptyCloudError("empty point cloud")
    return pts


def downsample(points: np.ndarray, n: int, seed: int = 0) -> np.ndarray:
    """Uniform random subset of ``n`` points (sampled with replacement if short)."""
    rng = np.random.default_rng(seed)
    if len(points) == n:
        return points
    idx = rng.choice(len(points), size=n, replace=len(points) < n)
    return points[np.sort(idx)]


def _stats(pts: np.ndarray, z_floor: float, count_fraction: float) -> np.ndarray:
    centroid = pts.mean(axis=0)
    local = pts - centroid
    extents = local.max(axis=0) - local.min(axis=0)
    cov = np.cov(local.T, bias=True) if len(local) > 1 else np.zeros((3, 3))
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    # angle between each principal axis and vertical, sign-free
    angles = np.arccos(np.clip(np.abs(evecs[2, :]), 0.0, 1.0))
    out = np.empty(NODE_HEAD)
    out[NODE_LAYOUT["extents"]] = extents
    out[NODE_LAYOUT["eigenvalues"]] = np.maximum(evals, 0.0)
    out[NODE_LAYOUT["angles"]] = angles
    out[NODE_LAYOUT["height"]] = centroid[2] - z_floor
    out[NODE_LAYOUT["count_fraction"]] = count_fraction
    return out


def encode_node_feature(cloud, config: EncoderConfig = EncoderConfig()) -> np.ndarray:
    """Node feature of one object's cloud.

    The height entry is the centroid height above the cloud's lowest point,
    which keeps the whole vector translation invariant.
    """
    pts = _as_points(cloud)
    sub = downsample(pts, config.n_points, config.seed)
    frac = min(len(pts), config.n_points) / config.n_points
    out = np.zeros(config.node_size)
    out[:NODE_HEAD] = _stats(sub, sub[:, 2].min(), frac)
    return out


def encode_edge_feature(cloud_m, cloud_n, config: EncoderConfig = EncoderConfig()) -> np.ndarray:
    """Edge feature from the union cloud with a per-point source indicator.

    The union is centred on its joint centroid. Per-source statistics are
    taken over the points with indicator 0 (m) and 1 (n), followed by the
    displacement between source centroids (n minus m), the vertical gaps
    (bottom of m minus top of n, and bottom of n minus top of m), and the
    horizontal centroid distance and offset.
    """
    pm = downsample(_as_points(cloud_m), config.n_points, config.seed)
    pn = downsample(_as_points(cloud_n), config.n_points, config.seed)
    union = np.vstack([pm, pn])
    delta = np.concatenate([np.zeros(len(pm)), np.ones(len(pn))])
    union = union - union.mean(axis=0)
    um, un = union[delta == 0], union[delta == 1]
    z_floor = union[:, 2].min()
    out = np.zeros(config.edge_size)
    out[EDGE_LAYOUT["stats_m"]] = _stats(um, z_floor, 1.0)
    out[EDGE_LAYOUT["stats_n"]] = _stats(un, z_floor, 1.0)
    disp = un.mean(axis=0) - um.mean(axis=0)
    out[EDGE_LAYOUT["displacement"]] = disp
    out[EDGE_LAYOUT["gap_above"]] = um[:, 2].min() - un[:, 2].max()
    out[EDGE_LAYOUT["gap_below"]] = un[:, 2].min() - um[:, 2].max()
    out[EDGE_LAYOUT["horizontal_distance"]] = np.hypot(disp[0], disp[1])
    out[EDGE_LAYOUT["horizontal_offset"]] = disp[:2]
    return out


def swap_edge_feature(f: np.ndarray) -> np.ndarray:
    """Map the edge feature of (m, n) onto that of (n, m).

    Flipping the indicator swaps the per-source blocks and the two gaps and
    negates the displacement and horizontal offset. Both sources are
    downsampled with the same seed, so the map is exact.
    """
    g = np.array(f, dtype=float, copy=True)
    g[EDGE_LAYOUT["stats_m"]] = f[EDGE_LAYOUT["stats_n"]]
    g[EDGE_LAYOUT["stats_n"]] = f[EDGE_LAYOUT["stats_m"]]
    g[EDGE_LAYOUT["displacement"]] = -f[EDGE_LAYOUT["displacement"]]
    g[EDGE_LAYOUT["gap_above"]] = f[EDGE_LAYOUT["gap_below"]]
    g[EDGE_LAYOUT["gap_below"]] = f[EDGE_LAYOUT["gap_above"]]
    g[EDGE_LAYOUT["horizontal_offset"]] = -f[EDGE_LAYOUT["horizontal_offset"]]
    return g
