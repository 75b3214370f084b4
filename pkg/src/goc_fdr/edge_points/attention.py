"""Self-attention saliency over object points and top-k edge-point selection."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from ..scene_graph.gcn import mlp_forward

FEATURE_DIM = 128
PROJ_DIM = 64
WEIGHTS_VERSION = 1
BYTES_PER_POINT = 12  # three float32 coordinates


@dataclass
class AttentionWeights:
    mlp: list  # shared point MLP, (W, b) pairs mapping 3 -> 128
    w_q: np.ndarray
    b_q: np.ndarray
    w_k: np.ndarray
    b_k: np.ndarray

    def __post_init__(self) -> None:
        if not self.mlp or self.mlp[0][0].shape[1] != 3 or self.mlp[-1][0].shape[0] != FEATURE_DIM:
            raise ValueError("point MLP must map 3 -> 128")
        for w, b in self.mlp:
            if b.shape != (w.shape[0],):
                raise ValueError("inconsistent point MLP layer")
        for name in ("w_q", "w_k"):
            if getattr(self, name).shape != (PROJ_DIM, FEATURE_DIM):
                raise ValueError(f"{name} must be {PROJ_DIM}x{FEATURE_DIM}")
        for name in ("b_q", "b_k"):
            if getattr(self, name).shape != (PROJ_DIM,):
                raise ValueError(f"{name} must have length {PROJ_DIM}")

    @classmethod
    def init(cls, seed: int = 0, hidden: int = 64, scale: float = 1.0) -> "AttentionWeights":
        """Seeded weights with orthonormal rows in the query/key projections."""
        rng = np.random.default_rng(seed)
        mlp = [(rng.normal(0, scale / np.sqrt(3), (hidden, 3)), np.zeros(hidden)),
               (rng.normal(0, scale / np.sqrt(hidden), (FEATURE_DIM, hidden)), np.zeros(FEATURE_DIM))]

        def ortho():
            q, _ = np.linalg.qr(rng.normal(size=(FEATURE_DIM, PROJ_DIM)))
            return scale * q.T

        return cls(mlp, ortho(), np.zeros(PROJ_DIM), ortho(), np.zeros(PROJ_DIM))

    def save(self, path: str | Path) -> None:
        arrays = {"version": np.array(WEIGHTS_VERSION), "depth": np.array(len(self.mlp)),
                  "w_q": self.w_q, "b_q": self.b_q, "w_k": self.w_k, "b_k": self.b_k}
        for i, (w, b) in enumerate(self.mlp):
            arrays[f"mlp.{i}.W"], arrays[f"mlp.{i}.b"] = w, b
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "AttentionWeights":
        with np.load(path, allow_pickle=False) as z:
            if "version" not in z or int(z["version"]) != WEIGHTS_VERSION:
                raise ValueError(f"{path}: unsupported weight file version")
            mlp = [(z[f"mlp.{i}.W"], z[f"mlp.{i}.b"]) for i in range(int(z["depth"]))]
            return cls(mlp, z["w_q"], z["b_q"], z["w_k"], z["b_k"])


@dataclass(frozen=True)
class EdgePointSet:
    object_id: int
    points: np.ndarray
    scores: np.ndarray
    indices: np.ndarray

    def __post_init__(self) -> None:
        if len(self.points) != len(self.scores) or len(self.points) != len(self.indices):
            raise ValueError("points, scores and indices must align")
        if np.any(np.diff(self.scores) > 0):
            raise ValueError("scores must be sorted in descending order")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def payload_bits(self) -> int:
        return 8 * BYTES_PER_POINT * len(self.points)


def _points(cloud) -> np.ndarray:
    pts = np.asarray(getattr(cloud, "points", cloud), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
        raise ValueError("point cloud must be a non-empty N x 3 array")
    return pts


def encode_points(cloud, weights: AttentionWeights) -> np.ndarray:
    """Shared MLP applied to every point independently (N x 128)."""
    return mlp_forward(weights.mlp, _points(cloud))


def _logits(features: np.ndarray, weights: AttentionWeights, rows=slice(None)) -> np.ndarray:
    q = features[rows] @ weights.w_q.T + weights.b_q
    k = features @ weights.w_k.T + weights.b_k
    return q @ k.T


def _row_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def attention_matrix(features: np.ndarray, weights: AttentionWeights) -> np.ndarray:
    """Row-softmax of query/key dot products, ``alpha[t, k] = softmax_k <q_t, k_k>``."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    if len(features) == 0:
        raise ValueError("at least one point is required")
    return _row_softmax(_logits(features, weights))


def point_saliency(attention: np.ndarray) -> np.ndarray:
    """Total attention each point receives (column sums)."""
    return np.asarray(attention, dtype=float).sum(axis=0)


def attention_saliency(features: np.ndarray, weights: AttentionWeights, chunk: int = 1024) -> np.ndarray:
    """Column sums of the attention matrix without holding all N x N entries."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    s = np.zeros(len(features))
    for start in range(0, len(features), chunk):
        s += _row_softmax(_logits(features, weights, slice(start, start + chunk))).sum(axis=0)
    return s


def geometric_saliency(cloud, k: int = 16) -> np.ndarray:
    """Surface variation of each point's k-neighbourhood.

    Smallest covariance eigenvalue over the eigenvalue sum: near zero on flat
    faces, large at box edges and corners.
    """
    pts = _points(cloud)
    if len(pts) < 3:
        return np.zeros(len(pts))
    k = min(k, len(pts))
    _, idx = cKDTree(pts).query(pts, k=k)
    nb = pts[idx]
    local = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", local, local) / k
    ev = np.linalg.eigvalsh(cov)
    total = ev.sum(axis=1)
    return np.divide(ev[:, 0], total, out=np.zeros(len(pts)), where=total > 0)


def top_k_edge_points(cloud, s: np.ndarray, k: int = 512, object_id: int | None = None) -> EdgePointSet:
    """The ``k`` most salient points; ties go to the lower point index."""
    pts = _points(cloud)
    s = np.asarray(s, dtype=float)
    if s.shape != (len(pts),):
        raise ValueError("one saliency value per point is required")
    if k < 1:
        raise ValueError("k must be positive")
    order = np.argsort(-s, kind="stable")[:min(k, len(pts))]
    oid = object_id if object_id is not None else getattr(cloud, "object_id", -1)
    return EdgePointSet(oid, pts[order], s[order], order)


def extract_edge_points(cloud, k: int = 512, weights: AttentionWeights | None = None,
                        knn: int = 16) -> EdgePointSet:
    """Saliency then top-k; geometric saliency when no attention weights are given."""
    if weights is None:
        s = geometric_saliency(cloud, knn)
    else:
        s = attention_saliency(encode_points(cloud, weights), weights)
    return top_k_edge_points(cloud, s, k)


# -- wire payload ---------------------------------------------------------------

def encode_edge_payload(sets) -> bytes:
    """Little-endian records: uint32 object id, uint32 count, then float32 x y z."""
    out = bytearray()
    for e in sets:
        out += struct.pack("<II", e.object_id, len(e))
        out += np.asarray(e.points, dtype="<f4").tobytes()
    return bytes(out)


def decode_edge_payload(data: bytes) -> dict[int, np.ndarray]:
    out, pos = {}, 0
    while pos < len(data):
        if pos + 8 > len(data):
            raise ValueError("truncated edge-point record header")
        oid, n = struct.unpack_from("<II", data, pos)
        pos += 8
        end = pos + n * BYTES_PER_POINT
        if end > len(data):
            raise ValueError("truncated edge-point record")
        out[oid] = np.frombuffer(data[pos:end], dtype="<f4").reshape(n, 3).astype(float)
        pos = end
    return out


def edge_payload_bits(sets) -> int:
    """Coordinate bits only: (selected points) x 3 x 32."""
    return sum(e.payload_bits for e in sets)


def full_payload_bits(clouds) -> int:
    return sum(8 * BYTES_PER_POINT * len(_points(c)) for c in clouds)
