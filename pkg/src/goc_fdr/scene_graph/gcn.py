"""Triplet graph convolution, relation classifier and cross-entropy loss.

Weights are plain numpy arrays so trained parameters can be loaded from an
``.npz`` file. An MLP is a list of ``(W, b)`` layers with ReLU between
layers and a linear output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .triplets import NONE, RelationVocabulary, SceneGraph3D, Triplet

WEIGHTS_VERSION = 1

Mlp = list  # list of (W, b) with W of shape (out, in)


def mlp_forward(layers: Mlp, x: np.ndarray) -> np.ndarray:
    """Apply an MLP to a vector or to each row of a matrix."""
    h = np.asarray(x, dtype=float)
    for k, (w, b) in enumerate(layers):
        h = h @ w.T + b
        if k < len(layers) - 1:
            h = np.maximum(h, 0.0)
    return h


def _init_mlp(sizes: Sequence[int], rng: np.random.Generator | None, scale: float) -> Mlp:
    out = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        if rng is None:
            w = np.zeros((n_out, n_in))
        else:
            w = rng.normal(0.0, scale / np.sqrt(n_in), size=(n_out, n_in))
        out.append((w, np.zeros(n_out)))
    return out


def _mlp_dims(layers: Mlp) -> tuple[int, int]:
    return layers[0][0].shape[1], layers[-1][0].shape[0]


@dataclass
class GcnLayer:
    triplet_mlp: Mlp  # (2*Dn + De) -> (2*Dn + De)
    node_mlp: Mlp  # Dn -> Dn


@dataclass
class GcnWeights:
    layers: list[GcnLayer]
    classifier: Mlp  # De -> |vocabulary|
    node_size: int = 256
    edge_size: int = 512
    vocabulary: RelationVocabulary = field(default_factory=RelationVocabulary)

    def __post_init__(self) -> None:
        if len(self.layers) < 1:
            raise ValueError("at least one GCN layer is required")
        dn, de = self.node_size, self.edge_size
        width = 2 * dn + de
        for i, layer in enumerate(self.layers):
            if _mlp_dims(layer.triplet_mlp) != (width, width):
                raise ValueError(f"layer {i}: triplet MLP must map {width} -> {width}")
            if _mlp_dims(layer.node_mlp) != (dn, dn):
                raise ValueError(f"layer {i}: node MLP must map {dn} -> {dn}")
            for mlp in (layer.triplet_mlp, layer.node_mlp):
                _check_chain(mlp)
        _check_chain(self.classifier)
        if _mlp_dims(self.classifier) != (de, len(self.vocabulary)):
            raise ValueError("classifier must map edge features to vocabulary logits")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @classmethod
    def init(cls, node_size: int = 256, edge_size: int = 512, n_layers: int = 2, hidden: int = 0,
             vocabulary: RelationVocabulary | None = None, rng: np.random.Generator | None = None,
             scale: float = 1.0) -> "GcnWeights":
        """Random weights (or all zeros when ``rng`` is None). ``hidden=0`` means single-layer MLPs."""
        vocabulary = vocabulary or RelationVocabulary()
        width = 2 * node_size + edge_size
        mid = [hidden] if hidden else []
        layers = [GcnLayer(_init_mlp([width, *mid, width], rng, scale),
                           _init_mlp([node_size, *mid, node_size], rng, scale)) for _ in range(n_layers)]
        clf = _init_mlp([edge_size, *mid, len(vocabulary)], rng, scale)
        return cls(layers, clf, node_size, edge_size, vocabulary)

    # -- flat parameter view (used by the finite-difference helper) ----------

    def arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            for w, b in layer.triplet_mlp + layer.node_mlp:
                out += [w, b]
        for w, b in self.classifier:
            out += [w, b]
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, theta: np.ndarray) -> "GcnWeights":
        theta = np.asarray(theta, dtype=float)
        pos = 0

        def take(mlp):
            nonlocal pos
            out = []
            for w, b in mlp:
                nw = theta[pos:pos + w.size].reshape(w.shape)
                pos += w.size
                nb = theta[pos:pos + b.size].reshape(b.shape)
                pos += b.size
                out.append((nw, nb))
            return out

        layers = [GcnLayer(take(l.triplet_mlp), take(l.node_mlp)) for l in self.layers]
        clf = take(self.classifier)
        if pos != theta.size:
            raise ValueError("parameter vector has the wrong length")
        return GcnWeights(layers, clf, self.node_size, self.edge_size, self.vocabulary)


def _check_chain(mlp: Mlp) -> None:
    if not mlp:
        raise ValueError("empty MLP")
    for k, (w, b) in enumerate(mlp):
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ValueError("inconsistent MLP layer shapes")
        if k and w.shape[1] != mlp[k - 1][0].shape[0]:
            raise ValueError("MLP layer widths do not chain")


def gcn_layer(nodes: np.ndarray, edges: Sequence[tuple[int, int]], edge_feats: np.ndarray,
              layer: GcnLayer, keep_m_input: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """One triplet message-passing layer.

    Each triplet ``(f_m, f_mn, f_n)`` goes through the triplet MLP, whose
    output splits into updated m-role, edge and n-role features. A node's new
    feature is its old one plus the node MLP applied to the mean of its
    updated role features over all triplets that contain it; nodes in no
    triplet keep their feature. With ``keep_m_input`` the m-role output is
    discarded and the old ``f_m`` enters the mean instead, so only the
    n-role is advanced.

    Returns ``(new node features, new edge features)``.
    """
    nodes = np.asarray(nodes, dtype=float)
    edge_feats = np.asarray(edge_feats, dtype=float)
    dn = nodes.shape[1]
    if len(edges) == 0:
        return nodes.copy(), edge_feats.copy()
    idx = np.asarray(edges, dtype=int)
    if np.any(idx[:, 0] == idx[:, 1]):
        raise ValueError("self-edges are not allowed")
    x = np.hstack([nodes[idx[:, 0]], edge_feats, nodes[idx[:, 1]]])
    y = mlp_forward(layer.triplet_mlp, x)
    g_m = nodes[idx[:, 0]] if keep_m_input else y[:, :dn]
    g_e = y[:, dn:-dn]
    g_n = y[:, -dn:]
    acc = np.zeros_like(nodes)
    count = np.zeros(len(nodes))
    np.add.at(acc, idx[:, 0], g_m)
    np.add.at(acc, idx[:, 1], g_n)
    np.add.at(count, idx[:, 0], 1)
    np.add.at(count, idx[:, 1], 1)
    out = nodes.copy()
    seen = count > 0
    out[seen] = nodes[seen] + mlp_forward(layer.node_mlp, acc[seen] / count[seen, None])
    return out, g_e


def gcn_forward(nodes: np.ndarray, edges: Sequence[tuple[int, int]], edge_feats: np.ndarray,
                weights: GcnWeights, keep_m_input: bool = False) -> tuple[np.ndarray, np.ndarray]:
    for layer in weights.layers:
        nodes, edge_feats = gcn_layer(nodes, edges, edge_feats, layer, keep_m_input)
    return nodes, edge_feats


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def classify_relation(edge_feature: np.ndarray, weights: GcnWeights) -> np.ndarray:
    """Probability distribution over the vocabulary for one edge (or each row)."""
    return softmax(mlp_forward(weights.classifier, edge_feature))


def sg_loss(probs: np.ndarray, labels: Sequence[int]) -> float:
    """Cross-entropy summed over pairs.

    Returns ``inf`` if any true label has zero predicted probability.
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    labels = np.asarray(labels, dtype=int)
    if len(labels) != len(probs):
        raise ValueError("one label per predicted distribution is required")
    if np.any(labels < 0) or np.any(labels >= probs.shape[1]):
        raise ValueError("label outside the vocabulary")
    p = probs[np.arange(len(labels)), labels]
    if np.any(p <= 0.0):
        return float("inf")
    return float(-np.log(p).sum())


def predict_loss(weights: GcnWeights, nodes, edges, edge_feats, labels, keep_m_input: bool = False) -> float:
    _, e = gcn_forward(nodes, edges, edge_feats, weights, keep_m_input)
    return sg_loss(classify_relation(e, weights), labels)


def finite_difference_gradient(fn, theta: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    theta = np.asarray(theta, dtype=float)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        step = np.zeros_like(theta)
        step[i] = h
        grad[i] = (fn(theta + step) - fn(theta - step)) / (2 * h)
    return grad


def predict_scene_graph(captions: Sequence[str], nodes: np.ndarray, edges: Sequence[tuple[int, int]],
                        edge_feats: np.ndarray, weights: GcnWeights, frame_index: int = 0) -> SceneGraph3D:
    """Argmax relation per candidate edge; 'none' predictions are omitted.

    Asymmetric labels are read in the edge's (m, n) order.
    """
    if len(edges) == 0:
        return SceneGraph3D(frame_index)
    _, e = gcn_forward(nodes, edges, edge_feats, weights)
    probs = classify_relation(e, weights)
    labels = weights.vocabulary.labels
    trips = []
    for (i, j), p in zip(edges, probs):
        rel = labels[int(np.argmax(p))]
        if rel != NONE:
            trips.append(Triplet.make(captions[i], rel, captions[j]))
    return SceneGraph3D(frame_index, frozenset(trips))


# -- persistence ----------------------------------------------------------------

def save_weights(path: str | Path, weights: GcnWeights) -> None:
    arrays = {
        "version": np.array(WEIGHTS_VERSION),
        "n_layers": np.array(weights.n_layers),
        "dims": np.array([weights.node_size, weights.edge_size]),
        "vocabulary": np.array(weights.vocabulary.labels),
    }

    def put(prefix, mlp):
        arrays[f"{prefix}.depth"] = np.array(len(mlp))
        for k, (w, b) in enumerate(mlp):
            arrays[f"{prefix}.{k}.W"] = w
            arrays[f"{prefix}.{k}.b"] = b

    for i, layer in enumerate(weights.layers):
        put(f"layer{i}.triplet", layer.triplet_mlp)
        put(f"layer{i}.node", layer.node_mlp)
    put("classifier", weights.classifier)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_weights(path: str | Path) -> GcnWeights:
    with np.load(path, allow_pickle=False) as z:
        if "version" not in z or int(z["version"]) != WEIGHTS_VERSION:
            raise ValueError(f"{path}: unsupported weight file version")

        def get(prefix):
            return [(z[f"{prefix}.{k}.W"].astype(float), z[f"{prefix}.{k}.b"].astype(float))
                    for k in range(int(z[f"{prefix}.depth"]))]

        n = int(z["n_layers"])
        dn, de = (int(v) for v in z["dims"])
        layers = [GcnLayer(get(f"layer{i}.triplet"), get(f"layer{i}.node")) for i in range(n)]
        vocab = RelationVocabulary(tuple(str(s) for s in z["vocabulary"]))
        return GcnWeights(layers, get("classifier"), dn, de, vocab)
