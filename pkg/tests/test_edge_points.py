import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from goc_fdr.edge_points.attention import (
    AttentionWeights,
    EdgePointSet,
    attention_matrix,
    attention_saliency,
    decode_edge_payload,
    edge_payload_bits,
    encode_edge_payload,
    encode_points,
    extract_edge_points,
    full_payload_bits,
    geometric_saliency,
    point_saliency,
    top_k_edge_points,
)
from goc_fdr.edge_points.contour import (
    ContourCurve,
    DegenerateFragmentError,
    chord_parameter,
    clamped_knots,
    cluster_fragments,
    fit_bspline,
    fit_contours,
    fit_residuals,
    nn_chain,
    project_and_cluster,
    straight_segment,
)
from goc_fdr.world import ObjectState, PointCloud, box_surface_points


def selector_weights():
    """q = k = first 64 feature entries; identity point MLP on the first 3 dims."""
    w = np.zeros((128, 3))
    w[:3, :3] = np.eye(3)
    sel = np.zeros((64, 128))
    sel[:, :64] = np.eye(64)
    return AttentionWeights([(w, np.zeros(128))], sel, np.zeros(64), sel.copy(), np.zeros(64))


def hand_attention():
    e = math.e
    return np.array([
        [e / (2 * e + 1), 1 / (2 * e + 1), e / (2 * e + 1)],
        [1 / (2 * e + 1), e / (2 * e + 1), e / (2 * e + 1)],
        [1 / (2 + e), 1 / (2 + e), e / (2 + e)],
    ])


# --- attention ------------------------------------------------------------------

def test_weight_shapes_enforced():
    w = selector_weights()
    with pytest.raises(ValueError):
        AttentionWeights(w.mlp, np.zeros((64, 127)), w.b_q, w.w_k, w.b_k)
    with pytest.raises(ValueError):
        AttentionWeights(w.mlp, w.w_q, np.zeros(63), w.w_k, w.b_k)


def test_encode_points_hand_linear_map():
    rng = np.random.default_rng(0)
    w = rng.integers(-3, 4, size=(128, 3)).astype(float)
    b = rng.integers(-2, 3, size=128).astype(float)
    weights = AttentionWeights([(w, b)], *selector_weights_parts())
    pts = np.array([[1.0, 0.0, 2.0], [0.5, -1.0, 0.0], [1.0, 0.0, 2.0]])
    f = encode_points(pts, weights)
    for i, p in enumerate(pts):
        for j in range(128):
            assert f[i, j] == w[j, 0] * p[0] + w[j, 1] * p[1] + w[j, 2] * p[2] + b[j]
    assert np.array_equal(f[0], f[2])


def selector_weights_parts():
    s = selector_weights()
    return s.w_q, s.b_q, s.w_k, s.b_k


def test_encode_points_zero_weights():
    w = AttentionWeights([(np.zeros((128, 3)), np.zeros(128))], *selector_weights_parts())
    assert np.array_equal(encode_points(np.ones((4, 3)), w), np.zeros((4, 128)))


def test_single_point_attention():
    w = selector_weights()
    assert np.array_equal(attention_matrix(np.ones((1, 128)), w), [[1.0]])


def test_identical_features_uniform():
    w = AttentionWeights.init(seed=1)
    a = attention_matrix(np.tile(np.arange(128.0) / 128, (5, 1)), w)
    assert np.allclose(a, 0.2, atol=1e-15)


def test_hand_computed_three_point_attention():
    w = selector_weights()
    feats = np.zeros((3, 128))
    feats[0, 0] = 1.0
    feats[1, 1] = 1.0
    feats[2, :2] = 1.0
    a = attention_matrix(feats, w)
    assert np.allclose(a, hand_attention(), rtol=0, atol=1e-15)
    s = point_saliency(a)
    assert np.allclose(s, hand_attention().sum(axis=0), atol=1e-15)
    assert s.sum() == pytest.approx(3.0, abs=1e-12)


def test_saliency_trivial_matrices():
    assert np.array_equal(point_saliency(np.full((4, 4), 0.25)), np.ones(4))
    assert np.array_equal(point_saliency(np.eye(3)), np.ones(3))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 60))
def test_attention_rows_stochastic(seed, n):
    rng = np.random.default_rng(seed)
    w = AttentionWeights.init(seed=seed)
    feats = encode_points(rng.normal(size=(n, 3)), w)
    a = attention_matrix(feats, w)
    assert np.all(np.abs(a.sum(axis=1) - 1.0) < 1e-9)
    assert abs(point_saliency(a).sum() - n) < 1e-6


def test_key_bias_shift_invariance():
    rng = np.random.default_rng(3)
    w = AttentionWeights.init(seed=3)
    feats = encode_points(rng.normal(size=(12, 3)), w)
    shifted = AttentionWeights(w.mlp, w.w_q, w.b_q, w.w_k, w.b_k + rng.normal(size=64))
    # a key bias adds <q_t, b_K> to every logit of row t
    assert np.allclose(attention_matrix(feats, w), attention_matrix(feats, shifted), atol=1e-12)


def test_chunked_saliency_matches_dense():
    rng = np.random.default_rng(5)
    w = AttentionWeights.init(seed=5)
    feats = encode_points(rng.normal(size=(50, 3)), w)
    dense = point_saliency(attention_matrix(feats, w))
    assert np.allclose(attention_saliency(feats, w, chunk=7), dense, atol=1e-12)


def test_weights_round_trip(tmp_path):
    w = AttentionWeights.init(seed=9)
    w.save(tmp_path / "att.npz")
    back = AttentionWeights.load(tmp_path / "att.npz")
    assert np.array_equal(back.w_q, w.w_q) and np.array_equal(back.mlp[1][0], w.mlp[1][0])


# --- top-k ----------------------------------------------------------------------

def test_top_k_examples():
    pts = np.arange(9.0).reshape(3, 3)
    e = top_k_edge_points(pts, np.array([0.1, 0.9, 0.5]), k=2)
    assert set(e.indices.tolist()) == {1, 2}
    assert list(e.scores) == [0.9, 0.5]
    assert len(top_k_edge_points(pts, np.zeros(3), k=10)) == 3
    tie = top_k_edge_points(np.zeros((6, 3)), np.ones(6), k=4)
    assert list(tie.indices) == [0, 1, 2, 3]


def test_top_k_tie_rule_crafted():
    s = np.array([0.5, 0.7, 0.5, 0.7, 0.1, 0.5])
    e = top_k_edge_points(np.zeros((6, 3)), s, k=4)
    assert list(e.indices) == [1, 3, 0, 2]


def test_top_k_deterministic():
    rng = np.random.default_rng(1)
    pts, s = rng.normal(size=(100, 3)), rng.integers(0, 5, 100).astype(float)
    a, b = top_k_edge_points(pts, s, 17), top_k_edge_points(pts, s, 17)
    assert np.array_equal(a.indices, b.indices)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 40))
def test_top_k_permutation_consistent(seed, k):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(40, 3))
    s = rng.permutation(40).astype(float)  # distinct saliencies
    perm = rng.permutation(40)
    a = top_k_edge_points(pts, s, k)
    b = top_k_edge_points(pts[perm], s[perm], k)
    assert np.array_equal(perm[b.indices], a.indices)


def test_edge_point_set_sorted():
    with pytest.raises(ValueError):
        EdgePointSet(1, np.zeros((2, 3)), np.array([0.1, 0.2]), np.array([0, 1]))


def test_geometric_saliency_prefers_box_edges():
    box = ObjectState(3, "box", [0, 0, 0.2], [0.2, 0.15, 0.2])
    cloud = PointCloud(3, box_surface_points(box, 20000.0, 0.0, np.random.default_rng(0)))
    e = extract_edge_points(cloud, k=512)
    assert e.object_id == 3 and len(e) == 512

    def edge_dist(p):
        d = np.sort(box.half_extents - np.abs(p - box.position), axis=1)
        return np.hypot(d[:, 0], d[:, 1])  # distance to nearest box edge

    assert edge_dist(e.points).mean() < 0.25 * edge_dist(cloud.points).mean()


def test_attention_path_extracts_k_points():
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(300, 3))
    e = extract_edge_points(pts, k=64, weights=AttentionWeights.init(seed=2))
    assert len(e) == 64


def test_payload_sizes_and_round_trip():
    rng = np.random.default_rng(4)
    clouds = [PointCloud(i, rng.normal(size=(n, 3))) for i, n in ((1, 800), (2, 100))]
    sets = [extract_edge_points(c, k=512) for c in clouds]
    assert edge_payload_bits(sets) == (512 + 100) * 3 * 4 * 8
    assert edge_payload_bits(sets) <= full_payload_bits(clouds)
    back = decode_edge_payload(encode_edge_payload(sets))
    assert sorted(back) == [1, 2]
    assert np.allclose(back[1], sets[0].points, atol=1e-6)
    assert len(encode_edge_payload(sets)) == 2 * 8 + (512 + 100) * 12
    with pytest.raises(ValueError):
        decode_edge_payload(encode_edge_payload(sets)[:-1])


# --- clustering -----------------------------------------------------------------

def test_single_blob_one_fragment_per_plane():
    rng = np.random.default_rng(0)
    blob = rng.normal(0, 0.01, size=(60, 3))
    frags = project_and_cluster(blob, eps=0.05, min_pts=4)
    assert sorted(frags) == ["xy", "xz", "yz"]
    assert all(len(v) == 1 and len(v[0]) == 60 for v in frags.values())


def test_two_separated_blobs():
    rng = np.random.default_rng(1)
    a = rng.normal(0, 0.005, size=(40, 2))
    b = a + np.array([0.5, 0.0])  # 10 eps apart
    frags = cluster_fragments(np.vstack([a, b]), eps=0.05, min_pts=4)
    assert len(frags) == 2


def test_noise_points_discarded():
    pts = np.vstack([np.zeros((10, 2)), [[5.0, 5.0]]])
    frags = cluster_fragments(pts, eps=0.05, min_pts=4)
    assert len(frags) == 1 and len(frags[0]) == 10


def test_l_shape_chain_ordering():
    # 100 points: 50 along x then 50 up y, spacing 0.02, shuffled
    arm1 = np.c_[np.linspace(0, 0.98, 50), np.zeros(50)]
    arm2 = np.c_[np.full(50, 1.0), np.linspace(0.0, 0.98, 50) + 0.02]
    truth = np.vstack([arm1, arm2])
    shuffled = truth[np.random.default_rng(3).permutation(100)]
    frags = cluster_fragments(shuffled, eps=0.05, min_pts=2)
    assert len(frags) == 1
    chain = frags[0]
    assert np.array_equal(chain, truth) or np.array_equal(chain, truth[::-1])
    s = np.concatenate([[0], np.cumsum(np.linalg.norm(np.diff(chain, axis=0), axis=1))])
    assert np.all(np.diff(s) > 0)
    assert s[-1] == pytest.approx(truth_length(truth), abs=1e-12)


def truth_length(p):
    return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())


def test_cluster_argument_checks():
    with pytest.raises(ValueError):
        cluster_fragments(np.zeros((3, 2)), eps=0.0)
    assert nn_chain(np.zeros((1, 2))).shape == (1, 2)


# --- spline fitting -------------------------------------------------------------

def quarter_circle(n=50):
    th = np.linspace(0, np.pi / 2, n)
    return np.c_[np.cos(th), np.sin(th)]


def test_collinear_exact_at_zero_lambda():
    t = np.linspace(0, 1, 20)
    line = np.c_[3 * t - 1, -2 * t + 0.5]
    c = fit_bspline(line, 0.0)
    assert fit_residuals(c, line).max() < 1e-9


def test_quarter_circle_rms():
    pts = quarter_circle()
    c = fit_bspline(pts, 1e-3, n_ctrl=8)
    rms = np.sqrt(np.mean(fit_residuals(c, pts) ** 2))
    assert rms < 1e-2
    assert len(c.control_points) == 8 and c.degree == 3


def test_penalty_reduces_second_differences():
    rng = np.random.default_rng(0)
    noisy = quarter_circle() + rng.normal(0, 0.01, (50, 2))
    d2 = [np.abs(np.diff(fit_bspline(noisy, lam).control_points, 2, axis=0)).max()
          for lam in (0.0, 1.0, 1e3, 1e6)]
    assert all(a > b for a, b in zip(d2, d2[1:]))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_residual_non_increasing_in_n_ctrl(seed):
    rng = np.random.default_rng(seed)
    data = quarter_circle(60) + rng.normal(0, 0.02, (60, 2))
    sse = [np.sum(fit_residuals(fit_bspline(data, 0.0, n_ctrl=n), data) ** 2) for n in range(4, 16)]
    assert all(b <= a * (1 + 1e-9) + 1e-15 for a, b in zip(sse, sse[1:]))


def test_knots_nested_and_clamped():
    k8, k9 = clamped_knots(8), clamped_knots(9)
    assert set(k8).issubset(set(k9))
    assert list(k8[:4]) == [0.0] * 4 and list(k8[-4:]) == [1.0] * 4
    assert np.allclose(clamped_knots(11)[3:-3], np.linspace(0, 1, 9))  # 7 interior knots


def test_degenerate_fragment_signalled_and_fallback():
    pts = np.zeros((10, 2))
    with pytest.raises(DegenerateFragmentError):
        fit_bspline(pts, 0.0)
    clumped = np.vstack([np.zeros((9, 2)), [[1.0, 1.0]]])
    with pytest.raises(DegenerateFragmentError):
        fit_bspline(clumped, 0.0)
    seg = straight_segment(clumped)
    assert seg.degree == 1 and np.array_equal(seg.control_points, [[0, 0], [1, 1]])


def test_too_few_points():
    with pytest.raises(ValueError):
        fit_bspline(quarter_circle(5), 0.0, n_ctrl=8)


def test_chord_parameter_normalised():
    t = chord_parameter(quarter_circle())
    assert t[0] == 0.0 and t[-1] == 1.0 and np.all(np.diff(t) > 0)


def test_contour_curve_invariants():
    with pytest.raises(ValueError):
        ContourCurve("xy", np.zeros((2, 2)), 3, np.zeros(6))
    with pytest.raises(ValueError):
        ContourCurve("xw", np.zeros((4, 2)), 3, np.r_[np.zeros(4), np.ones(4)])


def test_fit_contours_on_box_edges():
    box = ObjectState(3, "box", [0, 0, 0.2], [0.2, 0.15, 0.2])
    cloud = box_surface_points(box, 20000.0, 0.0, np.random.default_rng(0))
    curves = fit_contours(extract_edge_points(cloud, k=512))
    assert {c.plane for c in curves} == {"xy", "xz", "yz"}
    assert all(c.to_text().startswith(c.plane + ", ") for c in curves)
