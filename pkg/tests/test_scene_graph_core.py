import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from goc_fdr.scene_graph.geometry import (
    RelationThresholds,
    build_scene_graph,
    candidate_edges,
    geometric_relation,
    relation_triplet,
)
from goc_fdr.scene_graph.triplets import (
    DEFAULT_RELATIONS,
    RelationVocabulary,
    SceneGraph3D,
    SceneGraphParseError,
    Triplet,
    deserialize_sg,
    serialize_sg,
    sg_payload_bits,
)
from goc_fdr.world import ObjectState, RobotState


def box(i, cap, pos, half=(0.1, 0.1, 0.1), **kw):
    return ObjectState(i, cap, pos, half, **kw)


# --- triplets and vocabulary ----------------------------------------------------

def test_vocabulary_requires_none():
    with pytest.raises(ValueError):
        RelationVocabulary(("standing on", "inside"))
    with pytest.raises(ValueError):
        RelationVocabulary(("none", "none"))
    assert len(RelationVocabulary()) == 5


def test_self_relation_rejected():
    with pytest.raises(ValueError):
        Triplet("box", "next to", "box")


def test_symmetric_canonical_order():
    assert Triplet.make("table", "next to", "box") == Triplet("box", "next to", "table")
    with pytest.raises(ValueError):
        Triplet("table", "next to", "box")
    # asymmetric relations keep their roles
    t = Triplet.make("parcel", "grasped by", "robot")
    assert (t.caption_m, t.caption_n) == ("parcel", "robot")


def test_one_triplet_per_pair():
    with pytest.raises(ValueError):
        SceneGraph3D(0, {Triplet.make("a", "next to", "b"), Triplet("a", "standing on", "b")})


def test_empty_graph_payload():
    assert serialize_sg(SceneGraph3D()) == b""
    assert sg_payload_bits(SceneGraph3D()) == 0
    assert deserialize_sg(b"") == SceneGraph3D()


def test_serialize_sorted_lines():
    sg = SceneGraph3D(0, {Triplet("parcel", "grasped by", "robot"), Triplet("box", "standing on", "table")})
    assert serialize_sg(sg) == b"box|standing on|table\nparcel|grasped by|robot\n"


def test_ten_triplet_payload_size():
    # 10 lines "oNN|next to|pNN" are 15 bytes + newline each
    sg = SceneGraph3D(0, {Triplet.make(f"o{i:02d}", "next to", f"p{i:02d}") for i in range(10)})
    assert len(serialize_sg(sg)) == 160
    assert sg_payload_bits(sg) == 1280


@pytest.mark.parametrize("bad, lineno", [
    (b"a|next to\n", 1),
    (b"a|next to|b\nc|flies over|d\n", 2),
    (b"a|next to|b\n\nc|next to|d\n", 2),
    (b"b|next to|a\n", 1),
    (b"\xff\xfe", 1),
])
def test_deserialize_errors_report_line(bad, lineno):
    with pytest.raises(SceneGraphParseError) as exc:
        deserialize_sg(bad)
    assert exc.value.lineno == lineno


captions = st.text(alphabet="abcdefghij _", min_size=1, max_size=6).map(str.strip).filter(bool)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(captions, st.sampled_from(DEFAULT_RELATIONS[:-1]), captions), max_size=12))
def test_round_trip_identity(items):
    seen, trips = set(), []
    for a, r, b in items:
        if a == b or frozenset((a, b)) in seen:
            continue
        seen.add(frozenset((a, b)))
        trips.append(Triplet.make(a, r, b))
    sg = SceneGraph3D(3, frozenset(trips))
    assert deserialize_sg(serialize_sg(sg), frame_index=3) == sg


# --- candidate edges ------------------------------------------------------------

def test_candidate_edges_trivial():
    a = box(1, "a", [0, 0, 0.1])
    assert candidate_edges([a], 1.0) == []
    b, c = box(2, "b", [0.2, 0, 0.1]), box(3, "c", [0, 0.2, 0.1])
    assert candidate_edges([c, a, b], 1.0) == [(1, 2), (1, 3), (2, 3)]
    far = box(4, "far", [2.0, 0, 0.1])
    assert candidate_edges([a, far], 1.0) == []
    with pytest.raises(ValueError):
        candidate_edges([a], 0.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(*[st.floats(-1, 1)] * 3), min_size=0, max_size=8), st.floats(0.1, 2.0))
def test_candidate_edges_matches_bruteforce(points, d_max):
    objs = [box(i, f"o{i}", p) for i, p in enumerate(points)]
    got = set(candidate_edges(objs, d_max))
    want = {(i, j) for i in range(len(points)) for j in range(i + 1, len(points))
            if np.linalg.norm(np.subtract(points[i], points[j])) <= d_max}
    assert got == want


# --- geometric classifier -------------------------------------------------------

NO_ROBOTS = {}


def test_standing_on_table():
    table = box(1, "table", [0, 0, 0.375], (0.4, 0.4, 0.375))
    b = box(2, "box", [0.0, 0.0, 0.85])
    assert geometric_relation(b, table, NO_ROBOTS) == "standing on"
    assert relation_triplet(table, b, NO_ROBOTS) == Triplet("box", "standing on", "table")


def test_standing_on_requires_overlap():
    table = box(1, "table", [0, 0, 0.375], (0.4, 0.4, 0.375))
    # overlap ratio 0.2 x 0.05 / 0.04 = 0.25 passes, 0.04 / 0.04 * 0.2 fails
    edge = box(2, "box", [0.45, 0.0, 0.85])
    assert geometric_relation(edge, table, NO_ROBOTS) == "standing on"
    off = box(3, "off", [0.47, 0.0, 0.85])
    assert geometric_relation(off, table, NO_ROBOTS) != "standing on"


def test_standing_on_vertical_tolerance():
    table = box(1, "table", [0, 0, 0.375], (0.4, 0.4, 0.375))
    hover = box(2, "box", [0.0, 0.0, 0.85 + 0.02])
    assert geometric_relation(hover, table, NO_ROBOTS) == "next to"


def test_grasped_by_robot():
    robot = RobotState(10, "robot", [0.0, 0.0, 1.0])
    parcel = box(2, "parcel", [0.0, 0.0, 0.9])
    robot.carried_object = 2
    robots = {10: robot}
    assert relation_triplet(robot.as_object(), parcel, robots) == Triplet("parcel", "grasped by", "robot")
    robot.carried_object = None
    assert geometric_relation(robot.as_object(), parcel, robots) == "next to"


def test_next_to_boxes():
    a = box(1, "a", [0.0, 0.0, 0.85])
    b = box(2, "b", [0.25, 0.0, 0.85])
    assert geometric_relation(a, b, NO_ROBOTS) == "next to"
    c = box(3, "c", [0.4, 0.0, 0.85])
    assert geometric_relation(a, c, NO_ROBOTS) == "none"


def test_inside_container():
    bin_ = box(1, "bin", [0, 0, 0.2], (0.3, 0.3, 0.2), container=True)
    item = box(2, "item", [0.05, 0.0, 0.05], (0.05, 0.05, 0.05))
    assert relation_triplet(bin_, item, NO_ROBOTS) == Triplet("item", "inside", "bin")


def test_self_relation_is_error():
    a = box(1, "a", [0, 0, 0.1])
    with pytest.raises(ValueError):
        geometric_relation(a, a, NO_ROBOTS)


@settings(max_examples=80, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(0.0, 0.5))
def test_classifier_symmetric_consistent(dx, dy, dz):
    a = box(1, "a", [0, 0, 0.1])
    b = box(2, "b", [dx, dy, 0.1 + dz])
    assert relation_triplet(a, b, NO_ROBOTS) == relation_triplet(b, a, NO_ROBOTS)


def test_build_scene_graph_prunes_and_omits_none():
    th = RelationThresholds(d_max=1.0)
    table = box(1, "table", [0, 0, 0.375], (0.4, 0.4, 0.375))
    b = box(2, "box", [0.0, 0.0, 0.85])
    far = box(3, "far", [0.0, 0.0, 0.85 + 5.0])
    sg = build_scene_graph([table, b, far], NO_ROBOTS, th, frame_index=7)
    assert sg.frame_index == 7
    assert set(sg) == {Triplet("box", "standing on", "table")}


def test_thresholds_validated():
    with pytest.raises(ValueError):
        RelationThresholds(tau=0.0)
