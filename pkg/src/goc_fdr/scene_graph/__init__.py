"""3D scene graphs: relation classification, encoding, GCN and wire format."""

from .geometry import RelationThresholds, build_scene_graph, candidate_edges, geometric_relation, workspace_scene_graph
from .triplets import (
    DEFAULT_RELATIONS,
    GRASPED_BY,
    INSIDE,
    NEXT_TO,
    NONE,
    STANDING_ON,
    RelationVocabulary,
    SceneGraph3D,
    SceneGraphParseError,
    Triplet,
    deserialize_sg,
    serialize_sg,
    sg_payload_bits,
)
