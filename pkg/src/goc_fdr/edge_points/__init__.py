"""Edge-point extraction and contour fitting for motion-level uplink."""

from .attention import (
    AttentionWeights,
    EdgePointSet,
    attention_matrix,
    encode_points,
    extract_edge_points,
    point_saliency,
    top_k_edge_points,
)
from .contour import ContourCurve, DegenerateFragmentError, fit_bspline, fit_contours, project_and_cluster
