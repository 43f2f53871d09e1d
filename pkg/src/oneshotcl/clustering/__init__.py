"""Server-side clustering algorithms and their recovery-condition checkers."""

from .base import (ClusteringResult, PointSet, as_points, compact_labels,
                   make_result, means_by_label)
from .conditions import (CenterSeparationReport, SeparabilityReport, cc_alpha,
                         cc_recovery_bounds, cc_recovery_verified, center_separation,
                         check_separability, km_alpha, lambda_interval)
from .convex import (GridSpec, cc_objective, clusterpath_select, convex_cluster,
                     write_path_trace)
from .kmeans import (estimate_k, kmeans, kmeans_cost, kmeanspp_init, lloyd,
                     silhouette_score, spectral_kmeans, spectral_kmeans_part1)

__all__ = [
    "CenterSeparationReport", "ClusteringResult", "GridSpec", "PointSet",
    "SeparabilityReport", "as_points", "cc_alpha", "cc_objective",
    "cc_recovery_bounds", "cc_recovery_verified", "center_separation",
    "check_separability", "clusterpath_select", "compact_labels", "convex_cluster",
    "estimate_k", "km_alpha", "kmeans", "kmeans_cost", "kmeanspp_init",
    "lambda_interval", "lloyd", "make_result", "means_by_label", "silhouette_score",
    "spectral_kmeans", "spectral_kmeans_part1", "write_path_trace",
]
