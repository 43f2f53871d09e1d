"""Recovery-condition checkers: separability, penalty intervals, center separation.

These operate on a point set together with a candidate (or ground-truth)
partition and evaluate the deterministic conditions under which the
clustering algorithms in this package provably recover that partition.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from .base import as_points, means_by_label


def _cluster_stats(points: np.ndarray, assignment) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    labels = np.asarray(assignment, dtype=int)
    if len(labels) != points.shape[0]:
        raise ConfigError("assignment length does not match number of points")
    k = int(labels.max()) + 1
    sizes = np.bincount(labels, minlength=k)
    if (sizes == 0).any():
        raise ConfigError(f"empty cluster in assignment: {np.flatnonzero(sizes == 0).tolist()}")
    means = means_by_label(points, labels, k)
    return labels, sizes, means


def _min_center_gap(means: np.ndarray) -> float:
    k = means.shape[0]
    if k < 2:
        return np.inf
    diff = means[:, None, :] - means[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    return float(dist[np.triu_indices(k, 1)].min())


@dataclass
class SeparabilityReport:
    """Outcome of the radius-vs-gap separability check."""

    max_radius: float
    min_center_gap: float
    alpha_required: float
    holds: bool


def check_separability(points, assignment, alpha: float) -> SeparabilityReport:
    """Check alpha * (largest cluster radius) < (smallest center gap).

    With a single cluster the gap is infinite and the condition holds.
    """
    if not alpha > 1:
        raise ConfigError(f"alpha must exceed 1, got {alpha}")
    pts = as_points(points)
    labels, _, means = _cluster_stats(pts, assignment)
    radius = float(np.linalg.norm(pts - means[labels], axis=1).max())
    gap = _min_center_gap(means)
    return SeparabilityReport(max_radius=radius, min_center_gap=gap,
                              alpha_required=float(alpha),
                              holds=bool(alpha * radius < gap))


def cc_alpha(m: int, smallest: int) -> float:
    """Separation factor under which the fusion-penalty interval is nonempty."""
    return 4.0 * (m - smallest) / smallest


def km_alpha(m: int, smallest: int, c: float) -> float:
    """Separation factor under which spectral K-means recovers the partition."""
    return 2.0 + 2.0 * c * np.sqrt(m) / np.sqrt(smallest)


def lambda_interval(points, assignment) -> tuple[float, float]:
    """Penalty range [lo, hi) that recovers the given partition exactly.

    lo = (largest cluster radius) / |smallest cluster|,
    hi = (smallest center gap) / (2 * (m - |smallest cluster|)).
    The interval may be empty (lo >= hi); callers must check.
    """
    pts = as_points(points)
    labels, sizes, means = _cluster_stats(pts, assignment)
    if len(sizes) < 2:
        raise ConfigError("lambda interval is undefined for a single cluster")
    smallest = int(sizes.min())
    radius = float(np.linalg.norm(pts - means[labels], axis=1).max())
    gap = _min_center_gap(means)
    return radius / smallest, gap / (2.0 * (pts.shape[0] - smallest))


def cc_recovery_bounds(points, assignment) -> tuple[float, float]:
    """A-posteriori penalty bounds certifying a produced partition.

    lo = max over clusters of (max within-cluster pairwise distance)/|V_k|;
    hi = min over cluster pairs of gap / (2m - |V_k| - |V_l|).  A penalty in
    [lo, hi) certifies that the fusion solution yields exactly this partition.
    """
    pts = as_points(points)
    labels, sizes, means = _cluster_stats(pts, assignment)
    m = pts.shape[0]
    k = len(sizes)
    lo = 0.0
    for lab in range(k):
        members = pts[labels == lab]
        if len(members) > 1:
            diff = members[:, None, :] - members[None, :, :]
            lo = max(lo, float(np.linalg.norm(diff, axis=2).max()) / sizes[lab])
    if k < 2:
        return lo, np.inf
    hi = np.inf
    for a in range(k):
        for b in range(a + 1, k):
            gap = float(np.linalg.norm(means[a] - means[b]))
            hi = min(hi, gap / (2 * m - sizes[a] - sizes[b]))
    return lo, float(hi)


def cc_recovery_verified(points, assignment, lam: float) -> bool:
    lo, hi = cc_recovery_bounds(points, assignment)
    return bool(lo <= lam < hi)


@dataclass
class CenterSeparationReport:
    """Outcome of the residual-norm center-separation check."""

    holds: bool
    c_required: float
    c_max: float  # largest factor for which the condition still holds
    deltas: np.ndarray
    min_margin: float  # min over pairs of gap - c*(delta_k + delta_l)


def center_separation(points, assignment, c: float) -> CenterSeparationReport:
    """Check ||mu_k - mu_l|| >= c*(Delta_k + Delta_l) for all cluster pairs.

    Delta_k = min(sqrt(K)*||A - C||_2, ||A - C||_F) / sqrt(|C_k|), where C
    stacks each point's cluster mean.
    """
    if not c > 0:
        raise ConfigError(f"c must be positive, got {c}")
    pts = as_points(points)
    labels, sizes, means = _cluster_stats(pts, assignment)
    k = len(sizes)
    resid = pts - means[labels]
    spectral = float(np.linalg.norm(resid, 2))
    frobenius = float(np.linalg.norm(resid))
    deltas = min(np.sqrt(k) * spectral, frobenius) / np.sqrt(sizes)
    holds = True
    c_max = np.inf
    min_margin = np.inf
    for a in range(k):
        for b in range(a + 1, k):
            gap = float(np.linalg.norm(means[a] - means[b]))
            spread = float(deltas[a] + deltas[b])
            min_margin = min(min_margin, gap - c * spread)
            if gap < c * spread:
                holds = False
            if spread > 0:
                c_max = min(c_max, gap / spread)
    return CenterSeparationReport(holds=holds, c_required=float(c), c_max=float(c_max),
                                  deltas=deltas, min_margin=float(min_margin))
