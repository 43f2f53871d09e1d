"""Shared clustering types and small helpers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError


@dataclass
class PointSet:
    """Points to cluster (rows) together with their owner ids."""

    points: np.ndarray  # (m, d)
    ids: np.ndarray  # (m,)

    @classmethod
    def from_points(cls, points) -> "PointSet":
        points = np.asarray(points, dtype=float)
        return cls(points=points, ids=np.arange(points.shape[0]))

    def validate(self) -> None:
        if self.points.ndim != 2 or self.points.shape[0] < 1:
            raise ConfigError("points must be a nonempty (m, d) matrix")
        if not np.isfinite(self.points).all():
            raise ConfigError("points contain non-finite entries")
        if len(self.ids) != self.points.shape[0]:
            raise ConfigError("ids length does not match number of points")


def as_points(x) -> np.ndarray:
    if isinstance(x, PointSet):
        x.validate()
        return x.points
    pts = np.asarray(x, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ConfigError("points must be a nonempty (m, d) matrix")
    if not np.isfinite(pts).all():
        raise ConfigError("points contain non-finite entries")
    return pts


@dataclass
class ClusteringResult:
    """A partition of the points plus per-cluster centroids and diagnostics."""

    assignment: np.ndarray  # (m,) labels in 0..k_prime-1
    centroids: np.ndarray  # (k_prime, d)
    diagnostics: dict = field(default_factory=dict)

    @property
    def k_prime(self) -> int:
        return self.centroids.shape[0]

    def clusters(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.assignment == k) for k in range(self.k_prime)]

    def to_json(self) -> dict:
        diag = {}
        for key, value in self.diagnostics.items():
            diag[key] = value.tolist() if isinstance(value, np.ndarray) else value
        return {"assignment": self.assignment.tolist(),
                "centroids": self.centroids.tolist(),
                "k": self.k_prime,
                "diagnostics": diag}


def compact_labels(labels: np.ndarray) -> np.ndarray:
    """Relabel to 0..K'-1 in order of first appearance, dropping unused labels."""
    labels = np.asarray(labels)
    order = {}
    out = np.empty(len(labels), dtype=int)
    for i, lab in enumerate(labels):
        out[i] = order.setdefault(int(lab), len(order))
    return out


def means_by_label(points: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Per-cluster means; rows are summed in ascending point order."""
    d = points.shape[1]
    means = np.zeros((k, d))
    for lab in range(k):
        members = np.flatnonzero(labels == lab)
        if len(members) == 0:
            raise ConfigError(f"cluster {lab} is empty")
        means[lab] = points[members].sum(axis=0) / len(members)
    return means


def make_result(points: np.ndarray, labels: np.ndarray, diagnostics: dict) -> ClusteringResult:
    """Build a ClusteringResult with compacted labels and mean centroids."""
    labels = compact_labels(labels)
    k = int(labels.max()) + 1
    return ClusteringResult(assignment=labels,
                            centroids=means_by_label(points, labels, k),
                            diagnostics=diagnostics)
