"""Shared builders for randomized clustering instances used across test modules."""
from __future__ import annotations

import numpy as np
import pytest
from scipy.spatial.distance import pdist

from oneshotcl.clustering import cc_alpha, check_separability, km_alpha


def spread_centers(rng: np.random.Generator, k: int, d: int, gap: float = 10.0) -> np.ndarray:
    """k cluster centers whose smallest pairwise distance is exactly `gap`."""
    while True:
        centers = rng.normal(size=(k, d))
        dmin = pdist(centers).min() if k > 1 else 1.0
        if dmin > 1e-6:
            return centers * (gap / dmin)


def scatter_in_balls(rng, centers, sizes, radius) -> tuple[np.ndarray, np.ndarray]:
    pts = []
    for k, size in enumerate(sizes):
        offsets = rng.normal(size=(size, centers.shape[1]))
        offsets /= np.linalg.norm(offsets, axis=1, keepdims=True)
        offsets *= rng.uniform(0, radius, size=(size, 1))
        pts.append(centers[k] + offsets)
    labels = np.repeat(np.arange(len(sizes)), sizes)
    return np.concatenate(pts), labels


def random_sizes(rng, m: int, k: int) -> np.ndarray:
    """A random composition of m into k positive parts."""
    cuts = np.sort(rng.choice(np.arange(1, m), size=k - 1, replace=False)) if k > 1 else []
    bounds = np.concatenate([[0], cuts, [m]])
    return np.diff(bounds).astype(int)


def make_separable_instance(seed: int, alpha_of, m_range=(6, 51), k_range=(2, 6),
                            d_range=(2, 11), margin: float = 0.7):
    """Random points verified to satisfy the radius-gap condition at the
    separation factor ``alpha_of(m, smallest_cluster_size)``."""
    rng = np.random.default_rng(seed)
    for _ in range(50):
        m = int(rng.integers(*m_range))
        k = int(rng.integers(*k_range))
        if k > m // 2:
            continue
        d = int(rng.integers(*d_range))
        sizes = random_sizes(rng, m, k)
        alpha = alpha_of(m, int(sizes.min()))
        centers = spread_centers(rng, k, d)
        pts, labels = scatter_in_balls(rng, centers, sizes, margin * 10.0 / alpha)
        if check_separability(pts, labels, alpha).holds:
            return pts, labels, alpha
    raise AssertionError("failed to construct a separable instance")


def make_cc_instance(seed: int, **kw):
    return make_separable_instance(seed, cc_alpha, **kw)


def make_km_instance(seed: int, c_range=(2.0, 8.0), **kw):
    rng = np.random.default_rng(seed ^ 0x5EED)
    c = float(rng.uniform(*c_range))
    pts, labels, alpha = make_separable_instance(
        seed, lambda m, s: km_alpha(m, s, c), **kw)
    return pts, labels, alpha, c


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
