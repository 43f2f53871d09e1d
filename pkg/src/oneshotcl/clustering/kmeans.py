"""Center-based clustering: Lloyd iterations, D^2-weighted seeding, spectral variant.

The spectral variant projects the points onto the span of the top-K right
singular vectors, seeds centers there with restarted D^2 sampling, refines
them on core points (points at most a third as far from their own center
as from any other), then runs Lloyd on the original points to convergence.
"""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from ..rng import substream
from .base import ClusteringResult, as_points, compact_labels, make_result


def _dist2(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def kmeans_cost(points: np.ndarray, centers: np.ndarray) -> float:
    return float(_dist2(points, centers).min(axis=1).sum())


def lloyd(points, init_centers, max_iter: int = 300) -> ClusteringResult:
    """Alternate nearest-center assignment and mean updates to a fixpoint.

    Ties go to the lowest center index.  A center left with no points is
    re-seeded to the point farthest from it, which keeps the cost
    non-increasing.  Always returns; `iterations` counts assignment passes.
    """
    pts = as_points(points)
    centers = np.array(init_centers, dtype=float)
    if centers.ndim != 2 or centers.shape[0] < 1:
        raise ConfigError("need at least one initial center")
    if max_iter < 1:
        raise ConfigError(f"max_iter must be >= 1, got {max_iter}")
    k = centers.shape[0]
    prev = None
    trace = []
    assign = np.zeros(pts.shape[0], dtype=int)
    for it in range(1, max_iter + 1):
        d2 = _dist2(pts, centers)
        assign = d2.argmin(axis=1)
        # Re-seed empty centers at the point currently farthest from them.
        taken: list[int] = []
        for lab in range(k):
            if not (assign == lab).any():
                order = np.argsort(-d2[:, lab], kind="stable")
                pick = next(int(i) for i in order if int(i) not in taken)
                taken.append(pick)
                centers[lab] = pts[pick]
        if taken:
            d2 = _dist2(pts, centers)
            assign = d2.argmin(axis=1)
        trace.append(float(d2.min(axis=1).sum()))
        if prev is not None and np.array_equal(assign, prev):
            break
        prev = assign.copy()
        for lab in range(k):
            members = pts[assign == lab]
            if len(members):
                centers[lab] = members.sum(axis=0) / len(members)
    result = make_result(pts, assign, {"algorithm": "lloyd", "iterations": it,
                                       "cost_trace": trace})
    result.diagnostics["objective"] = kmeans_cost(pts, result.centroids)
    return result


def kmeanspp_init(points, k: int, seed) -> np.ndarray:
    """D^2-weighted seeding: first center uniform, then proportional to the
    squared distance from the nearest already-chosen center.

    Returns k centers with distinct point indices; deterministic given seed.
    """
    pts = as_points(points)
    m = pts.shape[0]
    if k > m:
        raise ConfigError(f"k={k} exceeds number of points m={m}")
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "kmeanspp")
    chosen = [int(rng.integers(m))]
    d2 = ((pts - pts[chosen[0]]) ** 2).sum(axis=1)
    while len(chosen) < k:
        total = d2.sum()
        if total <= 0:
            # All remaining mass sits on already-chosen points (duplicates);
            # fall back to a uniform draw among unchosen indices.
            free = np.setdiff1d(np.arange(m), chosen)
            nxt = int(free[rng.integers(len(free))])
        else:
            nxt = int(rng.choice(m, p=d2 / total))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((pts - pts[nxt]) ** 2).sum(axis=1))
    return pts[chosen].copy()


def kmeans(points, k: int, seed: int = 0, restarts: int = 10,
           max_iter: int = 300) -> ClusteringResult:
    """Best of `restarts` runs of D^2 seeding + Lloyd, by final cost."""
    pts = as_points(points)
    best = None
    for r in range(restarts):
        rng = substream(seed, "kmeans", k, r)
        init = kmeanspp_init(pts, k, rng)
        result = lloyd(pts, init, max_iter=max_iter)
        if best is None or result.diagnostics["objective"] < best.diagnostics["objective"]:
            result.diagnostics["restart"] = r
            best = result
    best.diagnostics["algorithm"] = "kmeans_pp"
    best.diagnostics["restarts"] = restarts
    return best


def _svd_project(points: np.ndarray, k: int) -> np.ndarray:
    _, _, vt = np.linalg.svd(points, full_matrices=False)
    top = vt[:min(k, vt.shape[0])]
    return points @ top.T @ top


def spectral_kmeans(points, k: int, seed: int = 0, restarts: int = 25,
                    max_iter: int = 300) -> ClusteringResult:
    """Three stages: seed on the rank-K projection, refine on core points,
    then Lloyd on the original points until convergence."""
    pts = as_points(points)
    if k > pts.shape[0]:
        raise ConfigError(f"k={k} exceeds number of points m={pts.shape[0]}")
    part1 = _spectral_part1(pts, k, seed, restarts, max_iter)
    projected, centers = part1["projected"], part1["centers"]

    # Core points: at most a third as far from their own center as from any other.
    d = np.sqrt(_dist2(projected, centers))
    for lab in range(k):
        others = np.delete(d, lab, axis=1)
        core = d[:, lab] <= others.min(axis=1) / 3.0 if k > 1 else np.ones(len(d), bool)
        if core.any():
            centers[lab] = projected[core].mean(axis=0)

    result = lloyd(pts, centers, max_iter=max_iter)
    result.diagnostics.update({"algorithm": "spectral_kmeans",
                               "part1_objective": part1["objective"],
                               "restarts": restarts})
    return result


def spectral_kmeans_part1(points, k: int, seed: int = 0, restarts: int = 25,
                          max_iter: int = 300) -> ClusteringResult:
    """Projection + seeding stage only; no refinement on the original points."""
    pts = as_points(points)
    if k > pts.shape[0]:
        raise ConfigError(f"k={k} exceeds number of points m={pts.shape[0]}")
    part1 = _spectral_part1(pts, k, seed, restarts, max_iter)
    result = make_result(pts, part1["assignment"],
                         {"algorithm": "spectral_kmeans_part1",
                          "objective": part1["objective"], "restarts": restarts})
    return result


def _spectral_part1(pts: np.ndarray, k: int, seed: int, restarts: int,
                    max_iter: int) -> dict:
    projected = _svd_project(pts, k)
    best = None
    for r in range(restarts):
        rng = substream(seed, "spectral", k, r)
        init = kmeanspp_init(projected, k, rng)
        result = lloyd(projected, init, max_iter=max_iter)
        if best is None or result.diagnostics["objective"] < best.diagnostics["objective"]:
            best = result
    centers = np.zeros((k, pts.shape[1]))
    # Keep exactly k working centers even if a label came back empty.
    produced = best.centroids
    lab_of = {}
    for lab in range(best.k_prime):
        lab_of[lab] = lab
        centers[lab] = produced[lab]
    for lab in range(best.k_prime, k):
        centers[lab] = produced[lab % best.k_prime]
    return {"projected": projected, "centers": centers,
            "assignment": best.assignment, "objective": best.diagnostics["objective"]}


def silhouette_score(points, labels) -> float:
    """Mean silhouette over points; singleton clusters score 0."""
    pts = as_points(points)
    labels = np.asarray(labels, dtype=int)
    k = int(labels.max()) + 1
    if k < 2:
        raise ConfigError("silhouette needs at least two clusters")
    m = pts.shape[0]
    dist = np.sqrt(_dist2(pts, pts))
    sizes = np.bincount(labels, minlength=k)
    scores = np.zeros(m)
    cluster_sum = np.zeros((m, k))
    for lab in range(k):
        cluster_sum[:, lab] = dist[:, labels == lab].sum(axis=1)
    for i in range(m):
        lab = labels[i]
        if sizes[lab] <= 1:
            continue  # silhouette of a singleton is 0 by convention
        a = cluster_sum[i, lab] / (sizes[lab] - 1)
        b = np.inf
        for other in range(k):
            if other != lab and sizes[other] > 0:
                b = min(b, cluster_sum[i, other] / sizes[other])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(scores.mean())


def estimate_k(points, k_max: int, metric: str = "silhouette", seed: int = 0,
               elbow_threshold: float = 0.1, restarts: int = 5) -> int:
    """Pick a cluster count by sweeping K-means over K = 1..k_max.

    elbow: the smallest K whose marginal cost decrease (going to K+1) falls
    below threshold times the K=1 -> 2 drop; if no K qualifies there is no
    elbow and 1 is returned.  silhouette: the K in 2..k_max with the highest
    mean silhouette (ties to the lowest K).
    """
    pts = as_points(points)
    m = pts.shape[0]
    if not 1 <= k_max <= m:
        raise ConfigError(f"k_max must be in [1, m={m}], got {k_max}")
    if metric == "elbow":
        if k_max == 1:
            return 1
        costs = [kmeans(pts, kk, seed=seed, restarts=restarts).diagnostics["objective"]
                 for kk in range(1, k_max + 1)]
        base = costs[0] - costs[1]
        if base <= 0:
            return 1
        for kk in range(1, k_max):
            if costs[kk - 1] - costs[kk] < elbow_threshold * base:
                return kk
        return 1
    if metric == "silhouette":
        if k_max < 2:
            raise ConfigError("silhouette needs k_max >= 2")
        best_k, best_score = 2, -np.inf
        for kk in range(2, k_max + 1):
            result = kmeans(pts, kk, seed=seed, restarts=restarts)
            if result.k_prime < 2:
                continue
            score = silhouette_score(pts, result.assignment)
            if score > best_score:
                best_k, best_score = kk, score
        return best_k
    raise ConfigError(f"unknown metric {metric!r}")
