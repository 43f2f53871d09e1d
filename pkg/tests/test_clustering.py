import itertools

import numpy as np
import pytest

from conftest import make_km_instance, make_separable_instance, scatter_in_balls, spread_centers
from oneshotcl import ConfigError
from oneshotcl.clustering import (cc_recovery_bounds, center_separation,
                                  check_separability, estimate_k, kmeans, kmeans_cost,
                                  kmeanspp_init, lambda_interval, lloyd,
                                  silhouette_score, spectral_kmeans,
                                  spectral_kmeans_part1)
from oneshotcl.clustering.kmeans import _svd_project

FOUR_POINTS = np.array([[0.0], [0.1], [10.0], [10.1]])
FOUR_TRUTH = np.array([0, 0, 1, 1])


def same_partition(a, b) -> bool:
    a, b = np.asarray(a), np.asarray(b)
    return len(set(zip(a.tolist(), b.tolist()))) == len(set(a.tolist())) == len(set(b.tolist()))


# --- separability ------------------------------------------------------------

def test_separability_four_points_holds():
    rep = check_separability(FOUR_POINTS, FOUR_TRUTH, alpha=2.0)
    assert rep.max_radius == pytest.approx(0.05)
    assert rep.min_center_gap == pytest.approx(10.0)
    assert rep.holds


def test_separability_large_alpha_fails():
    rep = check_separability(FOUR_POINTS, FOUR_TRUTH, alpha=300.0)
    assert not rep.holds  # 300 * 0.05 = 15 >= 10


def test_separability_single_cluster():
    rep = check_separability(FOUR_POINTS, np.zeros(4, dtype=int), alpha=2.0)
    assert rep.min_center_gap == np.inf and rep.holds


def test_separability_requires_alpha_above_one():
    with pytest.raises(ConfigError, match="alpha"):
        check_separability(FOUR_POINTS, FOUR_TRUTH, alpha=1.0)


def test_separability_empty_cluster_rejected():
    with pytest.raises(ConfigError, match="empty"):
        check_separability(FOUR_POINTS, np.array([0, 0, 2, 2]), alpha=2.0)


def test_separability_rigid_motion_and_scale_invariance(rng):
    pts, labels, alpha = make_separable_instance(77, lambda m, s: 3.0)
    rep = check_separability(pts, labels, alpha=3.0)
    q, _ = np.linalg.qr(rng.normal(size=(pts.shape[1],) * 2))
    moved = pts @ q.T + rng.normal(size=pts.shape[1])
    rep2 = check_separability(moved, labels, alpha=3.0)
    assert rep2.max_radius == pytest.approx(rep.max_radius)
    assert rep2.min_center_gap == pytest.approx(rep.min_center_gap)
    assert rep2.holds == rep.holds
    for scale in (0.03, 40.0):
        rep3 = check_separability(pts * scale, labels, alpha=3.0)
        assert rep3.holds == rep.holds
        assert rep3.max_radius == pytest.approx(scale * rep.max_radius)


# --- penalty intervals --------------------------------------------------------

def test_lambda_interval_four_points():
    lo, hi = lambda_interval(FOUR_POINTS, FOUR_TRUTH)
    assert lo == pytest.approx(0.025)
    assert hi == pytest.approx(2.5)


def test_lambda_interval_zero_radius():
    pts = np.array([[0.0], [0.0], [5.0], [5.0]])
    lo, hi = lambda_interval(pts, FOUR_TRUTH)
    assert lo == 0.0 and hi > 0


def test_lambda_interval_single_cluster_undefined():
    with pytest.raises(ConfigError, match="single cluster"):
        lambda_interval(FOUR_POINTS, np.zeros(4, dtype=int))


def test_lambda_interval_nonempty_under_fusion_alpha():
    for seed in range(20):
        pts, labels, _ = make_separable_instance(
            seed, lambda m, s: 4.0 * (m - s) / s)
        lo, hi = lambda_interval(pts, labels)
        assert lo < hi


def test_cc_recovery_bounds_four_points():
    lo, hi = cc_recovery_bounds(FOUR_POINTS, FOUR_TRUTH)
    assert lo == pytest.approx(0.05)  # max within-cluster distance / cluster size
    assert hi == pytest.approx(2.5)  # gap / (2m - |a| - |b|)


# --- Lloyd ---------------------------------------------------------------------

def test_lloyd_one_pass_from_true_means():
    pts, labels, alpha = make_separable_instance(5, lambda m, s: 3.0)
    means = np.stack([pts[labels == k].mean(axis=0) for k in range(labels.max() + 1)])
    result = lloyd(pts, means)
    assert same_partition(result.assignment, labels)
    assert result.diagnostics["iterations"] <= 2  # second pass only confirms


def test_lloyd_identical_points_collapse():
    pts = np.ones((5, 2))
    result = lloyd(pts, np.stack([pts[0], pts[0] + 1.0]))
    assert result.k_prime == 1
    assert result.diagnostics["objective"] == 0.0


def test_lloyd_objective_at_least_brute_force(rng):
    for _ in range(10):
        pts = rng.normal(size=(6, 2))
        best = np.inf
        for bits in itertools.product([0, 1], repeat=6):
            cost = 0.0
            for side in (0, 1):
                members = pts[np.array(bits) == side]
                if len(members):
                    cost += ((members - members.mean(axis=0)) ** 2).sum()
            best = min(best, cost)
        init = pts[kmeanspp_like_first_two(rng, pts)]
        result = lloyd(pts, init)
        assert result.diagnostics["objective"] >= best - 1e-12


def kmeanspp_like_first_two(rng, pts):
    i = int(rng.integers(len(pts)))
    j = int(rng.integers(len(pts) - 1))
    return [i, (i + 1 + j) % len(pts)]


def test_lloyd_cost_trace_monotone(rng):
    for trial in range(20):
        pts = rng.normal(size=(30, 3))
        init = pts[rng.choice(30, size=4, replace=False)]
        trace = lloyd(pts, init).diagnostics["cost_trace"]
        assert all(a >= b - 1e-9 for a, b in zip(trace, trace[1:]))


# --- D^2 seeding ---------------------------------------------------------------

def test_kmeanspp_exhaustion_selects_every_point(rng):
    pts = rng.normal(size=(7, 2))
    centers = kmeanspp_init(pts, 7, seed=1)
    assert same_rows(centers, pts)


def same_rows(a, b):
    return sorted(map(tuple, a.tolist())) == sorted(map(tuple, b.tolist()))


def test_kmeanspp_zero_width_groups():
    pts = np.array([[0.0, 0.0], [0.0, 0.0], [9.0, 9.0], [9.0, 9.0]])
    for seed in range(20):
        centers = kmeanspp_init(pts, 2, seed=seed)
        assert not np.array_equal(centers[0], centers[1])  # one from each group


def test_kmeanspp_rejects_k_above_m(rng):
    with pytest.raises(ConfigError, match="exceeds"):
        kmeanspp_init(rng.normal(size=(3, 2)), 4, seed=0)


def test_kmeanspp_second_pick_matches_weights():
    pts = np.array([[0.0], [1.0], [10.0]])
    counts = np.zeros(3)
    trials = 10_000
    for seed in range(trials):
        centers = kmeanspp_init(pts, 2, seed=seed)
        counts[int(np.flatnonzero((pts == centers[1]).all(axis=1))[0])] += 1
    # analytic marginal of the second pick: average the D^2 weights over the
    # uniform first pick
    analytic = np.zeros(3)
    for first in range(3):
        d2 = (pts[:, 0] - pts[first, 0]) ** 2
        analytic += d2 / d2.sum() / 3
    tv = 0.5 * np.abs(counts / trials - analytic).sum()
    assert tv <= 0.02


# --- spectral variant -----------------------------------------------------------

def test_spectral_recovers_separable_instances():
    for seed in range(25):
        pts, labels, alpha, c = make_km_instance(seed)
        k = int(labels.max()) + 1
        result = spectral_kmeans(pts, k, seed=seed)
        assert same_partition(result.assignment, labels)


def test_spectral_single_cluster_is_grand_mean(rng):
    pts = rng.normal(size=(12, 3))
    result = spectral_kmeans(pts, 1, seed=0)
    assert result.k_prime == 1
    assert np.allclose(result.centroids[0], pts.mean(axis=0))


def test_svd_projection_lossless_on_low_rank(rng):
    basis = rng.normal(size=(2, 6))
    pts = rng.normal(size=(15, 2)) @ basis  # exactly rank 2
    assert np.abs(_svd_project(pts, 2) - pts).max() < 1e-8


def test_part1_matches_full_on_zero_radius_clusters():
    centers = spread_centers(np.random.default_rng(4), 3, 4, gap=8.0)
    pts = np.repeat(centers, 5, axis=0)
    labels = np.repeat(np.arange(3), 5)
    part1 = spectral_kmeans_part1(pts, 3, seed=9)
    full = spectral_kmeans(pts, 3, seed=9)
    assert same_partition(part1.assignment, full.assignment)
    assert same_partition(part1.assignment, labels)


# --- center separation -----------------------------------------------------------

def test_center_separation_zero_radius_any_c():
    pts = np.array([[0.0], [0.0], [7.0], [7.0]])
    rep = center_separation(pts, FOUR_TRUTH, c=1e9)
    assert rep.holds and rep.c_max == np.inf


def test_center_separation_four_points_by_hand():
    # residuals are +-0.05, so ||A - C||_F = 0.1 and the rank-1 spectral norm
    # matches it; Delta_k = min(sqrt(2)*0.1, 0.1)/sqrt(2) = 0.1/sqrt(2)
    rep = center_separation(FOUR_POINTS, FOUR_TRUTH, c=10.0)
    delta = 0.1 / np.sqrt(2)
    assert np.allclose(rep.deltas, [delta, delta])
    assert rep.holds == (10.0 * 2 * delta <= 10.0)
    assert rep.c_max == pytest.approx(10.0 / (2 * delta))


def test_radius_separation_implies_center_separation():
    # the provable implication carries sqrt(|smallest cluster|): the residual
    # bound ||A - C||_F <= sqrt(m) * max_radius gives
    # Delta_k <= sqrt(m / |C_(K)|) * max_radius
    for seed in range(20):
        rng = np.random.default_rng(3000 + seed)
        c = float(rng.uniform(1.0, 5.0))
        pts, labels, alpha = make_separable_instance(
            seed, lambda m, s: 2.0 * c * np.sqrt(m) / np.sqrt(s))
        assert center_separation(pts, labels, c).holds


# --- picking K --------------------------------------------------------------------

def zero_radius_blobs(k=3, per=6, d=4, gap=9.0, seed=0):
    centers = spread_centers(np.random.default_rng(seed), k, d, gap=gap)
    return np.repeat(centers, per, axis=0), np.repeat(np.arange(k), per)


def test_estimate_k_silhouette_zero_radius():
    pts, _ = zero_radius_blobs()
    assert estimate_k(pts, k_max=6, metric="silhouette", seed=1) == 3


def test_estimate_k_elbow_zero_radius():
    pts, _ = zero_radius_blobs()
    assert estimate_k(pts, k_max=6, metric="elbow", seed=1) == 3


def test_estimate_k_elbow_single_blob_no_elbow():
    picks = []
    for seed in range(20):
        pts = np.random.default_rng(seed).normal(size=(80, 16))
        picks.append(estimate_k(pts, k_max=6, metric="elbow",
                                elbow_threshold=0.1, seed=seed))
    assert set(picks) <= {1, 2}
    assert max(set(picks), key=picks.count) == 1  # frozen modal answer


def test_estimate_k_silhouette_two_separable():
    pts = np.concatenate([np.zeros((5, 2)), np.full((5, 2), 6.0)])
    assert estimate_k(pts, k_max=2, metric="silhouette", seed=0) == 2


def test_estimate_k_silhouette_needs_two():
    with pytest.raises(ConfigError, match="k_max"):
        estimate_k(np.zeros((4, 1)), k_max=1, metric="silhouette")


def test_silhouette_perfect_clusters():
    pts, labels = zero_radius_blobs()
    assert silhouette_score(pts, labels) == pytest.approx(1.0)


# --- shared result invariants ------------------------------------------------------

def test_centroids_are_means_of_assignment(rng):
    pts = rng.normal(size=(40, 3))
    result = kmeans(pts, 4, seed=2)
    for lab in range(result.k_prime):
        members = pts[result.assignment == lab]
        assert np.linalg.norm(result.centroids[lab] - members.mean(axis=0)) < 1e-10


def test_kmeans_cost_consistent(rng):
    pts = rng.normal(size=(25, 2))
    result = kmeans(pts, 3, seed=0)
    assert result.diagnostics["objective"] == pytest.approx(
        kmeans_cost(pts, result.centroids))
