import numpy as np
import pytest

from conftest import spread_centers
from oneshotcl import ConvergenceError
from oneshotcl.clustering import (GridSpec, cc_objective, cc_recovery_bounds,
                                  clusterpath_select, convex_cluster, write_path_trace)

FOUR_POINTS = np.array([[0.0], [0.1], [10.0], [10.1]])


def cvxpy_optimum(points: np.ndarray, lam: float) -> float:
    """High-precision reference optimum of the fusion-penalty program."""
    import cvxpy as cp

    m, d = points.shape
    u = cp.Variable((m, d))
    i_idx, j_idx = np.triu_indices(m, k=1)
    objective = (0.5 * cp.sum_squares(points - u)
                 + lam * cp.sum(cp.norm(u[i_idx, :] - u[j_idx, :], axis=1)))
    problem = cp.Problem(cp.Minimize(objective))
    problem.solve(solver=cp.CLARABEL)
    return float(problem.value)


def test_tiny_penalty_gives_singletons(rng):
    pts = rng.normal(size=(9, 3))
    result = convex_cluster(pts, 1e-9)
    assert result.k_prime == 9
    assert np.abs(result.centroids[result.assignment] - pts).max() < 1e-6


def test_huge_penalty_gives_one_cluster(rng):
    pts = rng.normal(size=(9, 3)) * 4
    diameter = max(np.linalg.norm(a - b) for a in pts for b in pts)
    result = convex_cluster(pts, 1e6 * diameter)
    assert result.k_prime == 1
    assert np.allclose(result.centroids[0], pts.mean(axis=0))


def test_four_points_exact_recovery_inside_interval():
    result = convex_cluster(FOUR_POINTS, 1.0)
    assert result.k_prime == 2
    assert result.assignment.tolist() == [0, 0, 1, 1]


def test_four_points_objective_matches_reference():
    ours = convex_cluster(FOUR_POINTS, 1.0).diagnostics["objective"]
    ref = cvxpy_optimum(FOUR_POINTS, 1.0)
    assert abs(ours - ref) <= 1e-4 * abs(ref)


@pytest.mark.parametrize("lam", [0.05, 0.5, 5.0])
def test_small_instance_objective_parity(rng, lam):
    for _ in range(3):
        pts = rng.normal(size=(int(rng.integers(4, 11)), 3)) * 2
        ours = convex_cluster(pts, lam).diagnostics["objective"]
        ref = cvxpy_optimum(pts, lam)
        assert abs(ours - ref) <= 1e-4 * max(1.0, abs(ref))


def test_centroids_match_assignment_means(rng):
    pts = rng.normal(size=(12, 2))
    result = convex_cluster(pts, 0.2)
    for lab in range(result.k_prime):
        members = pts[result.assignment == lab]
        assert np.linalg.norm(result.centroids[lab] - members.mean(axis=0)) < 1e-10


def test_iteration_cap_reports_residuals(rng):
    pts = rng.normal(size=(15, 3))
    with pytest.raises(ConvergenceError, match="residual"):
        convex_cluster(pts, 0.3, max_iter=2)


def test_objective_helper_value():
    pts = np.array([[0.0], [2.0]])
    centers = np.array([[0.5], [1.5]])
    # 0.5*(0.25 + 0.25) + lam*1.0
    assert cc_objective(pts, centers, lam=2.0) == pytest.approx(0.25 + 2.0)


# --- penalty-path selection -----------------------------------------------------

def zero_radius_two_clusters():
    centers = spread_centers(np.random.default_rng(2), 2, 3, gap=8.0)
    return np.repeat(centers, 4, axis=0), np.repeat(np.arange(2), 4)


def test_clusterpath_zero_radius_selects_truth():
    pts, labels = zero_radius_two_clusters()
    lam, result, trace = clusterpath_select(pts, GridSpec(n=8))
    assert result.k_prime == 2
    assert len(set(zip(result.assignment.tolist(), labels.tolist()))) == 2
    verified = [row for row in trace if row[1] == 2]
    assert verified, "the true plateau never appeared on the grid"


def test_clusterpath_degenerate_two_point_grid():
    pts, _ = zero_radius_two_clusters()
    lam_a, result_a, trace = clusterpath_select(pts, GridSpec(n=2))
    lam_b, result_b, _ = clusterpath_select(pts, GridSpec(n=2))
    assert lam_a == lam_b
    assert result_a.k_prime == result_b.k_prime
    assert result_a.k_prime in (1, pts.shape[0])  # one of the two endpoints


def test_clusterpath_trace_csv(tmp_path):
    pts, _ = zero_radius_two_clusters()
    _, _, trace = clusterpath_select(pts, GridSpec(n=6))
    out = tmp_path / "path.csv"
    write_path_trace(out, trace)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "lambda,k,objective,verified"
    assert len(lines) == len(trace) + 1


def test_recovery_bounds_certify_plateau():
    pts, labels = zero_radius_two_clusters()
    lo, hi = cc_recovery_bounds(pts, labels)
    assert lo == 0.0 and hi > 0
    mid = 0.5 * hi
    result = convex_cluster(pts, mid)
    assert result.k_prime == 2
