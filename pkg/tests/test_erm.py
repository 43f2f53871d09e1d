import numpy as np
import pytest

from oneshotcl import (ConfigError, LossSpec, SgdConfig, eval_loss, grad, project_ball,
                       solve_erm_exact, solve_erm_sgd, strong_convexity)
from oneshotcl.data import UserShard
from oneshotcl.rng import substream


def quad_shard(rng, n=60, d=5, noise=1.0, u=None, sparse=None):
    u = rng.uniform(1, 2, size=d) if u is None else np.asarray(u, dtype=float)
    x = rng.standard_normal((n, d))
    if sparse is not None:
        mask = np.zeros((n, d), dtype=bool)
        for i in range(n):
            mask[i, rng.choice(d, size=sparse, replace=False)] = True
        x = np.where(mask, x, 0.0)
    y = x @ u + noise * rng.standard_normal(n)
    return UserShard(features=x, labels=y, user_id=0, cluster_id=0), u


# --- eval_loss -------------------------------------------------------------

def test_loss_zero_at_exact_fit(rng):
    shard, u = quad_shard(rng, noise=0.0)
    assert eval_loss(LossSpec(kind="quadratic"), u, shard.features, shard.labels) < 1e-20


def test_logistic_loss_at_zero_is_log2(rng):
    x = rng.normal(size=(30, 4))
    y = np.where(rng.random(30) < 0.5, 1.0, -1.0)
    val = eval_loss(LossSpec(kind="logistic"), np.zeros(4), x, y)
    assert val == pytest.approx(np.log(2), abs=1e-12)


def test_quadratic_single_sample_value():
    loss = LossSpec(kind="quadratic")
    assert eval_loss(loss, np.array([1.0]), np.array([[1.0]]), np.array([3.0])) == 2.0


def test_loss_dimension_mismatch(rng):
    with pytest.raises(ConfigError, match="dim"):
        eval_loss(LossSpec(kind="quadratic"), np.zeros(3), rng.normal(size=(4, 2)),
                  np.zeros(4))


# --- gradients --------------------------------------------------------------

def test_grad_single_sample_value():
    g = grad(LossSpec(kind="quadratic"), np.array([1.0]), np.array([[1.0]]),
             np.array([3.0]))
    assert np.allclose(g, [-2.0])


def test_grad_empty_batch():
    with pytest.raises(ConfigError, match="empty"):
        grad(LossSpec(kind="quadratic"), np.zeros(2), np.zeros((0, 2)), np.zeros(0))


def central_difference(loss, theta, x, y, h=1e-6):
    out = np.zeros_like(theta)
    for j in range(len(theta)):
        up, dn = theta.copy(), theta.copy()
        up[j] += h
        dn[j] -= h
        out[j] = (eval_loss(loss, up, x, y) - eval_loss(loss, dn, x, y)) / (2 * h)
    return out


@pytest.mark.parametrize("kind,reg,intercept", [
    ("quadratic", 0.0, False), ("quadratic", 0.3, True),
    ("logistic", 0.0, False), ("logistic", 0.01, True),
])
def test_grad_matches_central_differences(rng, kind, reg, intercept):
    loss = LossSpec(kind=kind, reg=reg, has_intercept=intercept)
    for trial in range(5):
        d = int(rng.integers(2, 6))
        n = int(rng.integers(3, 12))
        x = rng.normal(size=(n, d))
        y = x @ rng.normal(size=d) + rng.normal(size=n)
        if kind == "logistic":
            y = np.where(y > 0, 1.0, -1.0)
        theta = rng.normal(size=d + intercept)
        g = grad(loss, theta, x, y)
        fd = central_difference(loss, theta, x, y)
        assert np.linalg.norm(g - fd) <= 1e-5 * (1 + np.linalg.norm(fd))


def test_grad_vanishes_at_exact_solution(rng):
    shard, _ = quad_shard(rng)
    loss = LossSpec(kind="quadratic", reg=0.0)
    model = solve_erm_exact(loss, shard)
    g = grad(loss, model.vector, shard.features, shard.labels)
    assert np.linalg.norm(g) <= 1e-8 * (1 + np.linalg.norm(model.vector))


# --- exact solvers ----------------------------------------------------------

def test_exact_identifiable_line():
    x = np.array([[1.0], [2.0], [3.0]])
    shard = UserShard(features=x, labels=2 * x[:, 0], user_id=0, cluster_id=0)
    model = solve_erm_exact(LossSpec(kind="quadratic"), shard)
    assert model.vector[0] == pytest.approx(2.0, abs=1e-12)


def test_exact_underdetermined_ridge_beats_origin(rng):
    x = rng.normal(size=(3, 8))
    y = rng.normal(size=3)
    shard = UserShard(features=x, labels=y, user_id=0, cluster_id=0)
    loss = LossSpec(kind="quadratic", reg=1e-5)
    model = solve_erm_exact(loss, shard)
    at_model = eval_loss(loss, model.vector, x, y)
    at_zero = eval_loss(loss, np.zeros(8), x, y)
    assert at_model <= at_zero
    # and it is the stationary point of the regularized objective
    g = grad(loss, model.vector, x, y)
    assert np.linalg.norm(g) < 1e-9


def test_exact_quadratic_intercept(rng):
    d = 3
    u = rng.normal(size=d)
    b = 1.7
    x = rng.normal(size=(200, d))
    y = x @ u + b
    shard = UserShard(features=x, labels=y, user_id=0, cluster_id=0)
    model = solve_erm_exact(LossSpec(kind="quadratic", has_intercept=True), shard)
    assert np.allclose(model.vector[:d], u, atol=1e-9)
    assert model.vector[d] == pytest.approx(b, abs=1e-9)


def test_exact_rejects_non_finite(rng):
    x = rng.normal(size=(4, 2))
    x[1, 0] = np.nan
    shard = UserShard(features=x, labels=np.zeros(4), user_id=3, cluster_id=0)
    with pytest.raises(ConfigError, match="non-finite"):
        solve_erm_exact(LossSpec(kind="quadratic"), shard)


def _logistic_gd_oracle(x, y, reg, steps=4000, lr=None):
    """Independent plain gradient descent on the regularized logistic loss."""
    n, d = x.shape
    lr = lr or 4.0 / (np.linalg.norm(x, 2) ** 2 / n + reg)
    w = np.zeros(d)
    for _ in range(steps):
        z = x @ w
        coef = -y / (1.0 + np.exp(y * z))
        w -= lr * (x.T @ coef / n + reg * w)
    return w


def test_logistic_newton_matches_gd_oracle_and_population():
    # pooled synthetic cluster: theta* = [1, -1], identity covariance
    rng = np.random.default_rng(11)
    n = 100_000
    theta_star = np.array([1.0, -1.0])
    x = rng.standard_normal((n, 2))
    p = 1 / (1 + np.exp(-(x @ theta_star)))
    y = np.where(rng.random(n) < p, 1.0, -1.0)
    shard = UserShard(features=x, labels=y, user_id=0, cluster_id=0)
    loss = LossSpec(kind="logistic", reg=1e-5)
    model = solve_erm_exact(loss, shard)
    oracle = _logistic_gd_oracle(x, y, reg=1e-5, steps=2000)
    assert np.linalg.norm(model.vector - oracle) < 1e-3
    assert np.linalg.norm(model.vector - theta_star) < 0.1
    assert model.solve_meta["grad_norm"] <= 1e-8


def test_logistic_projection_only_when_escaping(rng):
    x = rng.normal(size=(6, 3))
    y = np.where(x @ np.array([2.0, -1.0, 0.5]) > 0, 1.0, -1.0)  # separable
    shard = UserShard(features=x, labels=y, user_id=0, cluster_id=0)
    small = solve_erm_exact(LossSpec(kind="logistic", reg=1e-6, radius_r=1.0), shard)
    assert np.linalg.norm(small.vector) <= 1.0 + 1e-9
    assert small.solve_meta.get("projected")
    big = solve_erm_exact(LossSpec(kind="logistic", reg=1.0, radius_r=1e6), shard)
    assert "projected" not in big.solve_meta


# --- the O(1/n) decay of local solutions ------------------------------------

def test_quadratic_erm_error_decays_linearly():
    def median_sq_err(n):
        errs = []
        for seed in range(40):
            rng = np.random.default_rng(1000 + seed)
            shard, u = quad_shard(rng, n=n, d=5)
            model = solve_erm_exact(LossSpec(kind="quadratic"), shard)
            errs.append(np.sum((model.vector - u) ** 2))
        return float(np.median(errs))

    assert median_sq_err(200) <= 0.35 * median_sq_err(50)


# --- projected SGD -----------------------------------------------------------

def test_sgd_close_to_exact_solution(rng):
    shard, _ = quad_shard(rng, n=60, d=4)
    loss = LossSpec(kind="quadratic", radius_r=100.0)
    exact = solve_erm_exact(loss, shard)
    sgd = solve_erm_sgd(loss, shard, SgdConfig(t=30000, batch_size=16, seed=3))
    assert np.linalg.norm(sgd.vector - exact.vector) <= 1e-2


def test_sgd_projection_contract(rng):
    shard, u = quad_shard(rng, n=40, d=4)
    radius = 0.25 * np.linalg.norm(u)  # optimum far outside the ball
    loss = LossSpec(kind="quadratic", radius_r=radius)
    for seed in (0, 1):
        model = solve_erm_sgd(loss, shard, SgdConfig(t=500, batch_size=1, seed=seed))
        assert np.linalg.norm(model.vector) <= radius + 1e-12


def test_sgd_last_iterate_bound_quick(rng):
    """Small-scale version of the last-iterate guarantee; the acceptance suite
    runs the full 100-seed, three-horizon version."""
    shard, u = quad_shard(rng, n=50, d=4)
    radius = 2 * np.linalg.norm(u)
    loss = LossSpec(kind="quadratic", radius_r=radius)
    mu = strong_convexity(loss, shard)
    exact = solve_erm_exact(loss, shard).vector
    gamma = measure_gamma(loss, shard, radius)
    t = 200
    errs = [np.sum((solve_erm_sgd(loss, shard,
                                  SgdConfig(t=t, mu_f=mu, batch_size=1, seed=s)).vector
                    - exact) ** 2)
            for s in range(40)]
    assert np.mean(errs) <= 4 * gamma ** 2 / (mu ** 2 * t)


def measure_gamma(loss, shard, radius, probes=200):
    """Brute-force bound Gamma = sigma + G over sampled boundary points."""
    x, y = shard.features, shard.labels
    rng = substream(977, "gamma-probe")
    thetas = rng.standard_normal((probes, x.shape[1]))
    thetas *= radius / np.linalg.norm(thetas, axis=1, keepdims=True)
    g_max = sigma_max = 0.0
    for theta in thetas:
        full = grad(loss, theta, x, y)
        g_max = max(g_max, np.linalg.norm(full))
        per_sample = (x @ theta - y)[:, None] * x
        sigma_max = max(sigma_max, np.linalg.norm(per_sample - full, axis=1).max())
    return sigma_max + g_max


def test_sgd_rejects_bad_config():
    with pytest.raises(ConfigError):
        SgdConfig(t=0)
    with pytest.raises(ConfigError):
        SgdConfig(t=10, mu_f=-1.0)


# --- projection --------------------------------------------------------------

def test_project_ball_inside():
    assert np.array_equal(project_ball(np.array([3.0, 4.0]), 10.0), [3.0, 4.0])


def test_project_ball_scales_to_radius():
    assert np.allclose(project_ball(np.array([3.0, 4.0]), 1.0), [0.6, 0.8])


def test_project_ball_norm_bound(rng):
    for _ in range(20):
        v = rng.normal(size=6) * rng.uniform(0, 10)
        r = rng.uniform(0.1, 5)
        assert np.linalg.norm(project_ball(v, r)) <= r + 1e-12


# --- strong convexity estimates ----------------------------------------------

def test_strong_convexity_quadratic_matches_eigenvalue(rng):
    shard, _ = quad_shard(rng, n=100, d=4)
    h = shard.features.T @ shard.features / 100
    assert strong_convexity(LossSpec(kind="quadratic"), shard) == pytest.approx(
        np.linalg.eigvalsh(h)[0])


def test_strong_convexity_logistic_is_reg(rng):
    shard, _ = quad_shard(rng, n=20, d=3)
    assert strong_convexity(LossSpec(kind="logistic", reg=0.05), shard) == 0.05


def test_sgd_trace_dump(tmp_path, rng):
    shard, _ = quad_shard(rng, n=30, d=3)
    path = tmp_path / "trace.csv"
    solve_erm_sgd(LossSpec(kind="quadratic"), shard,
                  SgdConfig(t=250, batch_size=4, seed=0),
                  trace_path=path, trace_every=50)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "iteration,step_size,objective"
    assert len(lines) == 1 + 5 + 1  # every 50th step plus the final iterate
    final_obj = float(lines[-1].split(",")[2])
    assert np.isfinite(final_obj)
