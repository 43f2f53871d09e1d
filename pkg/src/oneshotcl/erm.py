"""Losses and local solvers: exact empirical risk minimization and projected SGD.

Two tasks are supported: quadratic (linear regression, per-sample loss
0.5*(y - <x, w>)^2) and l2-regularized logistic (per-sample loss
log(1 + exp(-y*(<x, w> + b))) + 0.5*reg*||w||^2).  The regularizer and the
norm-ball constraint apply to the weights only, never to the intercept.

A model is handled as a flat parameter vector: the d weights, followed by
the intercept when the loss has one.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import UserShard
from .errors import ConfigError
from .rng import substream


@dataclass(frozen=True)
class LossSpec:
    """The learning task plus its parameter-space metadata."""

    kind: str  # "quadratic" | "logistic"
    reg: float = 0.0
    has_intercept: bool = False
    radius_r: float = np.inf

    def __post_init__(self):
        if self.kind not in ("quadratic", "logistic"):
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if self.reg < 0:
            raise ConfigError(f"reg must be nonnegative, got {self.reg}")
        if not self.radius_r > 0:
            raise ConfigError(f"radius_r must be positive, got {self.radius_r}")

    def param_dim(self, d: int) -> int:
        return d + 1 if self.has_intercept else d


@dataclass
class LocalModel:
    """One user's trained parameter vector, the point fed to clustering."""

    vector: np.ndarray  # weights, then intercept if present
    user_id: int
    solve_meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SgdConfig:
    """Projected-SGD schedule: T steps of size 1/(mu_f * t)."""

    t: int
    mu_f: float | None = None  # None: estimate from the data (min over shards)
    batch_size: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.t < 1:
            raise ConfigError(f"t must be >= 1, got {self.t}")
        if self.mu_f is not None and not self.mu_f > 0:
            raise ConfigError(f"mu_f must be positive, got {self.mu_f}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


def split_params(loss: LossSpec, vector: np.ndarray) -> tuple[np.ndarray, float]:
    if loss.has_intercept:
        return vector[:-1], float(vector[-1])
    return vector, 0.0


def project_ball(v: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto the ball of the given radius."""
    if not radius > 0:
        raise ConfigError(f"radius must be positive, got {radius}")
    norm = float(np.linalg.norm(v))
    if norm <= radius:
        return v
    return v * (radius / norm)


def _project_model(loss: LossSpec, vector: np.ndarray) -> np.ndarray:
    """Ball constraint on the weight block only; intercept is unconstrained."""
    if not np.isfinite(loss.radius_r):
        return vector
    w, b = split_params(loss, vector)
    w = project_ball(w, loss.radius_r)
    return np.append(w, b) if loss.has_intercept else w


def eval_loss(loss: LossSpec, vector: np.ndarray, features: np.ndarray,
              labels: np.ndarray) -> float:
    """Mean per-sample loss plus the regularizer."""
    w, b = split_params(loss, np.asarray(vector, dtype=float))
    if features.shape[1] != w.shape[0]:
        raise ConfigError(f"feature dim {features.shape[1]} != weight dim {w.shape[0]}")
    z = features @ w + b
    if loss.kind == "quadratic":
        value = 0.5 * np.mean((labels - z) ** 2)
    else:
        value = np.mean(np.logaddexp(0.0, -labels * z))
    return float(value + 0.5 * loss.reg * (w @ w))


def grad(loss: LossSpec, vector: np.ndarray, features: np.ndarray,
         labels: np.ndarray) -> np.ndarray:
    """Exact gradient of the batch-mean loss (plus regularizer)."""
    if features.shape[0] == 0:
        raise ConfigError("empty batch")
    w, b = split_params(loss, np.asarray(vector, dtype=float))
    z = features @ w + b
    if loss.kind == "quadratic":
        resid = z - labels  # d/dw of 0.5*(y - z)^2
        gw = features.T @ resid / len(labels) + loss.reg * w
        gb = float(np.mean(resid))
    else:
        coef = -labels / (1.0 + np.exp(labels * z))  # -y * sigmoid(-y z)
        gw = features.T @ coef / len(labels) + loss.reg * w
        gb = float(np.mean(coef))
    return np.append(gw, gb) if loss.has_intercept else gw


def strong_convexity(loss: LossSpec, shard: UserShard) -> float:
    """Strong-convexity constant used by the SGD step rule.

    Quadratic: smallest eigenvalue of the empirical second-moment matrix
    (intercept column included when present) plus reg.  Logistic: reg, the
    only strong-convexity source that holds everywhere.
    """
    if loss.kind == "logistic":
        return loss.reg
    x = shard.features
    if loss.has_intercept:
        x = np.hstack([x, np.ones((shard.n, 1))])
    h = x.T @ x / shard.n
    if loss.reg > 0:
        h = h + loss.reg * np.eye(h.shape[0])
        if loss.has_intercept:
            h[-1, -1] -= loss.reg
    return float(np.linalg.eigvalsh(h)[0])


def solve_erm_exact(loss: LossSpec, shard: UserShard, gtol: float = 1e-9,
                    max_iter: int = 100) -> LocalModel:
    """Minimize the shard's empirical loss.

    Quadratic: regularized normal equations, minimum-norm solution when
    rank-deficient.  Logistic: damped Newton to gradient norm <= gtol.
    The result is projected onto the weight ball only if it escapes it.
    """
    x, y = shard.features, shard.labels
    if shard.n == 0:
        raise ConfigError("empty shard")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ConfigError(f"user {shard.user_id}: non-finite data")
    if loss.kind == "quadratic":
        vector, meta = _solve_quadratic(loss, x, y)
    else:
        vector, meta = _solve_logistic(loss, x, y, gtol=gtol, max_iter=max_iter)
    w, _ = split_params(loss, vector)
    if np.linalg.norm(w) > loss.radius_r:
        vector = _project_model(loss, vector)
        meta["projected"] = True
    meta["final_objective"] = eval_loss(loss, vector, x, y)
    return LocalModel(vector=vector, user_id=shard.user_id, solve_meta=meta)


def _solve_quadratic(loss: LossSpec, x: np.ndarray, y: np.ndarray):
    d = x.shape[1]
    xa = np.hstack([x, np.ones((x.shape[0], 1))]) if loss.has_intercept else x
    p = xa.shape[1]
    if loss.reg > 0:
        gram = xa.T @ xa / x.shape[0] + loss.reg * np.eye(p)
        if loss.has_intercept:
            gram[d, d] -= loss.reg
        vector = np.linalg.solve(gram, xa.T @ y / x.shape[0])
    else:
        vector = np.linalg.lstsq(xa, y, rcond=None)[0]  # minimum-norm when rank-deficient
    return vector, {"iterations": 1, "method": "normal_equations"}


def _solve_logistic(loss: LossSpec, x: np.ndarray, y: np.ndarray, gtol: float,
                    max_iter: int):
    n, d = x.shape
    xa = np.hstack([x, np.ones((n, 1))]) if loss.has_intercept else x
    p = xa.shape[1]
    reg_diag = np.full(p, loss.reg)
    if loss.has_intercept:
        reg_diag[-1] = 0.0

    def value_grad(v):
        z = xa @ v
        val = float(np.mean(np.logaddexp(0.0, -y * z)) + 0.5 * np.sum(reg_diag * v * v))
        coef = -y / (1.0 + np.exp(y * z))
        g = xa.T @ coef / n + reg_diag * v
        return val, g, z

    v = np.zeros(p)
    val, g, z = value_grad(v)
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= gtol:
            break
        sig = 1.0 / (1.0 + np.exp(-z))
        weights = np.clip(sig * (1.0 - sig), 1e-12, None)
        hess = (xa * weights[:, None]).T @ xa / n + np.diag(reg_diag)
        try:
            step = np.linalg.solve(hess, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, g, rcond=None)[0]
        # Backtracking Armijo line search on the Newton direction.
        t = 1.0
        for _ in range(60):
            cand = v - t * step
            cand_val, cand_g, cand_z = value_grad(cand)
            if cand_val <= val - 1e-4 * t * float(g @ step):
                break
            t *= 0.5
        v, val, g, z = cand, cand_val, cand_g, cand_z
    return v, {"iterations": it, "method": "newton",
               "grad_norm": float(np.linalg.norm(g))}


def solve_erm_sgd(loss: LossSpec, shard: UserShard, cfg: SgdConfig,
                  trace_path=None, trace_every: int = 100) -> LocalModel:
    """Projected SGD from 0 with step 1/(mu_f * t); returns the last iterate.

    Minibatches are sampled uniformly with replacement from the user's own
    substream, so per-user solves are order-independent.  With ``trace_path``
    set, every `trace_every`-th iterate is logged to a CSV for debugging.
    """
    if cfg.mu_f is None:
        mu = strong_convexity(loss, shard)
        if not mu > 0:
            raise ConfigError("cannot estimate a positive mu_f from this shard; set it")
    else:
        mu = cfg.mu_f
    x, y = shard.features, shard.labels
    rng = substream(cfg.seed, "sgd", shard.user_id)
    idx = rng.integers(0, shard.n, size=(cfg.t, cfg.batch_size))
    theta = np.zeros(loss.param_dim(x.shape[1]))
    trace = [] if trace_path is not None else None
    for t in range(1, cfg.t + 1):
        rows = idx[t - 1]
        g = grad(loss, theta, x[rows], y[rows])
        theta = _project_model(loss, theta - g / (mu * t))
        if trace is not None and (t % trace_every == 0 or t == cfg.t):
            trace.append((t, 1.0 / (mu * t), eval_loss(loss, theta, x, y)))
    if trace is not None:
        _write_sgd_trace(trace_path, trace)
    return LocalModel(vector=theta, user_id=shard.user_id,
                      solve_meta={"iterations": cfg.t, "method": "projected_sgd",
                                  "mu_f": mu,
                                  "final_objective": eval_loss(loss, theta, x, y)})


def _write_sgd_trace(path, trace) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "step_size", "objective"])
        for t, eta, obj in trace:
            writer.writerow([t, repr(eta), repr(obj)])


def default_radius(true_models: np.ndarray) -> float:
    """Ball radius that keeps all true models interior: twice the largest norm."""
    return 2.0 * float(np.max(np.linalg.norm(np.asarray(true_models), axis=1)))
