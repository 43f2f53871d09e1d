"""The one-shot protocol and every comparison baseline.

One-shot pipeline: each user minimizes its local empirical loss (exactly or
by projected SGD), the server clusters the m resulting parameter vectors,
averages them within each produced cluster, and sends each user its
cluster's average.  Exactly one user->server and one server->user transfer
happens per user.

Baselines: averaging over the true clusters, pooled training per true
cluster, purely local models, naive global averaging, and the iterative
cluster-identity/averaging scheme (multi-round) for comparison.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .clustering import (ClusteringResult, GridSpec, cc_recovery_bounds,
                         clusterpath_select, convex_cluster, estimate_k, kmeans,
                         make_result, spectral_kmeans, spectral_kmeans_part1)
from .data import FederatedDataset, UserShard, true_min_separation
from .erm import (LocalModel, LossSpec, SgdConfig, solve_erm_exact,
                  solve_erm_sgd, strong_convexity)
from .errors import ConfigError
from .rng import substream

logger = logging.getLogger(__name__)

BASELINES = ("oracle_avg", "cluster_oracle", "local_erm", "naive_avg")


@dataclass(frozen=True)
class ClusterAlgoSpec:
    """Which server-side clustering to run, with its hyperparameters."""

    algo: str  # "convex_cc" | "kmeans_pp" | "kmeans_spectral" | "kmeans_estimated"
    lam: float | None = None
    lambda_policy: str = "fixed"  # "fixed" | "oracle_interval" | "clusterpath"
    k: int | None = None
    k_max: int | None = None
    metric: str = "silhouette"
    elbow_threshold: float = 0.1
    restarts: int | None = None
    tol: float = 1e-6
    grid: GridSpec = GridSpec()
    part1_only: bool = False

    def validate(self) -> None:
        if self.algo == "convex_cc":
            if self.lambda_policy == "fixed" and self.lam is None:
                raise ConfigError("convex_cc with fixed policy needs lam")
            if self.lambda_policy not in ("fixed", "oracle_interval", "clusterpath"):
                raise ConfigError(f"unknown lambda_policy {self.lambda_policy!r}")
        elif self.algo in ("kmeans_pp", "kmeans_spectral"):
            if self.k is None:
                raise ConfigError(f"{self.algo} needs k")
        elif self.algo == "kmeans_estimated":
            if self.metric not in ("elbow", "silhouette"):
                raise ConfigError(f"unknown metric {self.metric!r}")
        else:
            raise ConfigError(f"unknown clustering algo {self.algo!r}")
        if self.part1_only and self.algo != "kmeans_spectral":
            raise ConfigError("part1_only applies only to kmeans_spectral")


@dataclass(frozen=True)
class ProtocolConfig:
    clustering: ClusterAlgoSpec
    erm_mode: str = "exact"  # "exact" | "sgd"
    sgd: SgdConfig | None = None
    seed: int = 0

    def validate(self) -> None:
        self.clustering.validate()
        if self.erm_mode not in ("exact", "sgd"):
            raise ConfigError(f"unknown erm_mode {self.erm_mode!r}")
        if self.erm_mode == "sgd" and self.sgd is None:
            raise ConfigError("erm_mode='sgd' needs an SgdConfig")


@dataclass
class ProtocolOutput:
    """What every user ends up holding, plus server-side diagnostics."""

    per_user_models: np.ndarray  # (m, p), row i is user i's final model
    server_clustering: ClusteringResult | None
    local_models: list[LocalModel] | None
    comm_rounds: int
    eps_hat: float | None = None  # max ||sgd iterate - exact minimizer|| (diagnostic mode)
    method: str = ""
    extras: dict = field(default_factory=dict)


def _mean_rows(vectors: np.ndarray, members: np.ndarray) -> np.ndarray:
    """Mean over the given rows, summed in ascending index order."""
    members = np.sort(np.asarray(members))
    return vectors[members].sum(axis=0) / len(members)


def _aggregate(vectors: np.ndarray, assignment: np.ndarray) -> np.ndarray:
    out = np.empty_like(vectors)
    for lab in range(int(assignment.max()) + 1):
        members = np.flatnonzero(assignment == lab)
        out[members] = _mean_rows(vectors, members)
    return out


def solve_all_local(data: FederatedDataset, loss: LossSpec, erm_mode: str = "exact",
                    sgd: SgdConfig | None = None) -> list[LocalModel]:
    """Every user's local solve; order follows user ids.  Pure given inputs."""
    if erm_mode == "exact":
        return [solve_erm_exact(loss, shard) for shard in data.shards]
    if sgd.mu_f is None:
        mu = min(strong_convexity(loss, shard) for shard in data.shards)
        if not mu > 0:
            raise ConfigError("cannot estimate a positive mu_f; set SgdConfig.mu_f")
        sgd = SgdConfig(t=sgd.t, mu_f=mu, batch_size=sgd.batch_size, seed=sgd.seed)
    return [solve_erm_sgd(loss, shard, sgd) for shard in data.shards]


def _cluster_models(vectors: np.ndarray, data: FederatedDataset,
                    cfg: ProtocolConfig) -> ClusteringResult:
    spec = cfg.clustering
    if spec.algo == "convex_cc":
        if spec.lambda_policy == "fixed":
            lam = spec.lam
        elif spec.lambda_policy == "oracle_interval":
            # Semi-oracle selection used by the synthetic experiments: the
            # certifying penalty interval of the ground-truth grouping of the
            # local models; the upper endpoint when the interval is empty.
            lo, hi = cc_recovery_bounds(vectors, data.true_assignment)
            if lo < hi:
                lam = lo + (hi - lo) * float(substream(cfg.seed, "cc-lambda").random())
            else:
                lam = hi
        else:
            lam, result, trace = clusterpath_select(vectors, grid=spec.grid, tol=spec.tol)
            result.diagnostics["path_trace"] = trace
            return result
        return convex_cluster(vectors, lam, tol=spec.tol)
    if spec.algo == "kmeans_pp":
        return kmeans(vectors, spec.k, seed=cfg.seed, restarts=spec.restarts or 10)
    if spec.algo == "kmeans_spectral":
        fn = spectral_kmeans_part1 if spec.part1_only else spectral_kmeans
        return fn(vectors, spec.k, seed=cfg.seed, restarts=spec.restarts or 25)
    if spec.algo == "kmeans_estimated":
        k_max = spec.k_max or vectors.shape[0]
        k_hat = estimate_k(vectors, k_max, metric=spec.metric, seed=cfg.seed,
                           elbow_threshold=spec.elbow_threshold)
        result = kmeans(vectors, k_hat, seed=cfg.seed, restarts=spec.restarts or 10)
        result.diagnostics["estimated_k"] = k_hat
        return result
    raise ConfigError(f"unknown clustering algo {spec.algo!r}")


def run_one_shot(data: FederatedDataset, loss: LossSpec, cfg: ProtocolConfig,
                 diagnostics: bool = False) -> ProtocolOutput:
    """Local solves, one clustering pass, cluster-wise averaging, one send-back.

    With ``diagnostics`` and SGD local solves, exact minimizers are computed
    alongside to report the achieved solve precision ``eps_hat``.
    """
    cfg.validate()
    models = solve_all_local(data, loss, cfg.erm_mode, cfg.sgd)
    vectors = np.stack([model.vector for model in models])
    eps_hat = None
    if diagnostics and cfg.erm_mode == "sgd":
        exact = solve_all_local(data, loss, "exact")
        eps_hat = float(max(np.linalg.norm(sgd_m.vector - ex.vector)
                            for sgd_m, ex in zip(models, exact)))
    clustering = _cluster_models(vectors, data, cfg)
    per_user = _aggregate(vectors, clustering.assignment)
    return ProtocolOutput(per_user_models=per_user, server_clustering=clustering,
                          local_models=models, comm_rounds=1, eps_hat=eps_hat,
                          method=f"one_shot[{cfg.clustering.algo}]")


def run_one_shot_inexact(data: FederatedDataset, loss: LossSpec, cfg: ProtocolConfig,
                         diagnostics: bool = False) -> ProtocolOutput:
    """The inexact variant: same pipeline with SGD local solves."""
    if cfg.erm_mode != "sgd":
        raise ConfigError("inexact run needs erm_mode='sgd'")
    return run_one_shot(data, loss, cfg, diagnostics=diagnostics)


def run_one_shot_partial_spectral(data: FederatedDataset, loss: LossSpec, k: int,
                                  seed: int = 0) -> ProtocolOutput:
    """One-shot pipeline whose clustering is the projection+seeding stage only."""
    cfg = ProtocolConfig(
        clustering=ClusterAlgoSpec(algo="kmeans_spectral", k=k, part1_only=True),
        seed=seed)
    out = run_one_shot(data, loss, cfg)
    out.method = "one_shot[spectral_part1]"
    return out


# ---------------------------------------------------------------------------
# Baselines


def _truth_clustering(data: FederatedDataset, vectors: np.ndarray) -> ClusteringResult:
    labels = data.true_assignment.copy()
    return make_result(vectors, labels, {"algorithm": "truth"})


def oracle_averaging(data: FederatedDataset, loss: LossSpec) -> ProtocolOutput:
    """Average exact local models within the ground-truth clusters."""
    models = solve_all_local(data, loss)
    vectors = np.stack([m.vector for m in models])
    per_user = _aggregate(vectors, data.true_assignment)
    return ProtocolOutput(per_user_models=per_user,
                          server_clustering=_truth_clustering(data, vectors),
                          local_models=models, comm_rounds=1, method="oracle_avg")


def cluster_oracle(data: FederatedDataset, loss: LossSpec) -> ProtocolOutput:
    """Train one model per ground-truth cluster on that cluster's pooled data."""
    per_user = None
    cluster_models = []
    for k in range(data.k):
        members = data.cluster_members(k)
        pooled = UserShard(
            features=np.concatenate([data.shards[i].features for i in members]),
            labels=np.concatenate([data.shards[i].labels for i in members]),
            user_id=-1, cluster_id=k)
        cluster_models.append(solve_erm_exact(loss, pooled).vector)
        if per_user is None:
            per_user = np.zeros((data.m, len(cluster_models[0])))
        per_user[members] = cluster_models[k]
    vectors_by_cluster = np.stack(cluster_models)
    return ProtocolOutput(per_user_models=per_user,
                          server_clustering=ClusteringResult(
                              assignment=data.true_assignment.copy(),
                              centroids=vectors_by_cluster,
                              diagnostics={"algorithm": "cluster_oracle"}),
                          local_models=None, comm_rounds=1, method="cluster_oracle")


def local_erm_baseline(data: FederatedDataset, loss: LossSpec) -> ProtocolOutput:
    """Every user keeps its own exact local model; no communication."""
    models = solve_all_local(data, loss)
    vectors = np.stack([m.vector for m in models])
    return ProtocolOutput(per_user_models=vectors,
                          server_clustering=make_result(
                              vectors, np.arange(data.m), {"algorithm": "local"}),
                          local_models=models, comm_rounds=0, method="local_erm")


def naive_averaging(data: FederatedDataset, loss: LossSpec) -> ProtocolOutput:
    """Every user receives the grand mean of all local models."""
    models = solve_all_local(data, loss)
    vectors = np.stack([m.vector for m in models])
    per_user = _aggregate(vectors, np.zeros(data.m, dtype=int))
    return ProtocolOutput(per_user_models=per_user,
                          server_clustering=make_result(
                              vectors, np.zeros(data.m, dtype=int),
                              {"algorithm": "naive"}),
                          local_models=models, comm_rounds=1, method="naive_avg")


def run_baseline(name: str, data: FederatedDataset, loss: LossSpec) -> ProtocolOutput:
    try:
        fn = {"oracle_avg": oracle_averaging, "cluster_oracle": cluster_oracle,
              "local_erm": local_erm_baseline, "naive_avg": naive_averaging}[name]
    except KeyError:
        raise ConfigError(f"unknown baseline {name!r}") from None
    return fn(data, loss)


def export_protocol_output(output: ProtocolOutput, out_dir) -> "Path":
    """Write a run's results: JSON manifest plus a per-user model table."""
    import csv
    import json
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clustering = output.server_clustering
    manifest = {
        "method": output.method,
        "comm_rounds": output.comm_rounds,
        "eps_hat": output.eps_hat,
        "users": output.per_user_models.shape[0],
        "param_dim": output.per_user_models.shape[1],
        "clustering": None if clustering is None else clustering.to_json(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    with (out / "models.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "cluster"]
                        + [f"p{j}" for j in range(output.per_user_models.shape[1])])
        for uid, row in enumerate(output.per_user_models):
            lab = "" if clustering is None else int(clustering.assignment[uid])
            writer.writerow([uid, lab] + [repr(float(v)) for v in row])
    return out


# ---------------------------------------------------------------------------
# Iterative federated clustering baseline (multi-round).


def ifca_shell_init(true_models: np.ndarray, seed: int, lo_frac: float = 0.2,
                    hi_frac: float = 1.0 / 3.0) -> np.ndarray:
    """Random vectors at distance in [lo_frac*D, hi_frac*D] of each true model,
    D being the smallest distance between distinct true models."""
    models = np.asarray(true_models, dtype=float)
    diff = models[:, None, :] - models[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    d_min = float(dist[np.triu_indices(models.shape[0], 1)].min())
    out = np.empty_like(models)
    for k in range(models.shape[0]):
        rng = substream(seed, "ifca-shell", k)
        direction = rng.standard_normal(models.shape[1])
        direction /= np.linalg.norm(direction)
        radius = rng.uniform(lo_frac * d_min, hi_frac * d_min)
        out[k] = models[k] + radius * direction
    return out


def ifca_perturbed_init(models: np.ndarray, noise_std: float, seed: int) -> np.ndarray:
    models = np.asarray(models, dtype=float)
    rng = substream(seed, "ifca-perturb")
    return models + noise_std * rng.standard_normal(models.shape)


def ifca_random_init(k: int, p: int, scale: float, seed: int) -> np.ndarray:
    rng = substream(seed, "ifca-random")
    return scale * rng.standard_normal((k, p))


def run_ifca(data: FederatedDataset, loss: LossSpec, init: np.ndarray, step: float,
             rounds: int, mode: str = "gradient_avg", tau: int = 10,
             batch_size: int = 1, seed: int = 0) -> ProtocolOutput:
    """Iterative baseline alternating cluster-identity estimation and averaging.

    Per round the server broadcasts all K models and each user adopts the one
    with the lowest empirical loss (ties to the lowest index).  With
    ``gradient_avg`` the server averages the members' full local gradients
    and takes one step; with ``model_avg`` each member runs ``tau`` local
    minibatch-SGD steps at the fixed step size and the server averages the
    returned models.  ``comm_rounds`` equals ``rounds``.
    """
    if not step > 0:
        raise ConfigError(f"step must be positive, got {step}")
    if rounds < 1 or init.shape[0] < 1:
        raise ConfigError("need rounds >= 1 and at least one initial model")
    if mode not in ("gradient_avg", "model_avg"):
        raise ConfigError(f"unknown mode {mode!r}")
    m = data.m
    k = init.shape[0]
    x = np.stack([s.features for s in data.shards])  # (m, n, d)
    y = np.stack([s.labels for s in data.shards])  # (m, n)
    n = x.shape[1]
    if loss.has_intercept:
        x = np.concatenate([x, np.ones((m, n, 1))], axis=2)
    p = x.shape[2]
    if init.shape[1] != p:
        raise ConfigError(f"init models have dim {init.shape[1]}, expected {p}")
    reg_diag = np.full(p, loss.reg)
    if loss.has_intercept:
        reg_diag[-1] = 0.0
    theta = np.array(init, dtype=float)

    def member_losses(models: np.ndarray) -> np.ndarray:
        z = np.einsum("unp,kp->unk", x, models)
        if loss.kind == "quadratic":
            per = 0.5 * np.mean((z - y[:, :, None]) ** 2, axis=1)
        else:
            per = np.mean(np.logaddexp(0.0, -y[:, :, None] * z), axis=1)
        return per + 0.5 * (models ** 2 @ reg_diag)[None, :]

    def full_grads(selected: np.ndarray) -> np.ndarray:
        z = np.einsum("unp,up->un", x, selected)
        if loss.kind == "quadratic":
            coef = z - y
        else:
            coef = -y / (1.0 + np.exp(y * z))
        return np.einsum("unp,un->up", x, coef) / n + reg_diag * selected

    batch_idx = None
    if mode == "model_avg":
        batch_idx = np.stack([substream(seed, "ifca-local", uid)
                              .integers(0, n, size=(rounds, tau, batch_size))
                              for uid in range(m)])

    assign = np.zeros(m, dtype=int)
    for rnd in range(rounds):
        assign = member_losses(theta).argmin(axis=1)
        if mode == "gradient_avg":
            grads = full_grads(theta[assign])
            for lab in range(k):
                members = np.flatnonzero(assign == lab)
                if len(members):
                    theta[lab] = theta[lab] - step * _mean_rows(grads, members)
        else:
            local = theta[assign].copy()
            for s_step in range(tau):
                rows = batch_idx[:, rnd, s_step, :]  # (m, B)
                xb = x[np.arange(m)[:, None], rows]  # (m, B, p)
                z = np.einsum("ubp,up->ub", xb, local)
                yb = y[np.arange(m)[:, None], rows]
                if loss.kind == "quadratic":
                    coef = z - yb
                else:
                    coef = -yb / (1.0 + np.exp(yb * z))
                g = np.einsum("ubp,ub->up", xb, coef) / batch_size + reg_diag * local
                local = local - step * g
            for lab in range(k):
                members = np.flatnonzero(assign == lab)
                if len(members):
                    theta[lab] = _mean_rows(local, members)

    assign = member_losses(theta).argmin(axis=1)
    per_user = theta[assign]
    clustering = make_result(per_user, assign,
                                         {"algorithm": f"ifca_{mode}", "rounds": rounds})
    return ProtocolOutput(per_user_models=per_user, server_clustering=clustering,
                          local_models=None, comm_rounds=rounds,
                          method=f"ifca[{mode}]",
                          extras={"final_models": theta})
