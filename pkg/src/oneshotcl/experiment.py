"""Configuration-driven experiment runner.

A JSON config names a data-generating process, a loss, a list of methods,
a sweep over per-user sample counts and a list of seeds.  Every
(n, seed, method) cell is an independent job; rows are collected in a fixed
order so reports are byte-identical for any worker count.  Unknown config
keys are rejected outright.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clustering import GridSpec
from .data import (FederatedDataset, GenConfig, ModelLaw, TableSchema,
                   gen_linear_clusters, gen_logistic_clusters, ingest_labeled_table,
                   shard_label_flip)
from .erm import LossSpec, SgdConfig, default_radius
from .errors import ConfigError
from .metrics import normalized_mse, recovery_stats, test_accuracy
from .protocol import (BASELINES, ClusterAlgoSpec, ProtocolConfig, cluster_oracle,
                       ifca_perturbed_init, ifca_random_init, ifca_shell_init,
                       run_baseline, run_ifca, run_one_shot)
from .rng import substream

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["method", "n", "seed", "normalized_mse", "test_accuracy",
                  "exact_recovery", "k_prime", "comm_rounds", "wall_time_ms"]


def _check_keys(obj: dict, allowed: set[str], required: set[str], where: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ConfigError(f"{where}: missing required key(s) {sorted(missing)}")


@dataclass
class ExperimentConfig:
    data: dict
    loss: dict
    methods: list[dict]
    sweep: list[int]
    seeds: list[int]
    output_dir: str

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        _check_keys(raw, {"data", "loss", "methods", "sweep", "seeds", "output_dir"},
                    {"data", "loss", "methods", "sweep", "seeds", "output_dir"}, "config")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc})") from None
        return cls.from_dict(raw)

    def validate(self) -> None:
        _validate_data(self.data)
        _parse_loss(self.loss)  # raises on bad fields
        if not isinstance(self.methods, list) or not self.methods:
            raise ConfigError("methods: need at least one method")
        names = set()
        for i, method in enumerate(self.methods):
            _validate_method(method, f"methods[{i}]")
            if method["name"] in names:
                raise ConfigError(f"methods[{i}]: duplicate name {method['name']!r}")
            names.add(method["name"])
        if not isinstance(self.sweep, list) or not self.sweep:
            raise ConfigError("sweep: need at least one n value")
        if any(int(n) < 1 for n in self.sweep):
            raise ConfigError("sweep: n values must be positive")
        if not isinstance(self.seeds, list) or not self.seeds:
            raise ConfigError("seeds: need at least one seed")


def _validate_data(data: dict) -> None:
    kind = data.get("kind")
    if kind == "linear_clusters":
        _check_keys(data, {"kind", "k", "m", "d", "intervals", "cluster_sizes",
                           "noise_std", "feature_sparsity", "test_per_cluster"},
                    {"kind", "k", "m", "d", "intervals"}, "data")
    elif kind == "logistic_clusters":
        _check_keys(data, {"kind", "k", "m", "d", "theta", "intercepts", "centers",
                           "covariances", "cluster_sizes", "test_per_cluster"},
                    {"kind", "k", "m", "d", "theta", "centers", "covariances"}, "data")
    elif kind == "label_flip":
        _check_keys(data, {"kind", "m", "pool"}, {"kind", "m", "pool"}, "data")
        pool = data["pool"]
        pkind = pool.get("kind")
        if pkind == "two_gaussians":
            _check_keys(pool, {"kind", "d", "per_class", "separation", "correlation"},
                        {"kind", "d", "per_class", "separation"}, "data.pool")
        elif pkind == "quadratic_boundary":
            _check_keys(pool, {"kind", "d", "total", "correlation", "linear_weight",
                               "quadratic_weight"},
                        {"kind", "d", "total", "linear_weight", "quadratic_weight"},
                        "data.pool")
        elif pkind == "csv":
            _check_keys(pool, {"kind", "path", "has_header"}, {"kind", "path"},
                        "data.pool")
        else:
            raise ConfigError(f"data.pool.kind: unknown kind {pkind!r}")
    else:
        raise ConfigError(f"data.kind: unknown kind {kind!r}")


def _parse_loss(raw: dict) -> tuple[dict, str | float]:
    _check_keys(raw, {"kind", "reg", "has_intercept", "radius_r"}, {"kind"}, "loss")
    radius = raw.get("radius_r", "auto")
    if radius != "auto" and not (isinstance(radius, (int, float)) and radius > 0):
        raise ConfigError("loss.radius_r: must be a positive number or 'auto'")
    base = {"kind": raw["kind"], "reg": float(raw.get("reg", 0.0)),
            "has_intercept": bool(raw.get("has_intercept", False))}
    LossSpec(**base)  # field validation
    return base, radius


def _validate_method(method: dict, where: str) -> None:
    kind = method.get("kind")
    if kind == "one_shot":
        _check_keys(method, {"name", "kind", "clustering", "erm", "diagnostics"},
                    {"name", "kind", "clustering"}, where)
        _parse_clustering(method["clustering"], f"{where}.clustering")
        erm = method.get("erm", {"mode": "exact"})
        mode = erm.get("mode")
        if mode == "exact":
            _check_keys(erm, {"mode"}, {"mode"}, f"{where}.erm")
        elif mode == "sgd":
            _check_keys(erm, {"mode", "t", "batch_size", "mu_f"}, {"mode", "t"},
                        f"{where}.erm")
        else:
            raise ConfigError(f"{where}.erm.mode: unknown mode {mode!r}")
    elif kind == "baseline":
        _check_keys(method, {"name", "kind", "baseline"}, {"name", "kind", "baseline"},
                    where)
        if method["baseline"] not in BASELINES:
            raise ConfigError(f"{where}.baseline: unknown baseline "
                              f"{method['baseline']!r}, expected one of {BASELINES}")
    elif kind == "ifca":
        _check_keys(method, {"name", "kind", "mode", "step", "rounds", "tau",
                             "local_batch", "k", "init"},
                    {"name", "kind", "mode", "step", "rounds", "init"}, where)
        init = method["init"]
        ikind = init.get("kind")
        if ikind == "shell":
            _check_keys(init, {"kind", "lo_frac", "hi_frac"}, {"kind"}, f"{where}.init")
        elif ikind == "oracle_noise":
            _check_keys(init, {"kind", "noise_std"}, {"kind", "noise_std"},
                        f"{where}.init")
        elif ikind == "random":
            _check_keys(init, {"kind", "scale"}, {"kind", "scale"}, f"{where}.init")
        else:
            raise ConfigError(f"{where}.init.kind: unknown kind {ikind!r}")
    else:
        raise ConfigError(f"{where}.kind: unknown method kind {kind!r}")


def _parse_clustering(raw: dict, where: str) -> ClusterAlgoSpec:
    _check_keys(raw, {"algo", "k", "k_max", "lambda", "lambda_policy", "metric",
                      "elbow_threshold", "restarts", "tol", "part1_only", "grid"},
                {"algo"}, where)
    grid = GridSpec()
    if "grid" in raw:
        _check_keys(raw["grid"], {"n", "init_lambda", "factor"}, set(), f"{where}.grid")
        grid = GridSpec(n=int(raw["grid"].get("n", 10)),
                        init_lambda=float(raw["grid"].get("init_lambda", 0.1)),
                        factor=float(raw["grid"].get("factor", 1.25)))
    lam = raw.get("lambda")
    policy = raw.get("lambda_policy", "fixed" if lam is not None else "fixed")
    spec = ClusterAlgoSpec(
        algo=raw["algo"], lam=None if lam is None else float(lam),
        lambda_policy=policy, k=raw.get("k"), k_max=raw.get("k_max"),
        metric=raw.get("metric", "silhouette"),
        elbow_threshold=float(raw.get("elbow_threshold", 0.1)),
        restarts=raw.get("restarts"), tol=float(raw.get("tol", 1e-6)),
        grid=grid, part1_only=bool(raw.get("part1_only", False)))
    spec.validate()
    return spec


def build_dataset(data_cfg: dict, n: int, seed: int) -> FederatedDataset:
    """Materialize the configured data-generating process for one run."""
    kind = data_cfg["kind"]
    if kind == "linear_clusters":
        cfg = GenConfig(
            k=int(data_cfg["k"]), m=int(data_cfg["m"]), n=n, d=int(data_cfg["d"]),
            model_law=ModelLaw.from_intervals(data_cfg["intervals"]),
            cluster_sizes=tuple(data_cfg["cluster_sizes"]) if "cluster_sizes" in data_cfg else None,
            noise_std=float(data_cfg.get("noise_std", 1.0)),
            feature_sparsity=data_cfg.get("feature_sparsity"),
            seed=seed, test_per_cluster=int(data_cfg.get("test_per_cluster", 0)))
        return gen_linear_clusters(cfg)
    if kind == "logistic_clusters":
        law = ModelLaw.from_vectors(data_cfg["theta"], data_cfg.get("intercepts"))
        cfg = GenConfig(
            k=int(data_cfg["k"]), m=int(data_cfg["m"]), n=n, d=int(data_cfg["d"]),
            model_law=law,
            cluster_sizes=tuple(data_cfg["cluster_sizes"]) if "cluster_sizes" in data_cfg else None,
            seed=seed, test_per_cluster=int(data_cfg.get("test_per_cluster", 0)))
        return gen_logistic_clusters(cfg, data_cfg["covariances"], data_cfg["centers"])
    if kind == "label_flip":
        pool = data_cfg["pool"]
        if pool["kind"] == "two_gaussians":
            features, labels = _two_gaussian_pool(pool, seed)
        elif pool["kind"] == "quadratic_boundary":
            features, labels = _quadratic_boundary_pool(pool, seed)
        else:
            features, labels = ingest_labeled_table(
                pool["path"], TableSchema(has_header=bool(pool.get("has_header", False))))
        return shard_label_flip(features, labels, int(data_cfg["m"]), n, seed)
    raise ConfigError(f"data.kind: unknown kind {kind!r}")


def _correlated_noise(rng, count: int, d: int, correlation: float) -> np.ndarray:
    z = rng.standard_normal((count, d))
    if correlation <= 0:
        return z
    idx = np.arange(d)
    factor = np.linalg.cholesky(correlation ** np.abs(idx[:, None] - idx[None, :]))
    return z @ factor.T


def _two_gaussian_pool(pool: dict, seed: int) -> tuple[np.ndarray, np.ndarray]:
    d = int(pool["d"])
    per_class = int(pool["per_class"])
    sep = float(pool["separation"])
    correlation = float(pool.get("correlation", 0.0))
    rng = substream(seed, "flip-pool")
    center = sep / np.sqrt(d) * np.ones(d)  # class means at +-center
    xs, ys = [], []
    for sign in (1.0, -1.0):
        xs.append(sign * center + _correlated_noise(rng, per_class, d, correlation))
        ys.append(np.full(per_class, sign))
    return np.concatenate(xs), np.concatenate(ys)


def _quadratic_boundary_pool(pool: dict, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Two-class pool whose boundary mixes a linear and a quadratic score, so
    no linear model is Bayes-optimal (small local fits are noise-dominated)."""
    d = int(pool["d"])
    total = int(pool["total"])
    correlation = float(pool.get("correlation", 0.5))
    rng = substream(seed, "flip-pool")
    x = _correlated_noise(rng, total, d, correlation)
    direction = np.ones(d) / np.sqrt(d)
    curvature = np.where(np.arange(d) < d // 2, 1.0, -1.0)
    score = (float(pool["linear_weight"]) * (x @ direction)
             + float(pool["quadratic_weight"]) * (x ** 2 @ curvature) / np.sqrt(2 * d))
    return x, np.where(score >= 0, 1.0, -1.0)


def _resolve_loss(loss_cfg: dict, data: FederatedDataset) -> LossSpec:
    base, radius = _parse_loss(loss_cfg)
    if radius == "auto":
        if data.true_models is None:
            raise ConfigError("loss.radius_r: 'auto' needs a dataset with true models")
        radius = default_radius(data.true_models)
    return LossSpec(radius_r=float(radius), **base)


def run_method(method: dict, data: FederatedDataset, loss: LossSpec, seed: int):
    kind = method["kind"]
    if kind == "baseline":
        return run_baseline(method["baseline"], data, loss)
    if kind == "one_shot":
        clustering = _parse_clustering(method["clustering"], "clustering")
        erm = method.get("erm", {"mode": "exact"})
        sgd = None
        if erm["mode"] == "sgd":
            sgd = SgdConfig(t=int(erm["t"]), mu_f=erm.get("mu_f"),
                            batch_size=int(erm.get("batch_size", 1)), seed=seed)
        cfg = ProtocolConfig(clustering=clustering, erm_mode=erm["mode"], sgd=sgd,
                             seed=seed)
        return run_one_shot(data, loss, cfg,
                            diagnostics=bool(method.get("diagnostics", False)))
    if kind == "ifca":
        k = int(method.get("k", data.k))
        init_cfg = method["init"]
        p = loss.param_dim(data.feature_dim)
        if init_cfg["kind"] == "shell":
            if data.true_models is None:
                raise ConfigError("ifca shell init needs a dataset with true models")
            init = ifca_shell_init(data.true_models, seed=seed,
                                   lo_frac=float(init_cfg.get("lo_frac", 0.2)),
                                   hi_frac=float(init_cfg.get("hi_frac", 1.0 / 3.0)))
        elif init_cfg["kind"] == "oracle_noise":
            oracle = cluster_oracle(data, loss)
            init = ifca_perturbed_init(oracle.server_clustering.centroids,
                                       float(init_cfg["noise_std"]), seed)
        else:
            init = ifca_random_init(k, p, float(init_cfg["scale"]), seed)
        return run_ifca(data, loss, init, step=float(method["step"]),
                        rounds=int(method["rounds"]), mode=method["mode"],
                        tau=int(method.get("tau", 10)),
                        batch_size=int(method.get("local_batch", 1)), seed=seed)
    raise ConfigError(f"unknown method kind {kind!r}")


def _metric_row(method_name: str, n: int, seed: int, output, data: FederatedDataset,
                loss: LossSpec, wall_ms: float) -> dict:
    row = {"method": method_name, "n": n, "seed": seed, "normalized_mse": "",
           "test_accuracy": "", "exact_recovery": "", "k_prime": "",
           "comm_rounds": output.comm_rounds, "wall_time_ms": repr(wall_ms)}
    if data.true_models is not None:
        row["normalized_mse"] = repr(normalized_mse(output, data))
    if loss.kind == "logistic" and data.test_sets is not None:
        row["test_accuracy"] = repr(test_accuracy(output, data, loss))
    if output.server_clustering is not None:
        stats = recovery_stats(output.server_clustering, data.true_assignment)
        row["exact_recovery"] = int(stats.exact)
        row["k_prime"] = stats.k_prime
    return row


def run_cell(cfg: ExperimentConfig, n: int, seed: int) -> list[dict]:
    """All configured methods on one generated dataset; one report row each."""
    data = build_dataset(cfg.data, n, seed)
    loss = _resolve_loss(cfg.loss, data)
    rows = []
    for method in cfg.methods:
        start = time.perf_counter()
        try:
            output = run_method(method, data, loss, seed)
        except Exception as exc:  # noqa: BLE001 - keep the sweep running
            logger.error("method %s failed at n=%d seed=%d: %s",
                         method["name"], n, seed, exc)
            rows.append({"method": method["name"], "n": n, "seed": seed,
                         "normalized_mse": "", "test_accuracy": "",
                         "exact_recovery": "", "k_prime": "", "comm_rounds": "",
                         "wall_time_ms": "", "_failed": True})
            continue
        wall_ms = 1000.0 * (time.perf_counter() - start)
        rows.append(_metric_row(method["name"], n, seed, output, data, loss, wall_ms))
    return rows


def run_experiment(cfg: ExperimentConfig, threads: int = 1,
                   seed_override: int | None = None) -> tuple[Path, Path, int]:
    """Run the whole sweep and write report.csv + summary.json.

    Returns (report_path, summary_path, failed_row_count).
    """
    seeds = [seed_override] if seed_override is not None else [int(s) for s in cfg.seeds]
    cells = [(int(n), int(s)) for n in cfg.sweep for s in seeds]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cell_rows = list(pool.map(lambda c: run_cell(cfg, *c), cells))
    else:
        cell_rows = [run_cell(cfg, *cell) for cell in cells]

    method_order = {m["name"]: i for i, m in enumerate(cfg.methods)}
    rows = [row for rows_ in cell_rows for row in rows_]
    rows.sort(key=lambda r: (r["n"], r["seed"], method_order[r["method"]]))
    failed = sum(1 for r in rows if r.pop("_failed", False))

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.csv"
    with report_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    summary_path = write_summary(out, rows)
    if failed:
        logger.error("%d report row(s) failed", failed)
    return report_path, summary_path, failed


def summarize_rows(rows: list[dict]) -> dict:
    methods: dict[str, dict] = {}
    for row in rows:
        per_n = methods.setdefault(str(row["method"]), {})
        bucket = per_n.setdefault(str(row["n"]), {"normalized_mse": [],
                                                  "test_accuracy": [],
                                                  "exact_recovery": [],
                                                  "comm_rounds": []})
        for key in ("normalized_mse", "test_accuracy"):
            value = row.get(key, "")
            if value != "" and value is not None:
                bucket[key].append(float(value))
        if row.get("exact_recovery", "") != "":
            bucket["exact_recovery"].append(int(row["exact_recovery"]))
        if row.get("comm_rounds", "") != "":
            bucket["comm_rounds"].append(int(row["comm_rounds"]))

    summary: dict[str, dict] = {}
    for name, per_n in methods.items():
        summary[name] = {}
        for n_key, bucket in per_n.items():
            entry = {}
            for key in ("normalized_mse", "test_accuracy"):
                vals = bucket[key]
                if vals:
                    entry[key] = {"mean": float(np.mean(vals)),
                                  "std": float(np.std(vals)),
                                  "median": float(np.median(vals))}
            if bucket["exact_recovery"]:
                entry["exact_recovery_rate"] = float(np.mean(bucket["exact_recovery"]))
            if bucket["comm_rounds"]:
                entry["comm_rounds"] = float(np.mean(bucket["comm_rounds"]))
            summary[name][n_key] = entry
    return summary


def write_summary(out_dir: Path, rows: list[dict]) -> Path:
    summary_path = Path(out_dir) / "summary.json"
    summary_path.write_text(json.dumps({"methods": summarize_rows(rows)},
                                       indent=2, sort_keys=True))
    return summary_path


def read_report(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty report")
    for row in rows:
        row["n"] = int(row["n"])
        row["seed"] = int(row["seed"])
    return rows
