"""Federated datasets: synthetic generators, CSV ingestion, sharding, export.

A federation is ``m`` users, each holding an IID shard from one of ``K``
latent data distributions.  The ground-truth user->cluster map (and, for
synthetic data, the true per-cluster parameter vectors) travels with the
dataset so oracles and recovery metrics can be computed, but the learning
protocol itself never reads it.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError
from .rng import STREAM_SCHEME_VERSION, substream


@dataclass
class UserShard:
    """One user's local data: an (n, d) feature matrix and n labels.

    ``cluster_id`` is ground truth carried for evaluation only.
    """

    features: np.ndarray
    labels: np.ndarray
    user_id: int
    cluster_id: int

    @property
    def n(self) -> int:
        return self.features.shape[0]


@dataclass
class ModelLaw:
    """How the true per-cluster parameter vectors are drawn.

    Either one (lo, hi) interval per cluster (each component of cluster k's
    vector is drawn uniformly from interval k), or explicit vectors.
    """

    kind: str  # "intervals" | "explicit"
    intervals: list[tuple[float, float]] | None = None
    vectors: np.ndarray | None = None
    intercepts: np.ndarray | None = None

    @classmethod
    def from_intervals(cls, intervals) -> "ModelLaw":
        return cls(kind="intervals", intervals=[(float(a), float(b)) for a, b in intervals])

    @classmethod
    def from_vectors(cls, vectors, intercepts=None) -> "ModelLaw":
        vectors = np.asarray(vectors, dtype=float)
        if intercepts is not None:
            intercepts = np.asarray(intercepts, dtype=float)
        return cls(kind="explicit", vectors=vectors, intercepts=intercepts)


@dataclass
class GenConfig:
    """Parameters of a synthetic federation."""

    k: int
    m: int
    n: int
    d: int
    model_law: ModelLaw
    cluster_sizes: tuple[int, ...] | None = None  # default: balanced
    noise_std: float = 1.0
    feature_sparsity: int | None = None  # nonzero feature components per sample; default d
    seed: int = 0
    test_per_cluster: int = 1000

    def sizes(self) -> np.ndarray:
        if self.cluster_sizes is None:
            if self.m % self.k != 0:
                raise ConfigError(f"m={self.m} not divisible by k={self.k}; "
                                  "pass cluster_sizes explicitly")
            return np.full(self.k, self.m // self.k, dtype=int)
        return np.asarray(self.cluster_sizes, dtype=int)

    def validate(self) -> None:
        for name in ("k", "m", "n", "d"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        sizes = self.sizes()
        if len(sizes) != self.k:
            raise ConfigError(f"cluster_sizes has length {len(sizes)}, expected k={self.k}")
        if (sizes < 1).any():
            raise ConfigError("cluster_sizes entries must be positive")
        if sizes.sum() != self.m:
            raise ConfigError(f"cluster_sizes sums to {sizes.sum()}, expected m={self.m}")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be nonnegative, got {self.noise_std}")
        s = self.feature_sparsity
        if s is not None and not (1 <= s <= self.d):
            raise ConfigError(f"feature_sparsity must be in [1, d={self.d}], got {s}")
        if self.test_per_cluster < 0:
            raise ConfigError("test_per_cluster must be nonnegative")
        law = self.model_law
        if law.kind == "intervals":
            if law.intervals is None or len(law.intervals) != self.k:
                raise ConfigError("model_law.intervals must provide one (lo, hi) per cluster")
        elif law.kind == "explicit":
            if law.vectors is None or law.vectors.shape[0] != self.k:
                raise ConfigError("model_law.vectors must provide one vector per cluster")
        else:
            raise ConfigError(f"unknown model_law kind {law.kind!r}")


@dataclass
class FederatedDataset:
    """Shards for all users plus the ground truth used by oracles and metrics."""

    shards: list[UserShard]
    true_assignment: np.ndarray  # (m,) cluster index per user id
    feature_dim: int
    true_models: np.ndarray | None = None  # (K, p) full parameter vectors
    test_sets: list[tuple[np.ndarray, np.ndarray]] | None = None  # per cluster
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.shards)

    @property
    def k(self) -> int:
        return int(self.true_assignment.max()) + 1

    def cluster_members(self, k: int) -> list[int]:
        return [i for i in range(self.m) if self.true_assignment[i] == k]

    def validate(self) -> None:
        if len(self.true_assignment) != self.m:
            raise ConfigError("true_assignment length does not match number of shards")
        counts = np.bincount(self.true_assignment, minlength=self.k)
        if (counts == 0).any():
            raise ConfigError("true_assignment leaves some cluster empty")
        for shard in self.shards:
            if shard.features.shape[1] != self.feature_dim:
                raise ConfigError(f"user {shard.user_id}: feature dim "
                                  f"{shard.features.shape[1]} != {self.feature_dim}")
            if shard.n < 1:
                raise ConfigError(f"user {shard.user_id}: empty shard")
        if self.true_models is not None:
            gaps = _pairwise_min_gap(self.true_models)
            if gaps <= 0:
                raise ConfigError("true cluster models are not pairwise distinct")


def _pairwise_min_gap(models: np.ndarray) -> float:
    if models.shape[0] < 2:
        return np.inf
    diff = models[:, None, :] - models[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    return float(dist[np.triu_indices(models.shape[0], k=1)].min())


def true_min_separation(ds: FederatedDataset) -> float:
    """Smallest pairwise distance between distinct true cluster models."""
    if ds.true_models is None:
        raise ConfigError("dataset has no true models")
    return _pairwise_min_gap(ds.true_models)


def _draw_true_models(cfg: GenConfig) -> np.ndarray:
    law = cfg.model_law
    if law.kind == "explicit":
        vecs = np.asarray(law.vectors, dtype=float)
        if law.intercepts is not None:
            vecs = np.hstack([vecs, np.asarray(law.intercepts, dtype=float)[:, None]])
        return vecs
    models = np.empty((cfg.k, cfg.d))
    for k, (lo, hi) in enumerate(law.intervals):
        rng = substream(cfg.seed, "cluster-model", k)
        models[k] = rng.uniform(lo, hi, size=cfg.d)
    return models


def _sparse_features(rng: np.random.Generator, n: int, d: int, s: int) -> np.ndarray:
    """n samples with s randomly placed standard-Gaussian components each.

    The sparsity pattern is re-drawn per sample.
    """
    if s >= d:
        return rng.standard_normal((n, d))
    x = np.zeros((n, d))
    cols = np.argsort(rng.random((n, d)), axis=1)[:, :s]
    rows = np.repeat(np.arange(n), s)
    x[rows, cols.ravel()] = rng.standard_normal(n * s)
    return x


def gen_linear_clusters(cfg: GenConfig) -> FederatedDataset:
    """Synthetic linear-regression federation: y = <x, u_k> + noise.

    Deterministic given ``cfg`` (including the seed); every user and every
    cluster model draws from its own substream.
    """
    cfg.validate()
    sizes = cfg.sizes()
    s = cfg.feature_sparsity or cfg.d
    models = _draw_true_models(cfg)
    if models.shape[1] != cfg.d:
        raise ConfigError(f"model vectors have dim {models.shape[1]}, expected d={cfg.d}")
    assignment = np.repeat(np.arange(cfg.k), sizes)

    shards = []
    for uid in range(cfg.m):
        k = int(assignment[uid])
        rng = substream(cfg.seed, "user", uid)
        x = _sparse_features(rng, cfg.n, cfg.d, s)
        y = x @ models[k] + cfg.noise_std * rng.standard_normal(cfg.n)
        shards.append(UserShard(features=x, labels=y, user_id=uid, cluster_id=k))

    test_sets = None
    if cfg.test_per_cluster > 0:
        test_sets = []
        for k in range(cfg.k):
            rng = substream(cfg.seed, "test", k)
            xt = _sparse_features(rng, cfg.test_per_cluster, cfg.d, s)
            yt = xt @ models[k] + cfg.noise_std * rng.standard_normal(cfg.test_per_cluster)
            test_sets.append((xt, yt))

    ds = FederatedDataset(shards=shards, true_assignment=assignment, feature_dim=cfg.d,
                          true_models=models, test_sets=test_sets,
                          meta={"kind": "linear", "seed": cfg.seed, "n": cfg.n,
                                "stream_scheme": STREAM_SCHEME_VERSION})
    ds.validate()
    return ds


def _psd_factor(cov: np.ndarray, name: str) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T, atol=1e-12):
        raise ConfigError(f"{name} is not symmetric")
    evals, evecs = np.linalg.eigh(cov)
    if evals.min() < -1e-10 * max(1.0, abs(evals.max())):
        raise ConfigError(f"{name} is not positive semidefinite (min eigenvalue {evals.min():.3g})")
    return evecs * np.sqrt(np.clip(evals, 0.0, None))


def nearest_psd(cov: np.ndarray) -> np.ndarray:
    """Project a symmetric matrix onto the PSD cone by clipping eigenvalues."""
    cov = np.asarray(cov, dtype=float)
    sym = 0.5 * (cov + cov.T)
    evals, evecs = np.linalg.eigh(sym)
    return (evecs * np.clip(evals, 0.0, None)) @ evecs.T


def gen_logistic_clusters(cfg: GenConfig, covariances, centers) -> FederatedDataset:
    """Synthetic binary-classification federation with +-1 labels.

    Features of cluster k are Gaussian with the given center/covariance;
    the label is +1 with probability sigmoid(<x, theta_k> + b_k).
    """
    cfg.validate()
    sizes = cfg.sizes()
    if len(covariances) != cfg.k or len(centers) != cfg.k:
        raise ConfigError("need one covariance and one center per cluster")
    factors = [_psd_factor(covariances[k], f"covariances[{k}]") for k in range(cfg.k)]
    centers = [np.asarray(c, dtype=float) for c in centers]
    for k, c in enumerate(centers):
        if c.shape != (cfg.d,):
            raise ConfigError(f"centers[{k}] has shape {c.shape}, expected ({cfg.d},)")

    models = _draw_true_models(cfg)
    has_intercept = models.shape[1] == cfg.d + 1
    if models.shape[1] not in (cfg.d, cfg.d + 1):
        raise ConfigError(f"model vectors have dim {models.shape[1]}, expected d or d+1")

    def _draw(rng, k, count):
        x = rng.standard_normal((count, cfg.d)) @ factors[k].T + centers[k]
        logits = x @ models[k, :cfg.d] + (models[k, cfg.d] if has_intercept else 0.0)
        p = 1.0 / (1.0 + np.exp(-logits))
        y = np.where(rng.random(count) < p, 1.0, -1.0)
        return x, y

    assignment = np.repeat(np.arange(cfg.k), sizes)
    shards = []
    for uid in range(cfg.m):
        k = int(assignment[uid])
        x, y = _draw(substream(cfg.seed, "user", uid), k, cfg.n)
        shards.append(UserShard(features=x, labels=y, user_id=uid, cluster_id=k))

    test_sets = None
    if cfg.test_per_cluster > 0:
        test_sets = [_draw(substream(cfg.seed, "test", k), k, cfg.test_per_cluster)
                     for k in range(cfg.k)]

    ds = FederatedDataset(shards=shards, true_assignment=assignment, feature_dim=cfg.d,
                          true_models=models, test_sets=test_sets,
                          meta={"kind": "logistic", "seed": cfg.seed, "n": cfg.n,
                                "stream_scheme": STREAM_SCHEME_VERSION})
    ds.validate()
    return ds


@dataclass(frozen=True)
class TableSchema:
    """Layout of a labeled CSV table: d feature columns then one label column."""

    has_header: bool = False
    delimiter: str = ","


def ingest_labeled_table(path, schema: TableSchema = TableSchema()) -> tuple[np.ndarray, np.ndarray]:
    """Parse a comma-separated labeled table into (features, labels).

    The feature dimension is inferred from the first data row; malformed
    rows are rejected with their line number.
    """
    path = Path(path)
    rows = []
    width = None
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        for ln, row in enumerate(reader, start=1):
            if schema.has_header and ln == 1:
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            if width is None:
                width = len(row)
                if width < 2:
                    raise DataFormatError(f"{path}, line {ln}: need at least one "
                                          "feature column plus a label column")
            elif len(row) != width:
                raise DataFormatError(f"{path}, line {ln}: expected {width} fields, "
                                      f"got {len(row)}")
            try:
                rows.append([float(cell) for cell in row])
            except ValueError as exc:
                raise DataFormatError(f"{path}, line {ln}: non-numeric cell ({exc})") from None
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    table = np.asarray(rows, dtype=float)
    return table[:, :-1], table[:, -1]


def shard_label_flip(features: np.ndarray, labels: np.ndarray, m: int, n: int,
                     seed: int) -> FederatedDataset:
    """Split a two-class +-1 pool across m users; half the users see flipped labels.

    Users are dealt n examples each without reuse, balanced across the two
    original classes where possible.  Users m/2..m-1 form the second cluster
    and receive negated labels.  Leftover pool examples become the held-out
    test sets (cluster 2's copy negated).
    """
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if m % 2 != 0:
        raise ConfigError(f"m must be even, got {m}")
    if m * n > len(labels):
        raise ConfigError(f"insufficient data: need {m * n} examples, pool has {len(labels)}")
    classes = np.unique(labels)
    if len(classes) > 2:
        raise ConfigError(f"pool must contain at most two label values, got {classes}")

    rng = substream(seed, "label-flip")
    pools = [list(rng.permutation(np.flatnonzero(labels == c))) for c in classes]
    if len(pools) == 1:
        pools.append([])
    per_class = [n // 2 + (n % 2 and u % 2) for u in range(m)]  # odd n: alternate extra

    shards = []
    for uid in range(m):
        quota = [per_class[uid], n - per_class[uid]]
        take = []
        for c in (0, 1):
            got = min(quota[c], len(pools[c]))
            take += [pools[c].pop() for _ in range(got)]
        for c in (0, 1):  # top up when one class ran dry
            while len(take) < n and pools[c]:
                take.append(pools[c].pop())
        if len(take) < n:
            raise ConfigError(f"insufficient data: pool exhausted at user {uid}")
        idx = np.sort(np.asarray(take, dtype=int))
        x_u, y_u = features[idx], labels[idx].copy()
        cluster = 0 if uid < m // 2 else 1
        if cluster == 1:
            y_u = -y_u
        shards.append(UserShard(features=x_u, labels=y_u, user_id=uid, cluster_id=cluster))

    rest = np.sort(np.asarray(pools[0] + pools[1], dtype=int))
    test_sets = None
    if len(rest):
        test_sets = [(features[rest], labels[rest].copy()),
                     (features[rest], -labels[rest])]

    assignment = np.asarray([s.cluster_id for s in shards], dtype=int)
    ds = FederatedDataset(shards=shards, true_assignment=assignment,
                          feature_dim=features.shape[1], true_models=None,
                          test_sets=test_sets,
                          meta={"kind": "label_flip", "seed": seed, "n": n})
    ds.validate()
    return ds


# ---------------------------------------------------------------------------
# Directory export/import: per-user CSV tables plus a JSON manifest.

def export_dataset(ds: FederatedDataset, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema_version": 1,
        "k": ds.k,
        "m": ds.m,
        "n": ds.shards[0].n,
        "d": ds.feature_dim,
        "true_assignment": ds.true_assignment.tolist(),
        "true_models": None if ds.true_models is None else ds.true_models.tolist(),
        "seed": ds.meta.get("seed"),
        "kind": ds.meta.get("kind"),
        "test_clusters": 0 if ds.test_sets is None else len(ds.test_sets),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    for shard in ds.shards:
        _write_table(out / f"user_{shard.user_id:04d}.csv", shard.features, shard.labels)
    if ds.test_sets is not None:
        for k, (xt, yt) in enumerate(ds.test_sets):
            _write_table(out / f"test_cluster_{k:02d}.csv", xt, yt)
    return out


def _write_table(path: Path, features: np.ndarray, labels: np.ndarray) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        for row, label in zip(features, labels):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(label))])


def load_dataset(in_dir) -> FederatedDataset:
    src = Path(in_dir)
    manifest = json.loads((src / "manifest.json").read_text())
    assignment = np.asarray(manifest["true_assignment"], dtype=int)
    shards = []
    for uid in range(manifest["m"]):
        x, y = ingest_labeled_table(src / f"user_{uid:04d}.csv")
        shards.append(UserShard(features=x, labels=y, user_id=uid,
                                cluster_id=int(assignment[uid])))
    models = manifest["true_models"]
    test_sets = None
    if manifest.get("test_clusters"):
        test_sets = [ingest_labeled_table(src / f"test_cluster_{k:02d}.csv")
                     for k in range(manifest["test_clusters"])]
    ds = FederatedDataset(
        shards=shards, true_assignment=assignment, feature_dim=manifest["d"],
        true_models=None if models is None else np.asarray(models, dtype=float),
        test_sets=test_sets,
        meta={"kind": manifest.get("kind"), "seed": manifest.get("seed"), "n": manifest["n"]})
    ds.validate()
    return ds
