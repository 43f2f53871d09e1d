"""Evaluation metrics: normalized MSE, test accuracy, recovery statistics, slopes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .clustering import ClusteringResult
from .data import FederatedDataset
from .erm import LossSpec, split_params
from .errors import ConfigError


def _models_of(output) -> np.ndarray:
    if hasattr(output, "per_user_models"):
        return np.asarray(output.per_user_models, dtype=float)
    return np.asarray(output, dtype=float)


def normalized_mse(output, data: FederatedDataset) -> float:
    """Mean over users of ||model_i - true_i||^2 / ||true_i||^2."""
    if data.true_models is None:
        raise ConfigError("dataset has no true models")
    models = _models_of(output)
    truth = data.true_models[data.true_assignment]
    norms = np.linalg.norm(truth, axis=1) ** 2
    if (norms == 0).any():
        raise ConfigError("a true model has zero norm; normalized MSE undefined")
    err = np.linalg.norm(models - truth, axis=1) ** 2
    return float(np.mean(err / norms))


def test_accuracy(output, data: FederatedDataset, loss: LossSpec) -> float:
    """Mean over users of the sign-prediction accuracy on the user's cluster
    test set.  Zero scores classify as +1."""
    if loss.kind != "logistic":
        raise ConfigError("test accuracy is defined for classification losses only")
    if data.test_sets is None:
        raise ConfigError("dataset has no test sets")
    models = _models_of(output)
    accs = np.empty(data.m)
    for i in range(data.m):
        x, y = data.test_sets[int(data.true_assignment[i])]
        w, b = split_params(loss, models[i])
        pred = np.where(x @ w + b >= 0, 1.0, -1.0)
        accs[i] = np.mean(pred == y)
    return float(accs.mean())


@dataclass
class RecoveryStats:
    """How a produced partition overlaps the ground truth.

    ``overlap[k, l]`` counts members of produced cluster k drawn from true
    cluster l; ``eps`` holds the same counts as fractions of each produced
    cluster; ``exact`` means the partitions agree up to relabeling.
    """

    exact: bool
    overlap: np.ndarray  # (k_prime, k_true) counts
    eps: np.ndarray  # (k_prime, k_true) row fractions
    k_prime: int

    def contamination(self, matching: np.ndarray | None = None) -> np.ndarray:
        """Per produced cluster, members not coming from its matched truth cluster."""
        match = self.best_matching() if matching is None else matching
        total = self.overlap.sum(axis=1)
        own = self.overlap[np.arange(self.k_prime), match]
        return total - own

    def best_matching(self) -> np.ndarray:
        rows, cols = linear_sum_assignment(-_pad_square(self.overlap))
        match = np.full(self.k_prime, -1, dtype=int)
        for r, c in zip(rows, cols):
            if r < self.k_prime and c < self.overlap.shape[1]:
                match[r] = c
        return match


def _pad_square(counts: np.ndarray) -> np.ndarray:
    size = max(counts.shape)
    out = np.zeros((size, size))
    out[:counts.shape[0], :counts.shape[1]] = counts
    return out


def recovery_stats(result, truth_assignment) -> RecoveryStats:
    """Overlap counts/fractions plus exactness under the best label matching."""
    if isinstance(result, ClusteringResult):
        produced = result.assignment
    else:
        produced = np.asarray(result, dtype=int)
    truth = np.asarray(truth_assignment, dtype=int)
    if len(produced) != len(truth):
        raise ConfigError("produced and true assignments cover different user sets")
    k_prime = int(produced.max()) + 1
    k_true = int(truth.max()) + 1
    overlap = np.zeros((k_prime, k_true), dtype=int)
    np.add.at(overlap, (produced, truth), 1)
    row_sums = overlap.sum(axis=1)
    eps = overlap / np.maximum(row_sums[:, None], 1)
    rows, cols = linear_sum_assignment(-_pad_square(overlap))
    matched = sum(overlap[r, c] for r, c in zip(rows, cols)
                  if r < k_prime and c < k_true)
    exact = bool(k_prime == k_true and matched == len(truth))
    return RecoveryStats(exact=exact, overlap=overlap, eps=eps, k_prime=k_prime)


def decay_slope(points) -> float:
    """Least-squares slope of log(mse) against log(n)."""
    pts = [(float(n), float(mse)) for n, mse in points]
    if len(pts) < 3:
        raise ConfigError("need at least 3 (n, mse) points")
    ns = np.array([p[0] for p in pts])
    mses = np.array([p[1] for p in pts])
    if (np.diff(ns) <= 0).any():
        raise ConfigError("n values must be strictly increasing")
    if (mses <= 0).any():
        raise ConfigError("mse values must be positive")
    return float(np.polyfit(np.log(ns), np.log(mses), 1)[0])
