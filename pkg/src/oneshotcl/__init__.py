"""One-shot clustered learning: local training, model clustering, cluster-wise averaging.

Simulates a server-coordinated system where each of m users trains on its
own shard from one of K latent distributions, the server clusters the
resulting models and sends every user its cluster's average, all in a
single communication round.  Ships the clustering algorithms with their
recovery-condition checkers, an inexact (SGD) variant, the standard
baselines, and a reproducible experiment harness.
"""

from . import clustering
from .data import (FederatedDataset, GenConfig, ModelLaw, TableSchema, UserShard,
                   export_dataset, gen_linear_clusters, gen_logistic_clusters,
                   ingest_labeled_table, load_dataset, nearest_psd, shard_label_flip,
                   true_min_separation)
from .erm import (LocalModel, LossSpec, SgdConfig, default_radius, eval_loss, grad,
                  project_ball, solve_erm_exact, solve_erm_sgd, split_params,
                  strong_convexity)
from .errors import ConfigError, ConvergenceError, DataFormatError
from .experiment import ExperimentConfig, build_dataset, run_cell, run_experiment, run_method
from .metrics import RecoveryStats, decay_slope, normalized_mse, recovery_stats, test_accuracy
from .protocol import (BASELINES, ClusterAlgoSpec, ProtocolConfig, ProtocolOutput,
                       cluster_oracle, export_protocol_output, ifca_perturbed_init,
                       ifca_random_init,
                       ifca_shell_init, local_erm_baseline, naive_averaging,
                       oracle_averaging, run_baseline, run_ifca, run_one_shot,
                       run_one_shot_inexact, run_one_shot_partial_spectral,
                       solve_all_local)
from .rng import STREAM_SCHEME_VERSION, substream

__version__ = "0.1.0"
