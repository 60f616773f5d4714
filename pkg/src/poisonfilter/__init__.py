"""Optimal poisoning of lasso classifiers and outlier-detection defences."""
__version__ = "0.1.0"

from ._kernels import BACKEND
from .attack_flipping import FlipSpec, ilf, ilf_indices, rlf, rlf_indices
from .attack_optimal import (
    AttackConfig,
    AttackResult,
    DegenerateHessianError,
    PoisonSet,
    choose_initial_points,
    poison_gradient,
    run_optimal_attack,
)
from .dataset import (
    DatasetError,
    GaussianSpec,
    LabeledDataset,
    SplitSpec,
    gen_gaussian_binary,
    load_mnist_1v7,
    load_spambase,
    split,
)
from .defence import (
    DefenceModel,
    RlsConfig,
    cv_noise_rates,
    ecdf_threshold,
    filter_untrusted,
    fit_defence,
    robust_loss,
    train_rls,
)
from .harness import ExperimentConfig, ExperimentReport, emit_report, run_experiment, run_trajectory_demo
from .linear_model import LinearClassifier, TrainConfig, cv_lambda, mse_half, predict, train_lasso
from .outlier import ScorerConfig, fit_scorer
