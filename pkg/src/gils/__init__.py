"""Label-smoothed distributionally robust training with gradient-iteration augmentation."""
from .attacks import AttackConfig, attack, attack_then_gils, attacked_accuracy
from .bo import SearchSpace, Trial, bo_search, expected_improvement, gp_fit, matern52
from .data import Dataset, blobs_benchmark, gen_blobs, gen_shifted_test, load_csv, load_tensor_bin
from .loss import feature_gradient, lipschitz_constant, smooth_labels, surrogate
from .model import ModelParams, init_params
from .perturb import PerturbConfig, inner_maximize
from .trainer import GilsConfig, convergence_metrics, train, train_erm, train_gils

__version__ = "0.1.0"
