"""Inner maximization: transport cost and T-step gradient ascent on the inputs."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import numkit
from .errors import ConfigError, DimensionError, NumericError
from .loss import SmoothedLabel, feature_gradient, hard_label, ls_cross_entropy, smooth_labels
from .model import ModelParams, features, forward, input_objective

DEFAULT_MAX_STEPS = 100


@dataclass
class PerturbConfig:
    gamma: float = 1e-3
    eta: float = 1.5
    steps: int = 5
    alpha: float = 0.2
    # use smoothed labels inside the ascent objective (False: hard labels)
    smooth_inner: bool = True
    max_steps: int = DEFAULT_MAX_STEPS

    def __post_init__(self):
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ConfigError(f"gamma must be a positive finite number, got {self.gamma}")
        # eta == 0 is allowed: it turns the ascent into the identity
        if not (self.eta >= 0 and math.isfinite(self.eta)):
            raise ConfigError(f"eta must be >= 0, got {self.eta}")
        if not (1 <= self.steps <= self.max_steps):
            raise ConfigError(f"steps must lie in 1..{self.max_steps}, got {self.steps}")
        if not (0.0 <= self.alpha < 1.0):
            raise ConfigError(f"alpha must lie in [0, 1), got {self.alpha}")

    def inner_label(self, label: SmoothedLabel) -> SmoothedLabel:
        if self.smooth_inner or label.alpha == 0.0:
            return label
        return hard_label(label.true_class, label.k)


@dataclass
class PerturbResult:
    x_perturbed: np.ndarray
    objective_trace: np.ndarray
    feature_displacement: float
    bound_3L0_over_gamma: float = float("nan")
    feature_perturbed: np.ndarray | None = None


def transport_cost(params: ModelParams, x, x_anchor, same_label: bool = True) -> float:
    """0.5 * ||f(x) - f(x_anchor)||^2, or +inf across labels."""
    x = numkit.as_vec(x, "x")
    x_anchor = numkit.as_vec(x_anchor, "x_anchor")
    if x.shape != x_anchor.shape:
        raise DimensionError(f"x has length {x.size}, anchor has {x_anchor.size}")
    if not same_label:
        return math.inf
    return 0.5 * numkit.l2_dist_sq(features(params, x), features(params, x_anchor))


def inner_maximize(
    params: ModelParams,
    x0,
    label: SmoothedLabel,
    cfg: PerturbConfig,
    l0_estimate: float | None = None,
) -> PerturbResult:
    """Run exactly ``cfg.steps`` fixed-size ascent steps on loss - gamma * cost.

    ``objective_trace[t]`` is the objective at the t-th iterate, so entry 0 is
    the plain loss at ``x0``. The label is carried through unchanged.
    """
    x0 = numkit.as_vec(x0, "x0")
    inner = cfg.inner_label(label)
    anchor = features(params, x0)
    x = x0.copy()
    trace = np.empty(cfg.steps + 1)
    for t in range(cfg.steps + 1):
        try:
            value, grad, tr = input_objective(params, x, inner, cfg.gamma, anchor)
        except NumericError as exc:
            raise NumericError(f"ascent step {t}: {exc} (eta={cfg.eta} too large?)") from exc
        if not (math.isfinite(value) and np.all(np.isfinite(grad))):
            raise NumericError(f"non-finite inner objective at ascent step {t} (eta={cfg.eta} too large?)")
        trace[t] = value
        if t < cfg.steps:
            x = x + cfg.eta * grad
    z = tr.feature
    disp = numkit.l2_norm(z - anchor)
    bound = 3.0 * l0_estimate / cfg.gamma if l0_estimate is not None else float("nan")
    return PerturbResult(x, trace, disp, bound, z)


def inner_maximize_batch(
    params: ModelParams,
    X,
    y,
    cfg: PerturbConfig,
    k: int | None = None,
    alpha: float | None = None,
    workers: int = 1,
) -> list[PerturbResult]:
    """Perturb every row of X against the same read-only params.

    Results are independent of ``workers``: each sample's ascent only reads
    ``params``.
    """
    k = params.n_classes if k is None else k
    alpha = cfg.alpha if alpha is None else alpha
    X = np.asarray(X, dtype=np.float64)
    jobs = [(X[i], smooth_labels(int(y[i]), k, alpha)) for i in range(len(X))]
    if workers <= 1:
        return [inner_maximize(params, x, lab, cfg) for x, lab in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: inner_maximize(params, job[0], job[1], cfg), jobs))


def inner_maximize_feature(theta_f, z0, label: SmoothedLabel, cfg: PerturbConfig) -> PerturbResult:
    """Ascent directly over the feature vector, using the closed-form feature gradient."""
    theta_f = numkit.as_mat(theta_f, "theta_f")
    z0 = numkit.as_vec(z0, "z0")
    inner = cfg.inner_label(label)
    z = z0.copy()
    trace = np.empty(cfg.steps + 1)
    for t in range(cfg.steps + 1):
        diff = z - z0
        value = ls_cross_entropy(numkit.softmax(theta_f.T @ z), inner) - 0.5 * cfg.gamma * float(diff @ diff)
        if not math.isfinite(value):
            raise NumericError(f"non-finite feature-space objective at step {t}")
        trace[t] = value
        if t < cfg.steps:
            z = z + cfg.eta * (feature_gradient(theta_f, z, inner.true_class, inner.alpha) - cfg.gamma * diff)
    return PerturbResult(z, trace, numkit.l2_norm(z - z0), float("nan"), z)


def estimate_l0(
    params: ModelParams,
    alpha: float,
    box: tuple[np.ndarray, np.ndarray],
    n_samples: int = 1000,
    seed: int = 0,
    safety: float = 1.5,
) -> float:
    """Sampling estimate of the feature-space Lipschitz constant of the loss.

    ``safety`` times the largest feature-gradient norm seen over ``n_samples``
    uniform draws of x from ``box`` paired with uniform labels.
    """
    if n_samples < 1000:
        raise ConfigError("the L0 estimator needs at least 1000 samples")
    lo, hi = (np.asarray(b, dtype=np.float64) for b in box)
    rng = np.random.default_rng(seed)
    xs = rng.uniform(lo, hi, size=(n_samples, lo.size))
    ys = rng.integers(0, params.n_classes, size=n_samples)
    best = 0.0
    for x, yi in zip(xs, ys):
        g = feature_gradient(params.classifier, forward(params, x).feature, int(yi), alpha)
        best = max(best, numkit.l2_norm(g))
    return safety * best


@dataclass
class DisplacementCheck:
    passed: bool
    margin: float
    bound: float
    displacement: float


def displacement_check(result: PerturbResult, l0_estimate: float, gamma: float) -> DisplacementCheck:
    """Compare the feature displacement with 3 * L0 / gamma; margin = bound - displacement."""
    bound = 3.0 * l0_estimate / gamma
    margin = bound - result.feature_displacement
    return DisplacementCheck(margin >= 0.0, margin, bound, result.feature_displacement)
