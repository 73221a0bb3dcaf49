"""Label smoothing, smoothed cross-entropy and the closed-form surrogate.

Notation: ``theta_f`` is the t x k classification matrix whose column j is
the class vector for class j; ``z`` is a length-t feature vector and the
logits are ``theta_f.T @ z``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit
from .errors import ConfigError, DimensionError

LOG_CLAMP = 1e-300


@dataclass(frozen=True)
class SmoothedLabel:
    probs: np.ndarray
    true_class: int
    alpha: float

    @property
    def k(self) -> int:
        return self.probs.size


def _check_alpha(alpha: float) -> None:
    if not (0.0 <= alpha < 1.0):
        raise ConfigError(f"alpha must lie in [0, 1), got {alpha}")


def smooth_labels(true_class: int, k: int, alpha: float) -> SmoothedLabel:
    """(1 - alpha) on the true class, alpha / (k - 1) on every other class."""
    _check_alpha(alpha)
    if k < 2:
        raise ConfigError(f"need at least 2 classes, got k={k}")
    if not (0 <= true_class < k):
        raise ConfigError(f"true_class {true_class} outside 0..{k - 1}")
    probs = np.full(k, alpha / (k - 1))
    probs[true_class] = 1.0 - alpha
    residual = 1.0 - probs.sum()
    if residual != 0.0:
        probs[-1] += residual
    probs.flags.writeable = False
    return SmoothedLabel(probs, int(true_class), float(alpha))


def hard_label(true_class: int, k: int) -> SmoothedLabel:
    return smooth_labels(true_class, k, 0.0)


def ls_cross_entropy(probs, label: SmoothedLabel) -> float:
    p = numkit.as_vec(probs, "probs")
    if p.size != label.k:
        raise DimensionError(f"probs has {p.size} entries, label has {label.k}")
    return float(-np.dot(label.probs, np.log(np.maximum(p, LOG_CLAMP))))


def label_weighted_mean(theta_f: np.ndarray, true_class: int, alpha: float) -> np.ndarray:
    """(1-alpha) theta_{f,i} + alpha/(k-1) * sum_{j != i} theta_{f,j}."""
    k = theta_f.shape[1]
    others = theta_f.sum(axis=1) - theta_f[:, true_class]
    return (1.0 - alpha) * theta_f[:, true_class] + (alpha / (k - 1)) * others


def feature_gradient(theta_f, z, true_class: int, alpha: float) -> np.ndarray:
    """Gradient of the smoothed cross-entropy with respect to the feature z.

    Returns ``sum_j p_j theta_{f,j} - [(1-alpha) theta_{f,i} + alpha/(k-1) sum_{j!=i} theta_{f,j}]``,
    i.e. the true gradient (pointing uphill). Ascent on the loss adds it.
    """
    theta_f = numkit.as_mat(theta_f, "theta_f")
    z = numkit.as_vec(z, "z")
    _check_alpha(alpha)
    t, k = theta_f.shape
    if z.size != t:
        raise DimensionError(f"feature has length {z.size}, classifier expects {t}")
    if not (0 <= true_class < k):
        raise DimensionError(f"true_class {true_class} outside 0..{k - 1}")
    p = numkit.softmax(theta_f.T @ z)
    return theta_f @ p - label_weighted_mean(theta_f, true_class, alpha)


def lipschitz_constant(theta_f) -> float:
    """L(theta) = sum_j ||theta_{f,j}|| * max_j' ||theta_{f,j'}||."""
    norms = np.linalg.norm(numkit.as_mat(theta_f, "theta_f"), axis=0)
    if norms.size == 0:
        return 0.0
    return float(norms.sum() * norms.max())


@dataclass
class SurrogateReport:
    ls_loss: float
    grad_feature: np.ndarray
    penalty: float
    surrogate: float
    lower_bound: float
    upper_bound: float
    lipschitz: float
    bounds_available: bool
    convention: str


# Weight on ||grad||^2 for (surrogate, lower, upper), as functions of (gamma, L).
# "halved" is the closed form of sup_z { l(z) - gamma/2 ||z - z'||^2 } with a
# curvature bounded by L; "unhalved" drops the factor 1/2 throughout.
_CONVENTIONS = {
    "halved": (lambda g, L: 0.5 / g, lambda g, L: 0.5 / (g + L), lambda g, L: 0.5 / (g - L)),
    "unhalved": (lambda g, L: 1.0 / g, lambda g, L: 1.0 / (g + L), lambda g, L: 1.0 / (g - L)),
}


def surrogate_from_feature(
    theta_f, z, label: SmoothedLabel, gamma: float, convention: str = "halved"
) -> SurrogateReport:
    """Surrogate report evaluated directly at a feature vector ``z``."""
    if gamma <= 0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    if convention not in _CONVENTIONS:
        raise ConfigError(f"unknown convention {convention!r}")
    theta_f = numkit.as_mat(theta_f, "theta_f")
    z = numkit.as_vec(z, "z")
    p = numkit.softmax(theta_f.T @ z)
    ls = ls_cross_entropy(p, label)
    g = feature_gradient(theta_f, z, label.true_class, label.alpha)
    gsq = float(np.dot(g, g))
    lip = lipschitz_constant(theta_f)
    w_mid, w_lo, w_hi = _CONVENTIONS[convention]
    penalty = w_mid(gamma, lip) * gsq
    available = gamma > lip
    if available:
        lower = ls + w_lo(gamma, lip) * gsq
        upper = ls + w_hi(gamma, lip) * gsq
    else:
        lower = upper = float("nan")
    return SurrogateReport(
        ls_loss=ls,
        grad_feature=g,
        penalty=penalty,
        surrogate=ls + penalty,
        lower_bound=lower,
        upper_bound=upper,
        lipschitz=lip,
        bounds_available=available,
        convention=convention,
    )


def surrogate(params, x, label: SmoothedLabel, gamma: float, convention: str = "halved") -> SurrogateReport:
    """Closed-form robust surrogate at the feature of input ``x``.

    Bounds are NaN (and ``bounds_available`` False) unless gamma > L(theta).
    """
    from .model import features

    return surrogate_from_feature(params.classifier, features(params, x), label, gamma, convention)
