"""Independent reference implementations used only by the tests.

Nothing here imports the package's numerical code paths: these recompute
values by straight-line loops, finite differences, scipy routines or mpmath.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

# Frozen high-precision values (mpmath, 50 significant digits).
# (1 + sqrt5 + 5/3) * exp(-sqrt5)
MATERN52_AT_ONE = 0.52399410883182031059271325076
# 1 / sqrt(2 pi): EI with mu = 0, sigma = 1, incumbent = 0
INV_SQRT_2PI = 0.398942280401432677939946059934

FD_STEP = 1e-5


def central_diff(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of a flat vector."""
    x = np.array(x, dtype=np.float64)
    out = np.empty_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + h
        up = f(x)
        x[i] = old - h
        down = f(x)
        x[i] = old
        out[i] = (up - down) / (2 * h)
    return out


def rel_err(analytic, numeric) -> float:
    """max |a - n| scaled by the larger infinity norm (floored at 1e-12)."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)), 1e-12)
    return float(np.max(np.abs(a - n)) / scale)


def smoothed_target(true_class: int, k: int, alpha: float) -> list[float]:
    return [1 - alpha if j == true_class else alpha / (k - 1) for j in range(k)]


def ce_loop(logits, target) -> float:
    """-sum y_j log softmax(logits)_j via an explicit log-sum-exp loop."""
    m = max(logits)
    lse = m + math.log(sum(math.exp(v - m) for v in logits))
    return -sum(y * (v - lse) for y, v in zip(target, logits))


def forward_loop(layers, classifier, x):
    """Straight-line MLP forward pass: returns (feature, logits, probs) as lists."""
    a = [float(v) for v in x]
    for w, b in layers:
        a = [math.tanh(sum(w[i][j] * a[j] for j in range(len(a))) + b[i]) for i in range(len(b))]
    t, k = len(classifier), len(classifier[0])
    logits = [sum(classifier[r][c] * a[r] for r in range(t)) for c in range(k)]
    m = max(logits)
    e = [math.exp(v - m) for v in logits]
    s = sum(e)
    return a, logits, [v / s for v in e]


def loss_in_feature(theta_f: np.ndarray, z: np.ndarray, target: np.ndarray) -> float:
    logits = theta_f.T @ z
    return float(logsumexp(logits) - target @ logits)


def inner_sup_oracle(theta_f, z0, target, gamma, restarts: int = 20, seed: int = 0) -> float:
    """sup_z loss(z) - gamma/2 ||z - z0||^2 by multi-start L-BFGS.

    Uses finite-difference gradients of a log-sum-exp loss, so it shares no
    code with the package. Restarts are spread over a ball whose radius covers
    every possible maximizer.
    """
    theta_f = np.asarray(theta_f, dtype=np.float64)
    z0 = np.asarray(z0, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    rng = np.random.default_rng(seed)
    # the loss is Lipschitz with constant 2 max_j ||theta_j||; maximizers lie within that / gamma
    radius = 2.0 * np.linalg.norm(theta_f, axis=0).max() / gamma

    def neg(z):
        d = z - z0
        return -(loss_in_feature(theta_f, z, target) - 0.5 * gamma * float(d @ d))

    best = -neg(z0)
    for r in range(restarts):
        start = z0.copy() if r == 0 else z0 + rng.uniform(-radius, radius, z0.size)
        res = minimize(neg, start, method="L-BFGS-B", options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 2000})
        best = max(best, -float(res.fun))
    return best


def bayes_accuracy_two_blobs(X, y, mean0, mean1) -> float:
    """Accuracy of the midpoint-hyperplane rule (Bayes-optimal for equal unit covariances)."""
    w = mean1 - mean0
    b = -0.5 * (mean1 @ mean1 - mean0 @ mean0)
    pred = (X @ w + b > 0).astype(int)
    return float(np.mean(pred == y))


def nearest_mean_accuracy(train_X, train_y, test_X, test_y, k) -> float:
    means = np.array([train_X[train_y == c].mean(axis=0) for c in range(k)])
    d = ((test_X[:, None, :] - means[None]) ** 2).sum(-1)
    return float(np.mean(np.argmin(d, axis=1) == test_y))
