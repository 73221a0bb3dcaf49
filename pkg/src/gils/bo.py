"""Gaussian-process Bayesian optimization over GI-LS hyperparameters.

Matern 5/2 kernel with per-dimension lengthscales picked from a grid by
marginal likelihood, expected improvement maximized over random candidates
plus a short coordinate search. All points live in the unit cube; integer
hyperparameters are rounded when a point is decoded.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_solve, cholesky
from scipy.stats import norm, qmc

from .errors import ConfigError, FitError

LENGTHSCALE_GRID = tuple(round(0.1 * i, 1) for i in range(1, 21))
JITTER_START = 1e-6
JITTER_MAX = 1e-2
N_CANDIDATES = 1024
REFINE_STEPS = 20


def matern52(r, lengthscale: float = 1.0, variance: float = 1.0):
    """variance * (1 + sqrt5 r/l + 5 r^2 / (3 l^2)) * exp(-sqrt5 r/l)."""
    if not lengthscale > 0:
        raise ConfigError(f"lengthscale must be positive, got {lengthscale}")
    s = math.sqrt(5.0) * np.asarray(r, dtype=np.float64) / lengthscale
    out = variance * (1.0 + s + s * s / 3.0) * np.exp(-s)
    return float(out) if out.ndim == 0 else out


def _scaled_dist(A: np.ndarray, B: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    a = A / lengthscales
    b = B / lengthscales
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.sqrt(np.maximum(sq, 0.0))


def kernel_matrix(A, B, lengthscales) -> np.ndarray:
    """Unit-variance Matern 5/2 correlation between the rows of A and B."""
    return matern52(_scaled_dist(np.atleast_2d(A), np.atleast_2d(B), np.asarray(lengthscales, dtype=np.float64)))


@dataclass
class GpPosterior:
    X: np.ndarray
    y: np.ndarray
    y_mean: float
    y_std: float
    lengthscales: np.ndarray
    signal_variance: float
    jitter: float
    chol: np.ndarray
    weights: np.ndarray
    log_marginal_likelihood: float

    @property
    def noise_std(self) -> float:
        """Jitter expressed as a noise standard deviation on the raw target scale."""
        return self.y_std * math.sqrt(self.signal_variance * self.jitter)

    def predict(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation (raw target scale) at the rows of Xq."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=np.float64))
        r = kernel_matrix(Xq, self.X, self.lengthscales)
        mean = self.y_mean + self.y_std * (r @ self.weights)
        v = cho_solve((self.chol, True), r.T)
        var = self.signal_variance * (1.0 - np.einsum("ij,ji->i", r, v))
        var[(var < 0) & (var > -1e-12)] = 0.0
        var = np.maximum(var, 0.0)
        return mean, self.y_std * np.sqrt(var)


def _factor(R: np.ndarray):
    jitter = JITTER_START
    n = R.shape[0]
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            L = cholesky(R + jitter * np.eye(n), lower=True)
            if np.all(np.diag(L) > 0):
                return L, jitter
        except np.linalg.LinAlgError:
            pass
        jitter *= 10.0
    return None, None


def _profile(X, ys, lengthscales):
    """Log marginal likelihood with the signal variance profiled out."""
    L, jitter = _factor(kernel_matrix(X, X, lengthscales))
    if L is None:
        return None
    n = ys.size
    w = cho_solve((L, True), ys)
    quad = float(ys @ w)
    # constant targets standardize to zero; any variance fits them equally well
    var = quad / n if quad > 0 else 1.0
    logdet = 2.0 * float(np.log(np.diag(L)).sum())
    lml = -0.5 * n * math.log(var) - 0.5 * logdet - 0.5 * quad / var - 0.5 * n * math.log(2 * math.pi)
    return lml, var, L, jitter, w


def fit_gp(X, y, grid: Sequence[float] = LENGTHSCALE_GRID, sweeps: int = 2) -> GpPosterior:
    """Fit on raw targets y; they are standardized internally."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] < 2:
        raise FitError(f"gp_fit needs at least 2 observations, got {X.shape[0]}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise FitError("gp_fit needs finite points and targets")
    y_mean = float(y.mean())
    y_std = float(y.std())
    if y_std == 0.0:
        y_std = 1.0
    ys = (y - y_mean) / y_std
    d = X.shape[1]

    best = None
    for ell in grid:
        res = _profile(X, ys, np.full(d, ell))
        if res is not None and (best is None or res[0] > best[0][0]):
            best = (res, np.full(d, ell))
    if best is None:
        raise FitError("kernel matrix singular even at the maximum jitter")
    for _ in range(sweeps):
        for dim in range(d):
            for ell in grid:
                trial = best[1].copy()
                trial[dim] = ell
                res = _profile(X, ys, trial)
                if res is not None and res[0] > best[0][0]:
                    best = (res, trial)
    (lml, var, L, jitter, w), ls = best
    return GpPosterior(X, y, y_mean, y_std, ls, var, jitter, L, w, lml)


def gp_fit(trials: Sequence["Trial"]) -> GpPosterior:
    """Fit the surrogate on the successful trials."""
    ok = [t for t in trials if t.objective is not None]
    if len(ok) < 2:
        raise FitError(f"gp_fit needs at least 2 completed trials, got {len(ok)}")
    return fit_gp(np.array([t.point for t in ok]), np.array([t.objective for t in ok]))


def ei_from_moments(mu, sigma, incumbent: float):
    """Closed-form expected improvement for maximization."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    imp = mu - incumbent
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        u = np.where(sigma > 0, imp / np.where(sigma > 0, sigma, 1.0), 0.0)
        ei = np.where(sigma > 0, imp * norm.cdf(u) + sigma * norm.pdf(u), np.maximum(imp, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def expected_improvement(post: GpPosterior, x, incumbent: float):
    mu, sigma = post.predict(x)
    out = ei_from_moments(mu, sigma, incumbent)
    return float(out[0]) if np.ndim(x) == 1 else out


# --- search space ----------------------------------------------------------

@dataclass(frozen=True)
class Dim:
    name: str
    lo: float
    hi: float
    integer: bool = False


DEFAULT_DIMS = (
    Dim("alpha", 0.0, 0.5),
    Dim("steps", 1, 15, integer=True),
    Dim("eta", 1.5, 3.0),
    Dim("epochs", 21, 60, integer=True),
)


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple[Dim, ...] = DEFAULT_DIMS

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    def _decode_one(self, dim: Dim, u: float):
        v = dim.lo + (dim.hi - dim.lo) * min(max(float(u), 0.0), 1.0)
        if dim.integer:
            return int(math.floor(v + 0.5))
        return min(max(v, dim.lo), dim.hi)

    def decode(self, u) -> dict:
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (len(self.dims),):
            raise ConfigError(f"point must have {len(self.dims)} coordinates")
        return {d.name: self._decode_one(d, ui) for d, ui in zip(self.dims, u)}

    def encode(self, config: dict) -> np.ndarray:
        """Unit-cube point that decodes back to exactly ``config``."""
        out = []
        for d in self.dims:
            v = config[d.name]
            if not (d.lo <= v <= d.hi):
                raise ConfigError(f"{d.name}={v} outside [{d.lo}, {d.hi}]")
            u = (v - d.lo) / (d.hi - d.lo)
            # nudge by a few ulps when float rounding breaks the round trip
            if self._decode_one(d, u) != v:
                for cand in _ulp_neighbours(u):
                    if self._decode_one(d, cand) == v:
                        u = cand
                        break
            out.append(u)
        return np.array(out)

    def round_point(self, u) -> np.ndarray:
        return self.encode(self.decode(u))

    def contains(self, config: dict) -> bool:
        return all(d.lo <= config[d.name] <= d.hi and (not d.integer or config[d.name] == int(config[d.name]))
                   for d in self.dims)


def _ulp_neighbours(u: float, reach: int = 8):
    up = down = u
    for _ in range(reach):
        up = math.nextafter(up, math.inf)
        down = math.nextafter(down, -math.inf)
        yield up
        yield down


# --- search loop -----------------------------------------------------------

@dataclass
class Trial:
    index: int
    point: list[float]
    config: dict
    objective: float | None
    seed: int
    # logical clock (trial order), so traces stay byte-reproducible
    timestamp: int
    phase: str = "init"
    error: str | None = None
    incumbent_sigma: float | None = None

    @property
    def failed(self) -> bool:
        return self.objective is None

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, line: str) -> "Trial":
        return cls(**json.loads(line))


@dataclass
class BoResult:
    best: Trial | None
    trace: list[float] = field(default_factory=list)
    trials: list[Trial] = field(default_factory=list)


def incumbent_trace(trials: Sequence[Trial]) -> list[float]:
    best = -math.inf
    out = []
    for t in trials:
        if t.objective is not None:
            best = max(best, t.objective)
        out.append(best)
    return out


def _refine(post: GpPosterior, u: np.ndarray, incumbent: float, steps: int) -> np.ndarray:
    best = u.copy()
    best_ei = expected_improvement(post, best, incumbent)
    delta = 0.05
    for _ in range(steps):
        improved = False
        for dim in range(u.size):
            for sgn in (1.0, -1.0):
                cand = best.copy()
                cand[dim] = min(max(cand[dim] + sgn * delta, 0.0), 1.0)
                ei = expected_improvement(post, cand, incumbent)
                if ei > best_ei:
                    best, best_ei, improved = cand, ei, True
        if not improved:
            delta /= 2.0
    return best


def propose(trials: Sequence[Trial], space: SearchSpace, rng: np.random.Generator) -> tuple[np.ndarray, float | None]:
    """Next point by EI; falls back to a uniform draw before two trials have succeeded."""
    ok = [t for t in trials if t.objective is not None]
    d = len(space.dims)
    if len(ok) < 2:
        return rng.uniform(size=d), None
    post = gp_fit(ok)
    incumbent = max(t.objective for t in ok)
    cands = rng.uniform(size=(N_CANDIDATES, d))
    ei = expected_improvement(post, cands, incumbent)
    u = _refine(post, cands[int(np.argmax(ei))], incumbent, REFINE_STEPS)
    best_point = np.array(max(ok, key=lambda t: t.objective).point)
    sigma = float(post.predict(best_point)[1][0])
    return u, sigma


def bo_search(
    objective: Callable[[dict, int], float],
    space: SearchSpace | None = None,
    n_init: int = 5,
    n_iter: int = 20,
    seed: int = 0,
    previous: Sequence[Trial] = (),
    on_trial: Callable[[Trial], None] | None = None,
) -> BoResult:
    """Quasi-random initial design followed by EI-guided trials.

    ``previous`` resumes an interrupted search: those trials are kept as-is and
    only the missing ones are evaluated. Proposals depend only on (seed, trial
    index, earlier results), so a resumed run matches an uninterrupted one.
    """
    space = space or SearchSpace()
    d = len(space.dims)
    init = qmc.Halton(d=d, scramble=True, seed=np.random.default_rng([seed, 0])).random(max(n_init, 1))
    trials = list(previous)
    for i in range(len(trials), n_init + n_iter):
        sigma = None
        if i < n_init:
            u, phase = init[i], "init"
        else:
            u, sigma = propose(trials, space, np.random.default_rng([seed, 1, i]))
            phase = "bo"
        u = space.round_point(u)
        config = space.decode(u)
        try:
            value = float(objective(config, seed))
            if not math.isfinite(value):
                raise ValueError(f"objective returned {value}")
            err = None
        except Exception as exc:  # noqa: BLE001 - a failed trial is recorded, not fatal
            value, err = None, f"{type(exc).__name__}: {exc}"
        trial = Trial(i, [float(v) for v in u], config, value, seed, i, phase, err, sigma)
        trials.append(trial)
        if on_trial is not None:
            on_trial(trial)
    ok = [t for t in trials if t.objective is not None]
    best = max(ok, key=lambda t: t.objective) if ok else None
    return BoResult(best, incumbent_trace(trials), trials)
