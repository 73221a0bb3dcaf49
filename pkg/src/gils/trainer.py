"""GI-LS training loop, ERM baselines, and convergence diagnostics.

Every mode runs the same per-sample loop. For each training sample the
parameters take two SGD steps: one on an "augmented" copy of the sample and
one on the clean sample. In GI-LS the augmented copy comes from the inner
ascent; in the ERM baselines it is the clean sample itself. The baselines
therefore get the same number of updates, and the inner stage is the only
difference between the modes.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Callable

import numpy as np

from .data import Dataset
from .errors import ConfigError, InsufficientDataError, NumericError
from .loss import smooth_labels
from .model import ModelParams, accuracy, init_params, loss_and_grad
from .perturb import PerturbConfig, inner_maximize, inner_maximize_batch

if TYPE_CHECKING:
    from .attacks import AttackConfig

MODES = ("gils", "erm", "erm_ls", "attacked_gils")
DEFAULT_HIDDEN = (16,)

# (params, perturbed x, true class) -> replacement x for the perturbed update
Transform = Callable[[ModelParams, np.ndarray, int], np.ndarray]


def worker_count() -> int:
    """Worker cap from GILS_THREADS (default 1)."""
    raw = os.environ.get("GILS_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"GILS_THREADS must be an integer, got {raw!r}") from None


@dataclass
class GilsConfig:
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    epochs: int = 30
    beta_classifier: float = 1e-2
    beta_features: float = 1e-3
    decay: float = 0.3
    decay_every: int = 20
    seed: int = 0
    mode: str = "gils"
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    # precompute each epoch's perturbations against epoch-start params
    parallel_inner: bool = False
    track_full_gradient: bool = True
    attack: "AttackConfig | None" = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if not (self.beta_classifier > 0 and self.beta_features > 0):
            raise ConfigError("learning rates must be positive")
        if not (0.0 < self.decay <= 1.0):
            raise ConfigError(f"decay must lie in (0, 1], got {self.decay}")
        if self.decay_every < 1:
            raise ConfigError("decay_every must be >= 1")
        self.hidden = tuple(int(h) for h in self.hidden)
        if any(h < 1 for h in self.hidden):
            raise ConfigError(f"hidden widths must be positive, got {self.hidden}")
        if self.mode == "attacked_gils" and self.attack is None:
            raise ConfigError("mode 'attacked_gils' needs an attack configuration")

    @property
    def alpha(self) -> float:
        """Smoothing used for the outer (parameter) updates."""
        return 0.0 if self.mode == "erm" else self.perturb.alpha

    @property
    def perturbs(self) -> bool:
        return self.mode in ("gils", "attacked_gils")

    def learning_rates(self, epoch: int) -> tuple[float, float]:
        scale = self.decay ** (epoch // self.decay_every)
        return self.beta_classifier * scale, self.beta_features * scale


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    grad_sq_norm: float
    test_accuracy: float | None
    lr_classifier: float
    lr_features: float
    displacement_mean: float
    displacement_max: float
    perturbed_updates: int
    clean_updates: int
    params_checksum: str


@dataclass
class TrainReport:
    mode: str
    seed: int
    records: list[EpochRecord] = field(default_factory=list)
    params_checksum: str = ""

    @property
    def train_loss(self) -> np.ndarray:
        return np.array([r.train_loss for r in self.records])

    @property
    def grad_sq_norm(self) -> np.ndarray:
        return np.array([r.grad_sq_norm for r in self.records])

    @property
    def test_accuracy(self) -> np.ndarray:
        return np.array([np.nan if r.test_accuracy is None else r.test_accuracy for r in self.records])

    @property
    def convergence_series(self) -> np.ndarray:
        """Running mean over epochs of the squared full-gradient norm."""
        g = self.grad_sq_norm
        return np.cumsum(g) / np.arange(1, g.size + 1)

    @property
    def final_accuracy(self) -> float | None:
        return self.records[-1].test_accuracy if self.records else None

    def to_jsonl(self) -> str:
        lines = []
        for rec, running in zip(self.records, self.convergence_series):
            row = {"mode": self.mode, "seed": self.seed, **asdict(rec), "running_msq_grad": float(running)}
            lines.append(json.dumps(row))
        return "".join(line + "\n" for line in lines)


def _sgd_step(params: ModelParams, grads: ModelParams, lr_c: float, lr_f: float) -> None:
    for (w, b), (dw, db) in zip(params.hidden, grads.hidden):
        w -= lr_f * dw
        b -= lr_f * db
    params.classifier -= lr_c * grads.classifier


def _perturbed_point(params, x, c, label, cfg: GilsConfig, transform):
    res = inner_maximize(params, x, label, cfg.perturb)
    xp = res.x_perturbed
    if transform is not None:
        xp = transform(params, xp, c)
    return xp, res.feature_displacement


def full_gradient_sq_norm(params: ModelParams, train: Dataset, cfg: GilsConfig, transform: Transform | None = None) -> float:
    """||grad F||^2 with F the mean training objective at ``params``.

    For the perturbing modes the per-sample gradient is taken at the inner
    maximizer (the gradient of the robust surrogate); otherwise at the clean sample.
    """
    total = None
    for x, c in zip(train.X, train.y):
        label = smooth_labels(int(c), train.k, cfg.alpha)
        point = _perturbed_point(params, x, int(c), label, cfg, transform)[0] if cfg.perturbs else x
        g = loss_and_grad(params, point, label)[1].ravel()
        total = g if total is None else total + g
    mean = total / train.n
    return float(mean @ mean)


def _run(cfg: GilsConfig, train: Dataset, test: Dataset | None, init: ModelParams | None,
         transform: Transform | None) -> tuple[ModelParams, TrainReport]:
    if init is None:
        init = init_params([train.feature_dim, *cfg.hidden], train.k, cfg.seed)
    if init.n_classes != train.k:
        raise ConfigError(f"model has {init.n_classes} classes, dataset has k={train.k}")
    if init.input_dim != train.feature_dim:
        raise ConfigError(f"model expects inputs of length {init.input_dim}, dataset has {train.feature_dim}")
    params = init.copy()
    report = TrainReport(cfg.mode, cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    workers = worker_count()
    labels = [smooth_labels(int(c), train.k, cfg.alpha) for c in train.y]

    for epoch in range(cfg.epochs):
        lr_c, lr_f = cfg.learning_rates(epoch)
        gsq = full_gradient_sq_norm(params, train, cfg, transform) if cfg.track_full_gradient else float("nan")
        order = rng.permutation(train.n)
        pre = None
        if cfg.perturbs and cfg.parallel_inner:
            pre = inner_maximize_batch(params, train.X, train.y, cfg.perturb, train.k, cfg.alpha, workers)
        losses, disps = [], []
        n_pert = n_clean = 0
        for i in order:
            x, c, label = train.X[i], int(train.y[i]), labels[i]
            if cfg.perturbs:
                if pre is not None:
                    xp, disp = pre[i].x_perturbed, pre[i].feature_displacement
                    if transform is not None:
                        xp = transform(params, xp, c)
                else:
                    xp, disp = _perturbed_point(params, x, c, label, cfg, transform)
                disps.append(disp)
            else:
                xp = x
            try:
                loss_p, g = loss_and_grad(params, xp, label)
                _sgd_step(params, g, lr_c, lr_f)
                n_pert += 1
                loss_c, g = loss_and_grad(params, x, label)
                _sgd_step(params, g, lr_c, lr_f)
                n_clean += 1
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, sample {int(i)}: {exc}") from exc
            if not (math.isfinite(loss_p) and math.isfinite(loss_c)) or not np.all(np.isfinite(params.classifier)):
                raise NumericError(f"non-finite loss at epoch {epoch}, sample {int(i)}")
            losses.append(loss_c)
        acc = accuracy(params, test.X, test.y) if test is not None else None
        report.records.append(EpochRecord(
            epoch=epoch,
            train_loss=float(np.mean(losses)),
            grad_sq_norm=gsq,
            test_accuracy=acc,
            lr_classifier=lr_c,
            lr_features=lr_f,
            displacement_mean=float(np.mean(disps)) if disps else 0.0,
            displacement_max=float(np.max(disps)) if disps else 0.0,
            perturbed_updates=n_pert,
            clean_updates=n_clean,
            params_checksum=params.checksum(),
        ))
    report.params_checksum = params.checksum()
    return params, report


def train_gils(cfg: GilsConfig, train: Dataset, test: Dataset | None = None, init: ModelParams | None = None,
               transform: Transform | None = None) -> tuple[ModelParams, TrainReport]:
    """GI-LS: inner ascent per sample, then a step on the perturbed and a step on the clean sample."""
    if not cfg.perturbs:
        raise ConfigError(f"train_gils needs mode 'gils' or 'attacked_gils', got {cfg.mode!r}")
    if cfg.mode == "attacked_gils" and transform is None:
        from .attacks import attack_transform

        transform = attack_transform(cfg.attack, train)
    return _run(cfg, train, test, init, transform)


def train_erm(cfg: GilsConfig, train: Dataset, test: Dataset | None = None,
              init: ModelParams | None = None) -> tuple[ModelParams, TrainReport]:
    """Plain SGD baseline: hard labels (mode 'erm') or smoothed labels (mode 'erm_ls')."""
    if cfg.mode not in ("erm", "erm_ls"):
        raise ConfigError(f"train_erm needs mode 'erm' or 'erm_ls', got {cfg.mode!r}")
    return _run(cfg, train, test, init, None)


def train(cfg: GilsConfig, train_set: Dataset, test: Dataset | None = None,
          init: ModelParams | None = None) -> tuple[ModelParams, TrainReport]:
    if cfg.perturbs:
        return train_gils(cfg, train_set, test, init)
    return train_erm(cfg, train_set, test, init)


@dataclass
class ConvergenceSummary:
    initial_msq_grad: float
    final_msq_grad: float
    ratio: float
    slope_vs_1_over_sqrtK: float


def convergence_metrics(report: TrainReport) -> ConvergenceSummary:
    """Ratio of final to initial running mean of ||grad F||^2 and its log-log slope in K.

    A slope of -0.5 is the 1/sqrt(K) rate; anything negative means decay.
    """
    series = report.convergence_series
    if series.size < 5:
        raise InsufficientDataError(f"need at least 5 epochs, report has {series.size}")
    if not np.all(np.isfinite(series)):
        raise InsufficientDataError("report has no full-gradient measurements")
    K = np.arange(1, series.size + 1)
    if np.all(series == series[0]):
        slope = 0.0
    else:
        slope = float(np.polyfit(np.log(K), np.log(np.maximum(series, np.finfo(float).tiny)), 1)[0])
    initial, final = float(series[0]), float(series[-1])
    ratio = final / initial if initial > 0 else (1.0 if final == initial else math.inf)
    return ConvergenceSummary(initial, final, ratio, slope)
