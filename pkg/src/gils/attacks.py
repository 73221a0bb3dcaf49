"""Baseline adversarial perturbers: FGSM, PGD (L-inf / L2) and a CW-style margin attack.

All attacks use hard labels and clip to the dataset's domain box.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numkit
from .data import Dataset
from .errors import ConfigError
from .loss import hard_label
from .model import ModelParams, accuracy, forward, input_objective, predict, vjp_input

KINDS = ("fgsm", "pgd_linf", "pgd_l2", "cw_linf")
DEFAULT_EPSILON = 8 / 225


@dataclass
class AttackConfig:
    kind: str = "pgd_linf"
    epsilon: float = DEFAULT_EPSILON
    steps: int = 10
    # None means epsilon / 4
    step_size: float | None = None
    kappa: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"attack kind must be one of {KINDS}, got {self.kind!r}")
        if not self.epsilon >= 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.kind != "fgsm" and self.steps < 1:
            raise ConfigError("iterative attacks need steps >= 1")
        if self.step_size is not None and not self.step_size >= 0:
            raise ConfigError("step_size must be >= 0")
        if not self.kappa >= 0:
            raise ConfigError("kappa must be >= 0")

    @property
    def step(self) -> float:
        return self.epsilon / 4 if self.step_size is None else self.step_size


def _clip(x: np.ndarray, box) -> np.ndarray:
    return x if box is None else np.clip(x, box[0], box[1])


def _loss_grad(params: ModelParams, x: np.ndarray, label: int) -> np.ndarray:
    return input_objective(params, x, hard_label(label, params.n_classes))[1]


def fgsm(params: ModelParams, x, label: int, eps: float, box=None) -> np.ndarray:
    """One signed-gradient step of size eps on the hard-label loss."""
    x = numkit.as_vec(x, "x")
    if eps < 0:
        raise ConfigError("eps must be >= 0")
    if eps == 0:
        return x.copy()
    return _clip(x + eps * np.sign(_loss_grad(params, x, label)), box)


def project_linf(x_adv: np.ndarray, x: np.ndarray, eps: float) -> np.ndarray:
    return np.clip(x_adv, x - eps, x + eps)


def project_l2(x_adv: np.ndarray, x: np.ndarray, eps: float) -> np.ndarray:
    d = x_adv - x
    n = numkit.l2_norm(d)
    if n <= eps:
        return x_adv
    return x + d * (eps / n)


def pgd(params: ModelParams, x, label: int, cfg: AttackConfig, box=None,
        callback: Callable[[np.ndarray], None] | None = None) -> np.ndarray:
    """Projected ascent inside the eps-ball around x (L-inf or L2 per ``cfg.kind``).

    Starts at x (no random start). ``callback`` sees every iterate.
    """
    x = numkit.as_vec(x, "x")
    if cfg.epsilon == 0:
        return x.copy()
    l2 = cfg.kind == "pgd_l2"
    xa = x.copy()
    for _ in range(cfg.steps):
        g = _loss_grad(params, xa, label)
        if l2:
            gn = numkit.l2_norm(g)
            step = g * (cfg.step / gn) if gn > 0 else np.zeros_like(g)
            xa = _clip(project_l2(xa + step, x, cfg.epsilon), box)
        else:
            xa = _clip(project_linf(xa + cfg.step * np.sign(g), x, cfg.epsilon), box)
        if callback is not None:
            callback(xa)
    return xa


def margin(params: ModelParams, x, label: int) -> float:
    """logit_true - max_{j != true} logit_j."""
    logits = forward(params, x).logits
    return float(logits[label] - np.max(np.delete(logits, label)))


def cw_linf(params: ModelParams, x, label: int, cfg: AttackConfig, box=None) -> np.ndarray:
    """Signed descent on max(margin, -kappa) inside the eps-box; returns the best-margin iterate.

    Once the margin drops below -kappa the clamped loss is flat and the
    iterate stops moving.
    """
    x = numkit.as_vec(x, "x")
    if cfg.epsilon == 0:
        return x.copy()
    best, best_m = x.copy(), margin(params, x, label)
    xa = x.copy()
    for _ in range(cfg.steps):
        tr = forward(params, xa)
        others = np.delete(np.arange(params.n_classes), label)
        j = others[np.argmax(tr.logits[others])]
        m = tr.logits[label] - tr.logits[j]
        if m <= -cfg.kappa:
            break
        dz = params.classifier[:, label] - params.classifier[:, j]
        g = vjp_input(params, tr, dz)
        xa = _clip(project_linf(xa - cfg.step * np.sign(g), x, cfg.epsilon), box)
        m_new = margin(params, xa, label)
        if m_new < best_m:
            best, best_m = xa.copy(), m_new
    return best


def attack(params: ModelParams, x, label: int, cfg: AttackConfig, box=None) -> np.ndarray:
    if cfg.kind == "fgsm":
        return fgsm(params, x, label, cfg.epsilon, box)
    if cfg.kind in ("pgd_linf", "pgd_l2"):
        return pgd(params, x, label, cfg, box)
    return cw_linf(params, x, label, cfg, box)


def attack_dataset(params: ModelParams, data: Dataset, cfg: AttackConfig) -> np.ndarray:
    return np.array([attack(params, x, int(c), cfg, data.domain_box) for x, c in zip(data.X, data.y)])


def attacked_accuracy(params: ModelParams, data: Dataset, cfg: AttackConfig) -> float:
    if cfg.epsilon == 0:
        return accuracy(params, data.X, data.y)
    return float(np.mean(predict(params, attack_dataset(params, data, cfg)) == data.y))


def attack_transform(cfg: AttackConfig, data: Dataset):
    """Training hook that attacks each GI-LS-perturbed sample before its update."""
    if cfg is None:
        raise ConfigError("missing attack configuration")
    # perturbed samples may leave the data box; clip to the box widened to contain them
    lo, hi = data.domain_box

    def transform(params: ModelParams, xp: np.ndarray, label: int) -> np.ndarray:
        box = (np.minimum(lo, xp), np.maximum(hi, xp))
        return attack(params, xp, label, cfg, box)

    return transform


def attack_then_gils(cfg_attack: AttackConfig | None, cfg_gils, data: Dataset, test: Dataset | None = None,
                     init: ModelParams | None = None):
    """GI-LS where each generated sample is attacked before its parameter update.

    Returns (params, report). With epsilon = 0 this reproduces ``train_gils``
    bit for bit.
    """
    from .trainer import train_gils

    if cfg_attack is None:
        raise ConfigError("missing attack kind: an AttackConfig is required")
    cfg = dataclasses.replace(cfg_gils, mode="attacked_gils", attack=cfg_attack)
    return train_gils(cfg, data, test, init, attack_transform(cfg_attack, data))
