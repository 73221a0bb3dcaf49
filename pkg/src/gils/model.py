"""Tanh MLP feature extractor plus a linear classification layer.

Manual forward and backward passes; everything is per-sample float64.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numkit
from ._io import atomic_write_text
from .errors import ConfigError, DataFormatError, DimensionError
from .loss import SmoothedLabel, ls_cross_entropy


@dataclass
class ModelParams:
    """hidden: list of (W, b) with W shaped (out, in); classifier: t x k."""

    hidden: list[tuple[np.ndarray, np.ndarray]]
    classifier: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        prev = None
        for i, (w, b) in enumerate(self.hidden):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise DimensionError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if prev is not None and w.shape[1] != prev:
                raise DimensionError(f"layer {i} expects width {w.shape[1]}, previous layer gives {prev}")
            prev = w.shape[0]
        if self.classifier.ndim != 2:
            raise DimensionError("classifier must be a t x k matrix")
        if prev is not None and self.classifier.shape[0] != prev:
            raise DimensionError(f"classifier expects t={self.classifier.shape[0]}, extractor gives {prev}")
        if self.classifier.shape[1] < 2:
            raise DimensionError("classifier needs k >= 2 columns")
        for a in self.arrays():
            numkit.check_finite(a, "model parameters")

    @property
    def input_dim(self) -> int:
        return self.hidden[0][0].shape[1] if self.hidden else self.classifier.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.classifier.shape[0]

    @property
    def n_classes(self) -> int:
        return self.classifier.shape[1]

    @property
    def arch(self) -> list[int]:
        return [self.input_dim] + [w.shape[0] for w, _ in self.hidden] + [self.n_classes]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in self.hidden:
            out += [w, b]
        out.append(self.classifier)
        return out

    def copy(self) -> "ModelParams":
        return ModelParams([(w.copy(), b.copy()) for w, b in self.hidden], self.classifier.copy(), self.seed)

    def ravel(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, flat) -> "ModelParams":
        """New params with this structure and values taken from ``flat``."""
        flat = np.asarray(flat, dtype=np.float64)
        pos = 0
        taken = []
        for a in self.arrays():
            taken.append(flat[pos:pos + a.size].reshape(a.shape).copy())
            pos += a.size
        if pos != flat.size:
            raise DimensionError(f"flat vector has {flat.size} entries, params need {pos}")
        hidden = [(taken[2 * i], taken[2 * i + 1]) for i in range(len(self.hidden))]
        return ModelParams(hidden, taken[-1], self.seed)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for a in self.arrays():
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()


def init_params(sizes: Sequence[int], k: int, seed: int) -> ModelParams:
    """sizes = [input_dim, hidden_1, ..., feature_dim]; uniform(+-1/sqrt(fan_in)) init."""
    if len(sizes) < 1 or any(s < 1 for s in sizes):
        raise ConfigError(f"invalid layer sizes {list(sizes)}")
    if k < 2:
        raise ConfigError(f"need k >= 2, got {k}")
    rng = np.random.default_rng(seed)
    hidden = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = 1.0 / np.sqrt(fan_in)
        hidden.append((rng.uniform(-lim, lim, (fan_out, fan_in)), rng.uniform(-lim, lim, fan_out)))
    lim = 1.0 / np.sqrt(sizes[-1])
    return ModelParams(hidden, rng.uniform(-lim, lim, (sizes[-1], k)), seed)


@dataclass
class ForwardTrace:
    x: np.ndarray
    pre: list[np.ndarray] = field(default_factory=list)
    acts: list[np.ndarray] = field(default_factory=list)
    feature: np.ndarray | None = None
    logits: np.ndarray | None = None
    probs: np.ndarray | None = None


def forward(params: ModelParams, x) -> ForwardTrace:
    x = numkit.as_vec(x, "x")
    if x.size != params.input_dim:
        raise DimensionError(f"input has length {x.size}, model expects {params.input_dim}")
    tr = ForwardTrace(x)
    a = x
    for w, b in params.hidden:
        h = w @ a + b
        a = np.tanh(h)
        tr.pre.append(h)
        tr.acts.append(a)
    tr.feature = a
    tr.logits = params.classifier.T @ a
    tr.probs = numkit.softmax(tr.logits)
    return tr


def features(params: ModelParams, x) -> np.ndarray:
    return forward(params, x).feature


def predict(params: ModelParams, X) -> np.ndarray:
    """Batched argmax prediction for the rows of X."""
    a = np.atleast_2d(np.asarray(X, dtype=np.float64))
    for w, b in params.hidden:
        a = np.tanh(a @ w.T + b)
    return np.argmax(a @ params.classifier, axis=1)


def accuracy(params: ModelParams, X, y) -> float:
    y = np.asarray(y)
    if y.size == 0:
        return float("nan")
    return float(np.mean(predict(params, X) == y))


def _backprop_extractor(params: ModelParams, tr: ForwardTrace, dz: np.ndarray, want_params: bool):
    """Push dL/dfeature back through the tanh layers.

    Returns (list of (dW, db) in layer order or None, dL/dx).
    """
    grads = []
    delta = dz
    for i in range(len(params.hidden) - 1, -1, -1):
        w, _ = params.hidden[i]
        dh = delta * (1.0 - tr.acts[i] ** 2)
        if want_params:
            a_prev = tr.acts[i - 1] if i > 0 else tr.x
            grads.append((np.outer(dh, a_prev), dh))
        delta = w.T @ dh
    grads.reverse()
    return (grads if want_params else None), delta


def loss_and_grad(params: ModelParams, x, label: SmoothedLabel) -> tuple[float, ModelParams]:
    """Smoothed cross-entropy at x and its gradient with respect to every parameter."""
    tr = forward(params, x)
    if label.k != params.n_classes:
        raise DimensionError(f"label has {label.k} classes, model has {params.n_classes}")
    dlogits = tr.probs - label.probs
    d_classifier = np.outer(tr.feature, dlogits)
    dz = params.classifier @ dlogits
    layer_grads, _ = _backprop_extractor(params, tr, dz, want_params=True)
    return ls_cross_entropy(tr.probs, label), ModelParams(layer_grads, d_classifier, params.seed)


def grad_params(params: ModelParams, x, label: SmoothedLabel) -> ModelParams:
    return loss_and_grad(params, x, label)[1]


def vjp_input(params: ModelParams, tr: ForwardTrace, dfeature) -> np.ndarray:
    """Gradient with respect to the input of a scalar whose feature-gradient is ``dfeature``."""
    return _backprop_extractor(params, tr, np.asarray(dfeature, dtype=np.float64), want_params=False)[1]


def input_objective(
    params: ModelParams,
    x,
    label: SmoothedLabel,
    gamma: float = 0.0,
    anchor_feature: np.ndarray | None = None,
) -> tuple[float, np.ndarray, ForwardTrace]:
    """Value and input-gradient of ``loss(x) - gamma * 0.5 * ||f(x) - anchor_feature||^2``.

    Without an anchor the transport term is dropped.
    """
    if gamma < 0:
        raise ConfigError(f"gamma must be >= 0, got {gamma}")
    tr = forward(params, x)
    if label.k != params.n_classes:
        raise DimensionError(f"label has {label.k} classes, model has {params.n_classes}")
    value = ls_cross_entropy(tr.probs, label)
    dz = params.classifier @ (tr.probs - label.probs)
    if anchor_feature is not None and gamma > 0:
        diff = tr.feature - anchor_feature
        value -= 0.5 * gamma * float(np.dot(diff, diff))
        dz = dz - gamma * diff
    return value, vjp_input(params, tr, dz), tr


def grad_input(params: ModelParams, x, label: SmoothedLabel, gamma: float = 0.0, anchor=None) -> np.ndarray:
    """Input gradient of the inner objective, transport cost anchored at ``anchor``."""
    anchor_feature = None if anchor is None else features(params, anchor)
    return input_objective(params, x, label, gamma, anchor_feature)[1]


# --- checkpoints -----------------------------------------------------------

def to_json_dict(params: ModelParams) -> dict:
    return {
        "arch": params.arch,
        "seed": params.seed,
        "layers": [{"w": w.tolist(), "b": b.tolist()} for w, b in params.hidden],
        "classifier": params.classifier.tolist(),
    }


def from_json_dict(d: dict) -> ModelParams:
    try:
        hidden = [
            (np.array(layer["w"], dtype=np.float64).reshape(len(layer["w"]), -1), np.array(layer["b"], dtype=np.float64))
            for layer in d["layers"]
        ]
        params = ModelParams(hidden, np.array(d["classifier"], dtype=np.float64), d.get("seed"))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"malformed checkpoint: {exc}") from exc
    if "arch" in d and list(d["arch"]) != params.arch:
        raise DataFormatError(f"checkpoint arch {d['arch']} does not match its weights {params.arch}")
    return params


def save_checkpoint(params: ModelParams, path) -> None:
    # json uses repr() for floats, the shortest string that round-trips exactly
    atomic_write_text(path, json.dumps(to_json_dict(params)) + "\n")


def load_checkpoint(path) -> ModelParams:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: {exc}") from exc
    return from_json_dict(d)
