"""AdamW for flat parameters, Riemannian Adam for ball parameters, and the training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import geometry
from .errors import TrainingError, UsageError
from .network import EUCLIDEAN, EUCLIDEAN_NO_DECAY, MANIFOLD, Model

log = logging.getLogger(__name__)

BETA1, BETA2, EPS = 0.9, 0.999, 1e-8


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, x) -> "AdamState":
        x = np.asarray(x)
        return cls(np.zeros(x.shape), np.zeros(x.shape), 0)


def _check_grad(grad, what: str = "gradient") -> np.ndarray:
    g = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise TrainingError(f"non-finite {what} ({np.count_nonzero(~np.isfinite(g))} entries)")
    return g


def _adam_direction(g: np.ndarray, state: AdamState, betas=(BETA1, BETA2), eps=EPS) -> np.ndarray:
    """Update moments in place and return the bias-corrected m_hat / (sqrt(v_hat) + eps)."""
    b1, b2 = betas
    state.t += 1
    state.m = b1 * state.m + (1.0 - b1) * g
    state.v = b2 * state.v + (1.0 - b2) * g * g
    m_hat = state.m / (1.0 - b1**state.t)
    v_hat = state.v / (1.0 - b2**state.t)
    return m_hat / (np.sqrt(v_hat) + eps)


def adamw_step(param, grad, state: AdamState, lr: float, weight_decay: float = 0.0,
               betas=(BETA1, BETA2), eps: float = EPS) -> np.ndarray:
    """Decoupled decay param * (1 - lr wd), then a bias-corrected Adam step."""
    g = _check_grad(grad)
    x = np.asarray(param, dtype=np.float64) * (1.0 - lr * weight_decay)
    return x - lr * _adam_direction(g, state, betas, eps)


def radam_step(param, grad, state: AdamState, lr: float, c: float,
               betas=(BETA1, BETA2), eps: float = EPS) -> np.ndarray:
    """One Riemannian Adam step on the Poincare ball (rows of ``param`` are points).

    The ambient gradient is rescaled by the inverse metric 1/lambda^2, the
    moments are kept in ambient coordinates without transport, and the step
    is taken along the exponential map at the current point.
    """
    g = _check_grad(grad)
    x = np.asarray(param, dtype=np.float64)
    lam = geometry.conformal_factor(x, c)
    g_r = g / (lam * lam)
    u = -lr * _adam_direction(g_r, state, betas, eps)
    return geometry.project_to_ball(geometry.exp_at(x, u, c), c)


def _cast_inside(x: np.ndarray, c: float, dtype) -> np.ndarray:
    """Cast ball points to ``dtype`` without rounding them past the projection radius."""
    out = x.astype(dtype)
    r_max = geometry.max_radius(c)
    norms = np.linalg.norm(out.astype(np.float64), axis=-1, keepdims=True)
    if np.any(norms > r_max):
        shrink = np.where(norms > r_max, r_max / np.maximum(norms, 1e-300) * (1 - 1e-6), 1.0)
        out = (out.astype(np.float64) * shrink).astype(dtype)
    return out


class PlateauScheduler:
    """Halve the rate after ``patience`` epochs without a strict decrease of the monitored loss."""

    def __init__(self, lr: float, patience: int = 5, factor: float = 0.5):
        if not lr > 0:
            raise UsageError(f"learning rate must be positive, got {lr}")
        if not 0 < factor < 1 or patience < 1:
            raise UsageError("need 0 < factor < 1 and patience >= 1")
        self.lr = float(lr)
        self.patience = patience
        self.factor = factor
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr


class MixedOptimizer:
    """Dispatches each model parameter to AdamW or Riemannian Adam by its tag."""

    def __init__(self, model: Model, lr: float, weight_decay: float = 1e-5,
                 decay_manifold: bool = False, clip_norm: float | None = None):
        self.model = model
        self.lr = lr
        self.weight_decay = weight_decay
        self.decay_manifold = decay_manifold
        self.clip_norm = clip_norm
        self.states = {k: AdamState.zeros_like(t.data) for k, t in model.params.items()}

    def step(self):
        params = self.model.params
        grads = {}
        for k, t in params.items():
            g = np.zeros(t.shape) if t.grad is None else t.grad
            try:
                grads[k] = _check_grad(g)
            except TrainingError as exc:
                raise TrainingError(f"{k}: {exc}") from None
        if self.clip_norm:
            total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if total > self.clip_norm:
                grads = {k: g * (self.clip_norm / total) for k, g in grads.items()}
        c = self.model.config.c
        for k, t in params.items():
            tag, st = self.model.tags[k], self.states[k]
            if tag == MANIFOLD:
                x = t.data.astype(np.float64)
                if self.decay_manifold:
                    # shrink toward the origin along the geodesic, then project
                    x = geometry.project_to_ball(x * (1.0 - self.lr * self.weight_decay), c)
                new = radam_step(x, grads[k], st, self.lr, c)
                t.data = _cast_inside(new, c, t.dtype)
            else:
                wd = self.weight_decay if tag == EUCLIDEAN else 0.0
                t.data = adamw_step(t.data, grads[k], st, self.lr, wd).astype(t.dtype)


# --------------------------------------------------------------------------
# training loop
# --------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-4
    weight_decay: float = 1e-5
    patience: int = 5
    factor: float = 0.5
    seed: int = 0
    clip_norm: float | None = None
    decay_manifold: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise UsageError("epochs must be >= 0")
        if self.batch_size < 1:
            raise UsageError("batch size must be >= 1")
        if not self.lr > 0:
            raise UsageError("learning rate must be positive")


@dataclass
class TrainResult:
    best_state: dict
    best_epoch: int              # 0 means the initial weights
    best_val_loss: float
    history: list[dict] = field(default_factory=list)

    def write_history(self, path):
        write_history(self.history, path)


def write_history(history: list[dict], path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for row in history:
            w.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_loss"]), repr(row["lr"])])


def read_history(path) -> list[dict]:
    with open(path, newline="") as f:
        return [{"epoch": int(r["epoch"]), "train_loss": float(r["train_loss"]),
                 "val_loss": float(r["val_loss"]), "lr": float(r["lr"])} for r in csv.DictReader(f)]


def evaluate_loss(model: Model, frames, labels, batch_size: int = 64) -> float:
    total, n = 0.0, len(labels)
    for s in range(0, n, batch_size):
        loss = model.loss(frames[s:s + batch_size], labels[s:s + batch_size])
        total += float(loss.data) * min(batch_size, n - s)
    return total / n


def train(model: Model, train_set: tuple[np.ndarray, np.ndarray], val_set: tuple[np.ndarray, np.ndarray],
          config: TrainConfig = TrainConfig(),
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Mini-batch training with best-validation selection.

    ``train_set`` and ``val_set`` are (frames (N, T, M), labels (N,)) pairs.
    The model is left holding the best weights when this returns.
    """
    x_tr, y_tr = train_set
    x_va, y_va = val_set
    if len(y_tr) == 0 or len(y_va) == 0:
        raise UsageError("training and validation splits must be non-empty")
    y_tr = np.asarray(y_tr, dtype=np.int64)
    y_va = np.asarray(y_va, dtype=np.int64)
    opt = MixedOptimizer(model, config.lr, config.weight_decay, config.decay_manifold, config.clip_norm)
    sched = PlateauScheduler(config.lr, config.patience, config.factor)
    best = TrainResult(model.state(), 0, math.inf, [])
    for epoch in range(1, config.epochs + 1):
        lr = sched.lr
        opt.lr = lr
        order = np.random.default_rng([config.seed, epoch]).permutation(len(y_tr))
        running, seen = 0.0, 0
        for b, s in enumerate(range(0, len(order), config.batch_size)):
            idx = np.sort(order[s:s + config.batch_size])
            model.zero_grad()
            loss = model.loss(x_tr[idx], y_tr[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch {b}")
            loss.backward()
            try:
                opt.step()
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from None
            running += value * len(idx)
            seen += len(idx)
        val = evaluate_loss(model, x_va, y_va)
        if not math.isfinite(val):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        row = {"epoch": epoch, "train_loss": running / seen, "val_loss": val, "lr": lr}
        best.history.append(row)
        if val < best.best_val_loss:
            best.best_state, best.best_epoch, best.best_val_loss = model.state(), epoch, val
        sched.step(val)
        log.info("epoch %d train %.4f val %.4f lr %.2e", epoch, row["train_loss"], val, lr)
        if on_epoch:
            on_epoch(row)
    model.load_state(best.best_state)
    return best


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
