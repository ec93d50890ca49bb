"""Gradient updates (SGD, AdamW), global-norm clipping and early stopping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import DimensionError, Tensor


def _check_aligned(params, grads):
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if np.shape(g) != p.shape:
            raise DimensionError(f"gradient shape {np.shape(g)} does not match parameter {p.shape}")


def sgd_step(params: list[Tensor], grads: list[np.ndarray], lr: float) -> None:
    """theta <- theta - lr * grad, in place."""
    _check_aligned(params, grads)
    for p, g in zip(params, grads):
        p.data = p.data - lr * g


class SGD:
    def __init__(self, params: list[Tensor], lr: float):
        self.params = list(params)
        self.lr = lr

    def step(self, grads: list[np.ndarray]) -> None:
        sgd_step(self.params, grads, self.lr)


@dataclass
class AdamState:
    lr: float = 4e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adamw_step(state: AdamState, params: list[Tensor], grads: list[np.ndarray]) -> None:
    """One AdamW update with decoupled weight decay; mutates state and params."""
    _check_aligned(params, grads)
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    elif len(state.m) != len(params):
        raise DimensionError(f"optimizer tracks {len(state.m)} parameters, got {len(params)}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if state.m[i].shape != p.shape:
            raise DimensionError(f"moment shape {state.m[i].shape} does not match parameter {p.shape}")
        m = b1 * state.m[i] + (1.0 - b1) * g
        v = b2 * state.v[i] + (1.0 - b2) * (g * g)
        state.m[i], state.v[i] = m, v
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay:
            update = update + state.weight_decay * p.data
        p.data = p.data - state.lr * update


class AdamW:
    def __init__(self, params: list[Tensor], lr: float = 4e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay)

    def step(self, grads: list[np.ndarray]) -> None:
        adamw_step(self.state, self.params, grads)


def global_norm(grads: list[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    """Rescale all gradients jointly so their combined L2 norm is at most max_norm.

    Returns the (possibly) scaled gradients and the norm measured before clipping.
    """
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    norm = global_norm(grads)
    if norm <= max_norm:
        return list(grads), norm
    scale = max_norm / norm
    scaled = [g * scale for g in grads]
    # rounding can leave the rescaled norm an ulp above the bound
    while global_norm(scaled) > max_norm:
        scale = np.nextafter(scale, 0.0)
        scaled = [g * scale for g in grads]
    return scaled, norm


@dataclass
class EarlyStopper:
    """Stops after `patience` consecutive evaluations without a strict improvement."""

    patience: int
    best_loss: float = math.inf
    best_index: int = 0
    seen: int = 0
    since_improvement: int = 0
    nan_flagged: bool = False

    def observe(self, val_loss: float) -> tuple[bool, bool]:
        """Returns (stop, is_new_best). Observation indices are 1-based."""
        self.seen += 1
        improved = False
        if math.isnan(val_loss):
            self.nan_flagged = True
        elif val_loss < self.best_loss:
            improved = True
        if improved:
            self.best_loss = val_loss
            self.best_index = self.seen
            self.since_improvement = 0
        else:
            self.since_improvement += 1
        stop = self.patience > 0 and self.since_improvement >= self.patience
        return stop, improved


def early_stop_observe(stopper: EarlyStopper, val_loss: float) -> tuple[bool, bool]:
    return stopper.observe(val_loss)
