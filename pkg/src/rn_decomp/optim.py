"""Adam with decoupled weight decay on a flat parameter vector."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor

__all__ = ["AdamState", "adam_step"]


@dataclass
class AdamState:
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    hyper: dict = field(default_factory=dict)


def adam_step(
    params: Tensor,
    grads: Tensor,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
    decay_mask: np.ndarray | None = None,
):
    """One Adam update; decay is applied multiplicatively after the moment
    step (decoupled), restricted to `decay_mask` when given.

    Returns (new params, new state); inputs are not mutated.
    """
    if params.shape != grads.shape:
        raise ShapeError(f"adam: params {params.shape} and grads {grads.shape} differ")
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    p = params.data
    g = grads.data
    if state.m is None:
        state = AdamState(step=0, m=np.zeros_like(p), v=np.zeros_like(p))
    t = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new_p = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    if weight_decay:
        decay = lr * weight_decay
        if decay_mask is None:
            new_p = new_p - decay * p
        else:
            new_p = new_p - decay * np.where(decay_mask, p, 0.0)
    return Tensor(new_p), AdamState(step=t, m=m, v=v)
