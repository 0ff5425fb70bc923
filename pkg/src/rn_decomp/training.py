"""Joint and decoupled training loops.

Joint training minimizes the full decomposition objective end to end;
decoupled training (decomposition mechanisms only) first fits the range
network against the range residual target, then fits the nullspace network
against the nullspace component of the clean signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .estimators import Estimator, LossWeights, _forward, _mse, ddn_loss
from .optim import AdamState, adam_step
from .tensor import NonFiniteError, Tape, Tensor, apply_primitive, backward

__all__ = ["TrainingDiverged", "TrainLog", "train"]

_DECOUPLABLE = {"ddn-independent", "ddn-cascade"}


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, phase: str = "joint"):
        super().__init__(f"loss became non-finite during {phase} training at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainLog:
    epoch_losses: list = field(default_factory=list)
    final_loss: float = 0.0


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train(
    est: Estimator,
    dataset: Dataset,
    *,
    epochs: int,
    batch_size: int = 8,
    lr: float = 1e-3,
    seed: int = 0,
    weights: LossWeights | None = None,
    mode: str = "joint",
) -> TrainLog:
    """Fit the estimator's networks in place; returns per-epoch losses."""
    if est.mechanism == "pinv":
        raise ValueError("the pseudo-inverse estimator has nothing to train")
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if mode not in ("joint", "decoupled"):
        raise ValueError(f"unknown training mode {mode!r}")
    if mode == "decoupled" and est.mechanism not in _DECOUPLABLE:
        raise ValueError(
            f"decoupled training applies to {sorted(_DECOUPLABLE)}, not {est.mechanism!r}"
        )
    weights = weights or LossWeights()
    batch_size = max(1, min(batch_size, len(dataset)))

    if mode == "joint":
        log = _train_joint(est, dataset, epochs, batch_size, lr, seed, weights)
    else:
        log = _train_decoupled(est, dataset, epochs, batch_size, lr, seed, weights)
    log.final_loss = ddn_loss(est, list(dataset), weights).total
    return log


def _train_joint(est, dataset, epochs, batch_size, lr, seed, weights) -> TrainLog:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 2])))
    f_state, g_state = AdamState(), AdamState()
    decay = 2.0 * weights.lambda2  # gradient of lambda2*||g||^2, applied decoupled
    log = TrainLog()
    for epoch in range(epochs):
        totals = []
        for idx in _batches(len(dataset), batch_size, rng):
            try:
                res = ddn_loss(est, [dataset[i] for i in idx], weights)
            except NonFiniteError as exc:
                raise TrainingDiverged(epoch) from exc
            if not np.isfinite(res.total):
                raise TrainingDiverged(epoch)
            if est.f_net is not None:
                new_p, f_state = adam_step(
                    est.f_net.params, Tensor(res.f_grad), f_state, lr)
                est.f_net.set_params(new_p.data)
            if est.g_net is not None:
                new_p, g_state = adam_step(
                    est.g_net.params, Tensor(res.g_grad), g_state, lr,
                    weight_decay=decay)
                est.g_net.set_params(new_p.data)
            totals.append(res.total)
        log.epoch_losses.append(float(np.mean(totals)))
    return log


def _stack(dataset, idx):
    ys = np.stack([dataset[i][1].data for i in idx])
    xs = np.stack([dataset[i][0].data for i in idx])
    eps = np.stack([dataset[i][2].data for i in idx])
    return ys, xs, eps


def _train_decoupled(est, dataset, epochs, batch_size, lr, seed, weights) -> TrainLog:
    op = est.operator
    log = TrainLog()

    # range network: fit the range residual, with the measurement-noise term
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 2])))
    f_state = AdamState()
    for epoch in range(epochs):
        totals = []
        for idx in _batches(len(dataset), batch_size, rng):
            ys, xs, eps = _stack(dataset, idx)
            z = op.pinv_raw(ys)
            target = op.pinv_raw(op.apply_raw(xs)) - z  # P_r(x) - z
            tape = Tape()
            leaves = est.f_net.make_leaves(tape)
            try:
                fz = _forward(est.f_net, op.pinv(Tensor(ys)), leaves)
                loss = _mse(op.project_range(fz), Tensor(target))
                if weights.lambda1 > 0:
                    phi1 = _mse(op.apply(fz), Tensor(eps))
                    loss = apply_primitive(
                        "add", loss, apply_primitive("scale", phi1, c=weights.lambda1))
                grads = backward(tape, loss)
            except NonFiniteError as exc:
                raise TrainingDiverged(epoch, "range") from exc
            new_p, f_state = adam_step(
                est.f_net.params,
                Tensor(est.f_net.grad_vector(leaves, grads)),
                f_state, lr)
            est.f_net.set_params(new_p.data)
            totals.append(loss.item())
        log.epoch_losses.append(float(np.mean(totals)))

    # nullspace network: fit P_n(x); the cascade variant sees the
    # range-corrected input produced by the frozen range network
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 3])))
    g_state = AdamState()
    decay = 2.0 * weights.lambda2
    for epoch in range(epochs):
        totals = []
        for idx in _batches(len(dataset), batch_size, rng):
            ys, xs, eps = _stack(dataset, idx)
            z = op.pinv_raw(ys)
            if est.mechanism == "ddn-cascade":
                g_in = z + op.pinv_raw(op.apply_raw(est.f_net.forward(Tensor(z)).data))
            else:
                g_in = z
            target = xs - op.pinv_raw(op.apply_raw(xs))  # P_n(x)
            tape = Tape()
            leaves = est.g_net.make_leaves(tape)
            try:
                gx = _forward(est.g_net, Tensor(g_in), leaves)
                loss = _mse(op.project_null(gx), Tensor(target))
                grads = backward(tape, loss)
            except NonFiniteError as exc:
                raise TrainingDiverged(epoch, "nullspace") from exc
            new_p, g_state = adam_step(
                est.g_net.params,
                Tensor(est.g_net.grad_vector(leaves, grads)),
                g_state, lr, weight_decay=decay)
            est.g_net.set_params(new_p.data)
            totals.append(loss.item())
        log.epoch_losses.append(float(np.mean(totals)))
    return log
