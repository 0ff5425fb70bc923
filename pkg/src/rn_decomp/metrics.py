"""Reconstruction quality metrics and batched evaluation."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .estimators import Estimator, reconstruct
from .tensor import Tensor

__all__ = ["MetricsRecord", "nmse", "psnr", "generalization_error", "set_loss", "evaluate"]

PEAK = 255.0  # metrics quote dB against the 8-bit peak


def nmse(recon: np.ndarray, truth: np.ndarray) -> float:
    """Squared error normalized by signal energy."""
    err = float(((recon - truth) ** 2).sum())
    ref = float((truth ** 2).sum())
    if ref == 0.0:
        return 0.0 if err == 0.0 else float("inf")
    return err / ref


def psnr(recon: np.ndarray, truth: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB; images are [0, 1] scaled to 8 bit."""
    mse = float((((recon - truth) * PEAK) ** 2).mean())
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(PEAK * PEAK / mse)


def generalization_error(test_loss: float, train_loss: float) -> float:
    return abs(test_loss - train_loss)


def _batch(dataset: Dataset):
    ys = np.stack([s[1].data for s in dataset])
    xs = np.stack([s[0].data for s in dataset])
    return ys, xs


def set_loss(est: Estimator, dataset: Dataset) -> float:
    """Mean per-entry squared reconstruction error over a dataset."""
    ys, xs = _batch(dataset)
    xhat = reconstruct(est, Tensor(ys)).data
    return float(((xhat - xs) ** 2).mean())


@dataclass
class MetricsRecord:
    train_loss: list = field(default_factory=list)  # per-epoch objective values
    nmse: float = 0.0
    psnr_mean: float = 0.0
    psnr_std: float = 0.0
    ge: float = 0.0
    dc_gap: float = 0.0
    infer_ms: float = 0.0  # measured wall clock per sample

    def __post_init__(self):
        if self.nmse < 0 or self.ge < 0:
            raise ValueError("nmse and ge must be nonnegative")


def evaluate(est: Estimator, test_set: Dataset, train_set: Dataset | None = None) -> MetricsRecord:
    """Reconstruction metrics on the test split; the train split (when given)
    supplies the second loss for the generalization gap."""
    if len(test_set) == 0:
        raise ValueError("empty dataset")
    ys, xs = _batch(test_set)
    t0 = time.perf_counter()
    xhat = reconstruct(est, Tensor(ys)).data
    per_sample_ms = (time.perf_counter() - t0) * 1000.0 / len(test_set)

    nm, ps, gaps = [], [], []
    for i in range(len(test_set)):
        nm.append(nmse(xhat[i], xs[i]))
        ps.append(psnr(xhat[i], xs[i]))
        resid = est.operator.apply_raw(xhat[i]) - ys[i]
        gaps.append(float(np.linalg.norm(resid)))

    test_loss = float(((xhat - xs) ** 2).mean())
    ge = 0.0
    if train_set is not None:
        ge = generalization_error(test_loss, set_loss(est, train_set))

    ps_arr = np.asarray(ps)
    return MetricsRecord(
        train_loss=[],
        nmse=float(np.mean(nm)),
        psnr_mean=float(np.mean(ps_arr)),
        psnr_std=float(np.std(ps_arr)) if np.isfinite(ps_arr).all() else 0.0,
        ge=ge,
        dc_gap=float(np.mean(gaps)),
        infer_ms=per_sample_ms,
    )
