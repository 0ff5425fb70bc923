"""Reconstruction mechanisms around a forward operator's backprojection.

Every mechanism starts from z = H'(y) and differs in how two networks F and G
refine it. Range/nullspace projections gate where each network is allowed to
act; `ddn-range` is the range-only variant used by the projector ablation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import Network, null_net_arch, range_net_arch
from .operators import LinearOperator, power_iteration_norm
from .tensor import Tape, Tensor, apply_primitive, backward

__all__ = [
    "MECHANISMS",
    "Estimator",
    "LossWeights",
    "DdnLossResult",
    "make_estimator",
    "reconstruct",
    "gated_reconstruct",
    "ddn_loss",
    "data_consistency_gap",
]

MECHANISMS = (
    "pinv",
    "residual",
    "nullspace",
    "npgd",
    "ddn-independent",
    "ddn-cascade",
    "ddn-range",
)

_NEEDS_F = {"residual", "nullspace", "npgd", "ddn-independent", "ddn-cascade", "ddn-range"}
_NEEDS_G = {"residual", "nullspace", "npgd", "ddn-independent", "ddn-cascade"}


@dataclass
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1e-4

    def __post_init__(self):
        for name in ("lambda1", "lambda2"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
            setattr(self, name, v)


@dataclass
class Estimator:
    mechanism: str
    operator: LinearOperator
    f_net: Network | None = None
    g_net: Network | None = None
    npgd_steps: int = 3
    npgd_step_size: float | None = None

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        if self.mechanism in _NEEDS_F and self.f_net is None:
            raise ValueError(f"mechanism {self.mechanism!r} requires f_net")
        if self.mechanism in _NEEDS_G and self.g_net is None:
            raise ValueError(f"mechanism {self.mechanism!r} requires g_net")
        if self.npgd_steps < 1:
            raise ValueError("npgd_steps must be >= 1")
        if self.mechanism == "npgd" and self.npgd_step_size is None:
            lam = power_iteration_norm(self.operator, iters=20, seed=0)
            self.npgd_step_size = 1.0 / lam if lam > 0 else 1.0


def make_estimator(mechanism: str, operator: LinearOperator, seed: int = 0) -> Estimator:
    """Build an estimator with freshly initialized standard networks."""
    if len(operator.domain_shape) != 3 and mechanism != "pinv":
        raise ValueError("network mechanisms need a (C, H, W) domain")
    f_net = g_net = None
    c = operator.domain_shape[0] if len(operator.domain_shape) == 3 else 1
    if mechanism in _NEEDS_F:
        f_net = Network(range_net_arch(c), seed=np.random.SeedSequence([seed, 0]))
    if mechanism in _NEEDS_G:
        g_net = Network(null_net_arch(c), seed=np.random.SeedSequence([seed, 1]))
    return Estimator(mechanism, operator, f_net, g_net)


def _as_batch_measurements(est, y: Tensor):
    d = est.operator.codomain_dim
    if y.ndim == 1:
        if y.shape[0] != d:
            raise ValueError(f"expected measurement dim {d}, got {y.shape}")
        return apply_primitive("reshape", y, shape=(1, d)), False
    if y.ndim == 2 and y.shape[1] == d:
        return y, True
    raise ValueError(f"expected measurement dim {d}, got {y.shape}")


def _net_in(est, x: Tensor) -> Tensor:
    # (B,) + domain -> (B, C, H, W)
    shape = est.operator.domain_shape
    if len(shape) != 3:
        raise ValueError("network mechanisms need a (C, H, W) domain")
    return x


def _forward(net: Network, x: Tensor, leaves) -> Tensor:
    return net.forward(x, leaves) if leaves is not None else net.forward(x)


def reconstruct(est: Estimator, y: Tensor, f_leaves=None, g_leaves=None) -> Tensor:
    """Apply the mechanism to measurements y ((d,) or (B, d))."""
    yb, batched = _as_batch_measurements(est, y)
    op = est.operator
    z = op.pinv(yb)
    m = est.mechanism
    if m == "pinv":
        out = z
    elif m == "residual":
        zc = _net_in(est, z)
        out = apply_primitive("add", z, _forward(est.g_net, _forward(est.f_net, zc, f_leaves), g_leaves))
    elif m == "nullspace":
        zc = _net_in(est, z)
        gf = _forward(est.g_net, _forward(est.f_net, zc, f_leaves), g_leaves)
        out = apply_primitive("add", z, op.project_null(gf))
    elif m == "ddn-independent":
        zc = _net_in(est, z)
        out = apply_primitive(
            "add",
            apply_primitive("add", z, op.project_range(_forward(est.f_net, zc, f_leaves))),
            op.project_null(_forward(est.g_net, zc, g_leaves)),
        )
    elif m == "ddn-cascade":
        zc = _net_in(est, z)
        u = apply_primitive("add", z, op.project_range(_forward(est.f_net, zc, f_leaves)))
        out = apply_primitive("add", u, op.project_null(_forward(est.g_net, u, g_leaves)))
    elif m == "ddn-range":
        zc = _net_in(est, z)
        out = apply_primitive("add", z, op.project_range(_forward(est.f_net, zc, f_leaves)))
    else:  # npgd
        zc = _net_in(est, z)
        eta = est.npgd_step_size
        for _ in range(est.npgd_steps):
            resid = apply_primitive("sub", op.apply(zc), yb)
            step = apply_primitive("sub", zc, apply_primitive("scale", op.adjoint(resid), c=eta))
            zc = _forward(est.g_net, _forward(est.f_net, step, f_leaves), g_leaves)
        out = zc
    if not batched:
        out = apply_primitive("reshape", out, shape=op.domain_shape)
    return out


def gated_reconstruct(est: Estimator, y: Tensor, f_leaves=None, g_leaves=None) -> Tensor:
    """Gate form of the independent mechanism: T F(z) + (I - T) G(z) + z with
    T the range projector. Kept as a separate arithmetic path so tests can
    compare it against `reconstruct`."""
    if est.mechanism != "ddn-independent":
        raise ValueError("gated form is defined for the ddn-independent mechanism")
    yb, batched = _as_batch_measurements(est, y)
    op = est.operator
    z = op.pinv(yb)
    zc = _net_in(est, z)
    tf = op.project_range(_forward(est.f_net, zc, f_leaves))
    gz = _forward(est.g_net, zc, g_leaves)
    ig = apply_primitive("sub", gz, op.project_range(gz))
    out = apply_primitive("add", apply_primitive("add", tf, ig), z)
    if not batched:
        out = apply_primitive("reshape", out, shape=op.domain_shape)
    return out


def _mse(a: Tensor, b: Tensor) -> Tensor:
    diff = apply_primitive("sub", a, b)
    return apply_primitive("mean", apply_primitive("mul", diff, diff))


@dataclass
class DdnLossResult:
    total: float            # emp + lambda1 * phi1 + lambda2 * phi2 (phi2 logged only)
    emp: float
    phi1: float             # mean squared measurement-noise discrepancy of F
    phi2: float             # squared parameter norm of G
    f_grad: np.ndarray | None
    g_grad: np.ndarray | None
    node_count: int = field(default=0)


def _stack_batch(est, batch):
    ys, xs, eps = [], [], []
    for x, y, e in batch:  # dataset samples are (clean, measurement, noise)
        ys.append(y.data if isinstance(y, Tensor) else np.asarray(y))
        xs.append(x.data if isinstance(x, Tensor) else np.asarray(x))
        eps.append(e.data if isinstance(e, Tensor) else np.asarray(e))
    return np.stack(ys), np.stack(xs), np.stack(eps)


def ddn_loss(est: Estimator, batch, weights: LossWeights) -> DdnLossResult:
    """Joint training objective and its parameter gradients over one batch.

    The empirical term is the per-entry MSE of the reconstruction; the
    measurement term compares H F(z) against the stored per-sample noise.
    The weight-decay term on G is reported in `total` but excluded from the
    backward pass: the optimizer realizes it as decoupled decay.
    """
    batch = list(batch)
    if not batch:
        raise ValueError("empty batch")
    ys, xs, eps = _stack_batch(est, batch)

    tape = Tape()
    f_leaves = est.f_net.make_leaves(tape) if est.f_net is not None else None
    g_leaves = est.g_net.make_leaves(tape) if est.g_net is not None else None

    y_t = Tensor(ys)
    xhat = reconstruct(est, y_t, f_leaves, g_leaves)
    loss = _mse(xhat, Tensor(xs))
    emp = loss.item()

    phi1 = 0.0
    if est.f_net is not None and weights.lambda1 > 0:
        z = est.operator.pinv(y_t)
        fz = _forward(est.f_net, z, f_leaves)
        phi1_node = _mse(est.operator.apply(fz), Tensor(eps))
        phi1 = phi1_node.item()
        loss = apply_primitive(
            "add", loss, apply_primitive("scale", phi1_node, c=weights.lambda1)
        )

    grads = backward(tape, loss)
    f_grad = est.f_net.grad_vector(f_leaves, grads) if est.f_net is not None else None
    g_grad = est.g_net.grad_vector(g_leaves, grads) if est.g_net is not None else None

    phi2 = 0.0
    if est.g_net is not None:
        phi2 = float(est.g_net.params.data @ est.g_net.params.data)

    total = emp + weights.lambda1 * phi1 + weights.lambda2 * phi2
    return DdnLossResult(total, emp, phi1, phi2, f_grad, g_grad, node_count=len(tape))


def data_consistency_gap(est: Estimator, y: Tensor) -> float:
    """l2 distance between re-measured reconstruction and the measurements."""
    xhat = reconstruct(est, Tensor(y.data if isinstance(y, Tensor) else y))
    resid = est.operator.apply_raw(xhat.data) - (y.data if isinstance(y, Tensor) else np.asarray(y))
    return float(np.linalg.norm(resid))
