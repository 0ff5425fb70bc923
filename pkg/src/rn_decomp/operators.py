"""Linear forward operators with exact right inverses.

Four measurement models, each exposing four raw actions on arrays (forward,
transpose, right inverse, transpose of the right inverse) plus Tensor-level
wrappers that record onto a tape when the input is taped, so reconstructions
built from them are differentiable end to end.

Conventions: signals live on `domain_shape` (1-, 2-, or 3-d, trailing two
dims spatial when 3-d); measurements are flat vectors of length d. A leading
batch axis is accepted everywhere.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, apply_primitive

__all__ = [
    "LinearOperator",
    "OperatorError",
    "ConvergenceError",
    "build_operator",
    "inpainting",
    "block_downsample",
    "subsampled_dft",
    "gaussian_sensing",
    "project_range",
    "project_null",
    "regularized_pinv",
    "svd_pinv_oracle",
    "power_iteration_norm",
]


class OperatorError(ValueError):
    """Invalid operator specification."""


class ConvergenceError(RuntimeError):
    """Iterative solve stopped before reaching tolerance."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


def _spatial_ndim(domain_shape) -> int:
    # trailing dims treated as spatial: all of them for 1-/2-d signals,
    # the last two for (C, H, W) images
    return min(2, len(domain_shape))


class LinearOperator:
    """A forward map H with right inverse H' satisfying H(H'(y)) = y."""

    kind: str

    def __init__(self, kind, domain_shape, codomain_dim):
        self.kind = kind
        self.domain_shape = tuple(int(s) for s in domain_shape)
        if any(s <= 0 for s in self.domain_shape):
            raise OperatorError(f"invalid domain shape {domain_shape}")
        self.domain_size = int(np.prod(self.domain_shape))
        self.codomain_dim = int(codomain_dim)
        if not (1 <= self.codomain_dim <= self.domain_size):
            raise OperatorError(
                f"measurement dim {codomain_dim} must lie in [1, {self.domain_size}]"
            )

    # -- raw ndarray actions ------------------------------------------------

    def _flat_domain(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        if x.shape == self.domain_shape:
            return x.reshape(1, self.domain_size), False
        if x.ndim == len(self.domain_shape) + 1 and x.shape[1:] == self.domain_shape:
            return x.reshape(x.shape[0], self.domain_size), True
        raise ValueError(f"expected domain shape {self.domain_shape}, got {x.shape}")

    def _flat_codomain(self, y: np.ndarray):
        y = np.asarray(y, dtype=np.float64)
        if y.shape == (self.codomain_dim,):
            return y.reshape(1, self.codomain_dim), False
        if y.ndim == 2 and y.shape[1] == self.codomain_dim:
            return y, True
        raise ValueError(f"expected measurement dim {self.codomain_dim}, got {y.shape}")

    def _unflatten(self, flat: np.ndarray, batched: bool):
        shaped = flat.reshape((flat.shape[0],) + self.domain_shape)
        return shaped if batched else shaped[0]

    def _apply_flat(self, xf: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _adjoint_flat(self, yf: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _pinv_flat(self, yf: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _pinv_adjoint_flat(self, xf: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def apply_raw(self, x: np.ndarray) -> np.ndarray:
        xf, batched = self._flat_domain(x)
        out = self._apply_flat(xf)
        return out if batched else out[0]

    def adjoint_raw(self, y: np.ndarray) -> np.ndarray:
        yf, batched = self._flat_codomain(y)
        return self._unflatten(self._adjoint_flat(yf), batched)

    def pinv_raw(self, y: np.ndarray) -> np.ndarray:
        yf, batched = self._flat_codomain(y)
        return self._unflatten(self._pinv_flat(yf), batched)

    def pinv_adjoint_raw(self, x: np.ndarray) -> np.ndarray:
        xf, batched = self._flat_domain(x)
        out = self._pinv_adjoint_flat(xf)
        return out if batched else out[0]

    # -- Tensor-level, differentiable actions --------------------------------

    def apply(self, x: Tensor) -> Tensor:
        return apply_primitive(
            "linmap", x,
            fwd=self.apply_raw, vjp=self.adjoint_raw, label=f"{self.kind}.apply",
        )

    def adjoint(self, y: Tensor) -> Tensor:
        return apply_primitive(
            "linmap", y,
            fwd=self.adjoint_raw, vjp=self.apply_raw, label=f"{self.kind}.adjoint",
        )

    def pinv(self, y: Tensor) -> Tensor:
        return apply_primitive(
            "linmap", y,
            fwd=self.pinv_raw, vjp=self.pinv_adjoint_raw, label=f"{self.kind}.pinv",
        )

    def project_range(self, x: Tensor) -> Tensor:
        return self.pinv(self.apply(x))

    def project_null(self, x: Tensor) -> Tensor:
        return apply_primitive("sub", x, self.project_range(x))

    @property
    def right_inverse_tol(self) -> float:
        return 1e-6 if self.kind == "gaussian" else 1e-8


class Inpainting(LinearOperator):
    """Coordinate selection; the transpose scatter is the exact right inverse."""

    def __init__(self, domain_shape, mask):
        mask = np.asarray(mask, dtype=np.int64).reshape(-1)
        super().__init__("inpainting", domain_shape, mask.size)
        if mask.size != np.unique(mask).size:
            raise OperatorError("inpainting mask indices must be distinct")
        if mask.size and (mask.min() < 0 or mask.max() >= self.domain_size):
            raise OperatorError(
                f"inpainting mask index out of range [0, {self.domain_size})"
            )
        self.mask = mask

    def _apply_flat(self, xf):
        return xf[:, self.mask]

    def _adjoint_flat(self, yf):
        out = np.zeros((yf.shape[0], self.domain_size))
        out[:, self.mask] = yf
        return out

    _pinv_flat = _adjoint_flat
    _pinv_adjoint_flat = _apply_flat


class BlockDownsample(LinearOperator):
    """Block averaging over the spatial dims; right inverse replicates
    each measurement across its block (s^k times the transpose)."""

    def __init__(self, domain_shape, factor):
        factor = int(factor)
        if factor < 1:
            raise OperatorError(f"factor must be >= 1, got {factor}")
        k = _spatial_ndim(domain_shape)
        spatial = domain_shape[-k:] if k else ()
        if any(s % factor for s in spatial):
            raise OperatorError(
                f"factor {factor} does not divide spatial dims {spatial}"
            )
        self.factor = factor
        self.block = factor ** k
        self._k = k
        d = int(np.prod(domain_shape)) // self.block
        super().__init__("block_downsample", domain_shape, d)

    def _blocked(self, xf):
        s = self.factor
        shape = self.domain_shape
        x = xf.reshape((-1,) + shape)
        if self._k == 1:
            return x.reshape(x.shape[0], shape[0] // s, s), (2,)
        lead = shape[:-2]
        h, w = shape[-2], shape[-1]
        x = x.reshape((x.shape[0],) + lead + (h // s, s, w // s, s))
        n = x.ndim
        return x, (n - 3, n - 1)

    def _apply_flat(self, xf):
        x, axes = self._blocked(xf)
        return x.mean(axis=axes).reshape(xf.shape[0], self.codomain_dim)

    def _replicate(self, yf):
        s = self.factor
        shape = self.domain_shape
        if self._k == 1:
            y = yf.reshape(yf.shape[0], shape[0] // s)
            out = np.repeat(y, s, axis=1)
        else:
            lead = shape[:-2]
            h, w = shape[-2], shape[-1]
            y = yf.reshape((yf.shape[0],) + lead + (h // s, w // s))
            out = np.repeat(np.repeat(y, s, axis=-2), s, axis=-1)
        return out.reshape(yf.shape[0], self.domain_size)

    def _adjoint_flat(self, yf):
        return self._replicate(yf) / self.block

    def _pinv_flat(self, yf):
        return self._replicate(yf)

    def _pinv_adjoint_flat(self, xf):
        return self._apply_flat(xf) * self.block


class SubsampledDFT(LinearOperator):
    """Real/imaginary pairs of selected unitary DFT coefficients of the
    flattened signal.

    Frequencies 0 and D/2 carry no imaginary part for real signals and a
    conjugate pair {k, D-k} duplicates information, so the index set must
    avoid both for the right inverse to exist; with that restriction the
    measurement rows are orthogonal with squared norm 1/2, giving the exact
    right inverse 2 * transpose.
    """

    def __init__(self, domain_shape, freqs):
        freqs = np.asarray(freqs, dtype=np.int64).reshape(-1)
        super().__init__("subsampled_dft", domain_shape, 2 * freqs.size)
        D = self.domain_size
        if freqs.size != np.unique(freqs).size:
            raise OperatorError("frequency indices must be distinct")
        if freqs.size == 0 or freqs.min() < 1 or freqs.max() > D - 1:
            raise OperatorError(f"frequency indices must lie in [1, {D - 1}]")
        if D % 2 == 0 and np.any(freqs == D // 2):
            raise OperatorError(f"frequency {D // 2} has no imaginary part (D = {D})")
        if np.intersect1d(freqs, (D - freqs) % D).size:
            raise OperatorError("frequency set contains a conjugate pair {k, D-k}")
        self.freqs = freqs
        n = np.arange(D)
        ang = 2.0 * np.pi * np.outer(freqs, n) / D
        root = np.sqrt(D)
        self._cos = np.cos(ang) / root   # rows: Re of unitary DFT
        self._msin = -np.sin(ang) / root  # rows: Im of unitary DFT

    def _apply_flat(self, xf):
        out = np.empty((xf.shape[0], self.codomain_dim))
        out[:, 0::2] = xf @ self._cos.T
        out[:, 1::2] = xf @ self._msin.T
        return out

    def _adjoint_flat(self, yf):
        return yf[:, 0::2] @ self._cos + yf[:, 1::2] @ self._msin

    def _pinv_flat(self, yf):
        return 2.0 * self._adjoint_flat(yf)

    def _pinv_adjoint_flat(self, xf):
        return 2.0 * self._apply_flat(xf)


class GaussianSensing(LinearOperator):
    """Dense iid-normal sensing matrix, entries scaled by 1/sqrt(d); the
    Moore-Penrose right inverse is computed once and cached."""

    def __init__(self, domain_shape, d, seed):
        super().__init__("gaussian", domain_shape, d)
        rng = np.random.Generator(np.random.PCG64(seed))
        self.seed = seed
        self.matrix = rng.standard_normal((self.codomain_dim, self.domain_size))
        self.matrix /= np.sqrt(self.codomain_dim)
        self.matrix_pinv = svd_pinv_oracle(self.matrix)

    def _apply_flat(self, xf):
        return xf @ self.matrix.T

    def _adjoint_flat(self, yf):
        return yf @ self.matrix

    def _pinv_flat(self, yf):
        return yf @ self.matrix_pinv.T

    def _pinv_adjoint_flat(self, xf):
        return xf @ self.matrix_pinv


def inpainting(domain_shape, mask) -> Inpainting:
    return Inpainting(domain_shape, mask)


def block_downsample(domain_shape, factor) -> BlockDownsample:
    return BlockDownsample(domain_shape, factor)


def subsampled_dft(domain_shape, freqs) -> SubsampledDFT:
    return SubsampledDFT(domain_shape, freqs)


def gaussian_sensing(domain_shape, d, seed=0) -> GaussianSensing:
    return GaussianSensing(domain_shape, d, seed)


_KINDS = {
    "inpainting": lambda s: Inpainting(s["domain_shape"], s["mask"]),
    "block_downsample": lambda s: BlockDownsample(s["domain_shape"], s["factor"]),
    "subsampled_dft": lambda s: SubsampledDFT(s["domain_shape"], s["freqs"]),
    "gaussian": lambda s: GaussianSensing(s["domain_shape"], s["d"], s.get("seed", 0)),
}


def build_operator(spec: dict) -> LinearOperator:
    """Construct an operator from a declarative spec dict (see _KINDS keys)."""
    try:
        kind = spec["kind"]
    except (TypeError, KeyError):
        raise OperatorError("operator spec must be a dict with a 'kind' entry")
    if kind not in _KINDS:
        raise OperatorError(f"unknown operator kind {kind!r}")
    try:
        return _KINDS[kind](spec)
    except KeyError as exc:
        raise OperatorError(f"operator spec for {kind!r} misses key {exc}") from exc


def project_range(op: LinearOperator, x: Tensor) -> Tensor:
    return op.project_range(x)


def project_null(op: LinearOperator, x: Tensor) -> Tensor:
    return op.project_null(x)


def svd_pinv_oracle(matrix, rank_tol: float = 1e-10) -> np.ndarray:
    """Moore-Penrose pseudo-inverse by one-sided Jacobi orthogonalization.

    Deliberately self-contained so it can serve as an independent check of
    (and construction tool for) the operator right inverses. Requires full
    row rank: the smallest singular value must exceed `rank_tol`.
    """
    M = np.asarray(matrix, dtype=np.float64)
    if M.ndim != 2:
        raise OperatorError(f"expected a matrix, got shape {M.shape}")
    d, D = M.shape
    if d > D:
        raise OperatorError(f"expected a wide matrix (d <= D), got {M.shape}")
    A = M.T.copy()           # D x d, orthogonalize its d columns
    V = np.eye(d)
    for _ in range(60):
        off = 0.0
        for i in range(d - 1):
            for j in range(i + 1, d):
                ai, aj = A[:, i], A[:, j]
                g = float(ai @ aj)
                a = float(ai @ ai)
                b = float(aj @ aj)
                if abs(g) <= 1e-30 or abs(g) <= 1e-16 * np.sqrt(a * b):
                    continue
                off = max(off, abs(g) / np.sqrt(a * b))
                theta = 0.5 * np.arctan2(2.0 * g, a - b)
                cs, sn = np.cos(theta), np.sin(theta)
                A[:, i], A[:, j] = cs * ai + sn * aj, -sn * ai + cs * aj
                vi, vj = V[:, i].copy(), V[:, j].copy()
                V[:, i], V[:, j] = cs * vi + sn * vj, -sn * vi + cs * vj
        if off < 1e-14:
            break
    sigma = np.sqrt((A * A).sum(axis=0))
    if sigma.min() <= rank_tol:
        raise OperatorError(
            f"matrix is rank deficient (smallest singular value {sigma.min():.3e})"
        )
    U = A / sigma
    return U @ (V.T / sigma[:, None])


def regularized_pinv(
    op: LinearOperator,
    y,
    lam: float,
    tol: float = 1e-10,
    max_iter: int = 500,
) -> Tensor:
    """Ridge-regularized backprojection by conjugate gradients on the normal
    equations (HᵀH + lam I) z = Hᵀ y."""
    if lam <= 0:
        raise ValueError("regularization weight must be positive")
    y = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
    b = op.adjoint_raw(y)
    if b.shape != op.domain_shape:
        raise ValueError("regularized_pinv expects a single measurement vector")
    z = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float((r * r).sum())
    if np.sqrt(rs) <= tol:
        return Tensor(z)
    for _ in range(max_iter):
        ap = op.adjoint_raw(op.apply_raw(p)) + lam * p
        alpha = rs / float((p * ap).sum())
        z = z + alpha * p
        r = r - alpha * ap
        rs_new = float((r * r).sum())
        if np.sqrt(rs_new) <= tol:
            return Tensor(z)
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise ConvergenceError(
        f"conjugate gradient did not reach tol={tol} in {max_iter} iterations "
        f"(residual {np.sqrt(rs):.3e})",
        residual=np.sqrt(rs),
    )


def power_iteration_norm(op: LinearOperator, iters: int = 20, seed: int = 0) -> float:
    """Spectral norm estimate of HᵀH by power iteration from a seeded start."""
    rng = np.random.Generator(np.random.PCG64(seed))
    v = rng.standard_normal(op.domain_shape)
    v /= np.linalg.norm(v)
    lam = 1.0
    for _ in range(iters):
        w = op.adjoint_raw(op.apply_raw(v))
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v = w / lam
    return lam
