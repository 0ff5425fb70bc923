"""Dense float64 tensors with a recording tape for reverse-mode differentiation.

The primitive set is deliberately small: exactly what shallow convolutional
networks and linear measurement operators need. Tensors are immutable values;
a Tape owns the growing computation graph for one forward/backward cycle.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "NonFiniteError",
    "tensor",
    "apply_primitive",
    "backward",
    "finite_diff_gradient",
    "PRIMITIVES",
]


class ShapeError(ValueError):
    """Operand shapes do not conform to a primitive's contract."""


class NonFiniteError(FloatingPointError):
    """A tensor acquired a NaN or Inf entry."""


def _as_array(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, order="C")
    if not np.isfinite(arr).all():
        raise NonFiniteError("tensor contains NaN or Inf")
    arr.setflags(write=False)
    return arr


class Tensor:
    """Immutable n-d array of float64, optionally tied to a tape node."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, values, tape: "Tape | None" = None, node: int | None = None):
        if isinstance(values, Tensor):
            values = values.data
        if isinstance(values, np.ndarray) and values.dtype == np.float64 and not values.flags.writeable:
            # already validated & frozen: reuse without copying
            if not values.flags.c_contiguous:
                values = _as_array(values)
            self.data = values
        else:
            self.data = _as_array(values)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, taped={self.tape is not None})"


def tensor(values) -> Tensor:
    return Tensor(values)


class Node:
    __slots__ = ("kind", "inputs", "value", "aux")

    def __init__(self, kind: str, inputs: tuple, value: Tensor, aux: dict | None):
        self.kind = kind
        self.inputs = inputs
        self.value = value
        self.aux = aux


class Tape:
    """Append-only record of primitive applications; inputs always precede
    their consumers, so one reverse sweep implements the chain rule."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.grads: list[np.ndarray | None] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, t: Tensor) -> Tensor:
        """Register a value as a differentiable leaf and return its taped handle."""
        out = Tensor(t.data, tape=self, node=len(self.nodes))
        self.nodes.append(Node("leaf", (), out, None))
        return out

    def record(self, kind: str, inputs: tuple[int, ...], value_data: np.ndarray, aux=None) -> Tensor:
        out = Tensor(value_data, tape=self, node=len(self.nodes))
        self.nodes.append(Node(kind, inputs, out, aux))
        return out

    def value(self, node_id: int) -> Tensor:
        return self.nodes[node_id].value


# ---------------------------------------------------------------------------
# primitive forward rules


def _check_same_shape(kind, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: operand shapes {a.shape} and {b.shape} differ")


def _fwd_add(a, b):
    _check_same_shape("add", a, b)
    return a.data + b.data


def _fwd_sub(a, b):
    _check_same_shape("sub", a, b)
    return a.data - b.data


def _fwd_mul(a, b):
    _check_same_shape("mul", a, b)
    return a.data * b.data


def _fwd_scale(a, *, c):
    return a.data * float(c)


def _fwd_matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    return a.data @ b.data


def _fwd_relu(a):
    return np.maximum(a.data, 0.0)


def _fwd_reshape(a, *, shape):
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    return np.ascontiguousarray(a.data.reshape(shape))


def _fwd_sum(a):
    return np.array(a.data.sum())


def _fwd_mean(a):
    return np.array(a.data.mean())


def _conv_windows(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    # (B, C, H+2p, W+2p) -> (B, C, H, W, kh, kw) sliding view
    return np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))


def _fwd_conv2d(x, k, b):
    if x.ndim != 4 or k.ndim != 4 or b.ndim != 1:
        raise ShapeError(
            f"conv2d: expected image (B,C,H,W), kernel (O,C,kh,kw), bias (O,); "
            f"got {x.shape}, {k.shape}, {b.shape}"
        )
    _, c, _, _ = x.shape
    o, ck, kh, kw = k.shape
    if ck != c or b.shape[0] != o:
        raise ShapeError(f"conv2d: channel mismatch between image {x.shape}, kernel {k.shape}, bias {b.shape}")
    if kh % 2 != 1 or kw % 2 != 1:
        raise ShapeError(f"conv2d: kernel dims must be odd for same padding, got {k.shape}")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = _conv_windows(xp, kh, kw)  # (B, C, H, W, kh, kw)
    out = np.tensordot(win, k.data, axes=([1, 4, 5], [1, 2, 3]))  # (B, H, W, O)
    out += b.data
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _fwd_linmap(x, *, fwd, vjp, label):
    del vjp
    try:
        return fwd(x.data)
    except ValueError as exc:
        raise ShapeError(f"{label}: {exc}") from exc


# ---------------------------------------------------------------------------
# primitive backward rules: map output cotangent g to input cotangents


def _bwd_add(g, node, vals):
    return g, g


def _bwd_sub(g, node, vals):
    return g, -g


def _bwd_mul(g, node, vals):
    a, b = vals
    return g * b, g * a


def _bwd_scale(g, node, vals):
    return (g * node.aux["c"],)


def _bwd_matmul(g, node, vals):
    a, b = vals
    return g @ b.T, a.T @ g


def _bwd_relu(g, node, vals):
    (a,) = vals
    return (g * (a > 0.0),)


def _bwd_reshape(g, node, vals):
    (a,) = vals
    return (g.reshape(a.shape),)


def _bwd_sum(g, node, vals):
    (a,) = vals
    return (np.full(a.shape, float(g)),)


def _bwd_mean(g, node, vals):
    (a,) = vals
    return (np.full(a.shape, float(g) / a.size),)


def _bwd_conv2d(g, node, vals):
    x, k, b = vals
    o, c, kh, kw = k.shape
    ph, pw = kh // 2, kw // 2
    # bias
    gb = g.sum(axis=(0, 2, 3))
    # kernel: correlate padded input windows with the output cotangent
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = _conv_windows(xp, kh, kw)  # (B, C, H, W, kh, kw)
    gk = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # (O, C, kh, kw)
    # input: full correlation of the cotangent with the flipped kernel
    gp = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    gwin = _conv_windows(gp, kh, kw)  # (B, O, H+2p, W+2p, kh, kw)
    kflip = k[:, :, ::-1, ::-1]
    gxp = np.tensordot(gwin, kflip, axes=([1, 4, 5], [0, 2, 3]))  # (B, H+2p, W+2p, C)
    gxp = gxp.transpose(0, 3, 1, 2)
    h, w = x.shape[2], x.shape[3]
    gx = gxp[:, :, ph:ph + h, pw:pw + w]
    return np.ascontiguousarray(gx), gk, gb


def _bwd_linmap(g, node, vals):
    return (node.aux["vjp"](g),)


PRIMITIVES = {
    "add": (_fwd_add, _bwd_add, 2),
    "sub": (_fwd_sub, _bwd_sub, 2),
    "scale": (_fwd_scale, _bwd_scale, 1),
    "mul": (_fwd_mul, _bwd_mul, 2),
    "matmul": (_fwd_matmul, _bwd_matmul, 2),
    "conv2d": (_fwd_conv2d, _bwd_conv2d, 3),
    "relu": (_fwd_relu, _bwd_relu, 1),
    "reshape": (_fwd_reshape, _bwd_reshape, 1),
    "sum": (_fwd_sum, _bwd_sum, 1),
    "mean": (_fwd_mean, _bwd_mean, 1),
    "linmap": (_fwd_linmap, _bwd_linmap, 1),
}


def apply_primitive(kind: str, *inputs: Tensor, **aux) -> Tensor:
    """Evaluate one primitive; if any input lives on a tape, record the result.

    Untaped operands of a taped application are promoted to leaves so the
    graph stays self-contained.
    """
    if kind not in PRIMITIVES:
        raise ValueError(f"unknown primitive {kind!r}")
    fwd, _, arity = PRIMITIVES[kind]
    if len(inputs) != arity:
        raise ShapeError(f"{kind}: expected {arity} operands, got {len(inputs)}")

    tapes = {t.tape for t in inputs if t.tape is not None}
    if len(tapes) > 1:
        raise ValueError(f"{kind}: operands recorded on different tapes")

    out_data = fwd(*inputs, **aux) if aux else fwd(*inputs)
    if not np.isfinite(out_data).all():
        raise NonFiniteError(f"{kind} produced NaN or Inf")

    if not tapes:
        return Tensor(out_data)
    tape = tapes.pop()
    ids = tuple((t if t.tape is tape else tape.leaf(t)).node for t in inputs)
    return tape.record(kind, ids, out_data, aux or None)


def backward(tape: Tape, loss: Tensor | int) -> dict[int, Tensor]:
    """Reverse sweep from a scalar loss node; returns node-id -> gradient.

    Every node reachable from the loss gets an entry whose shape matches the
    node's value. d(loss)/d(loss) is 1.
    """
    loss_id = loss.node if isinstance(loss, Tensor) else int(loss)
    if loss_id is None or not (0 <= loss_id < len(tape.nodes)):
        raise ValueError("loss is not recorded on this tape")
    if tape.nodes[loss_id].value.size != 1:
        raise ShapeError(
            f"backward: loss must be scalar, got shape {tape.nodes[loss_id].value.shape}"
        )

    grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    grads[loss_id] = np.ones(tape.nodes[loss_id].value.shape)
    for nid in range(loss_id, -1, -1):
        g = grads[nid]
        if g is None:
            continue
        node = tape.nodes[nid]
        if node.kind == "leaf":
            continue
        _, bwd, _ = PRIMITIVES[node.kind]
        vals = tuple(tape.nodes[i].value.data for i in node.inputs)
        for in_id, gin in zip(node.inputs, bwd(g, node, vals)):
            if grads[in_id] is None:
                grads[in_id] = np.array(gin, dtype=np.float64)
            else:
                grads[in_id] = grads[in_id] + gin
    tape.grads = grads
    return {nid: Tensor(g) for nid, g in enumerate(grads) if g is not None}


def finite_diff_gradient(f, x: Tensor, h: float = 1e-5, coords=None) -> Tensor:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    `coords` restricts the stencil to a subset of flat indices (the remaining
    entries of the result are zero); used to keep checks on large parameter
    vectors affordable.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    base = x.data.reshape(-1)
    grad = np.zeros(base.size)
    idx = range(base.size) if coords is None else coords
    for i in idx:
        plus = base.copy()
        minus = base.copy()
        plus[i] += h
        minus[i] -= h
        fp = float(f(Tensor(plus.reshape(x.shape))))
        fm = float(f(Tensor(minus.reshape(x.shape))))
        grad[i] = (fp - fm) / (2.0 * h)
    return Tensor(grad.reshape(x.shape))
