"""Shallow convolutional networks over the tensor primitives.

An architecture is a flat sequence of layer descriptors:

    ("conv", k, c_in, c_out)   k x k convolution, stride 1, same zero padding
    ("relu",)                  elementwise rectifier
    ("skip", src)              add the activation produced by entry `src`

All parameters live in one flat vector so the optimizer and the training loop
never need to know the layer structure.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tape, Tensor, apply_primitive

__all__ = ["Network", "conv", "RELU", "skip", "range_net_arch", "null_net_arch"]


def conv(k: int, c_in: int, c_out: int):
    return ("conv", int(k), int(c_in), int(c_out))


RELU = ("relu",)


def skip(src: int):
    return ("skip", int(src))


def range_net_arch(channels: int = 1):
    """Four conv layers, hidden width 64, ReLU on all but the last."""
    c = channels
    return (
        conv(3, c, 64), RELU,
        conv(3, 64, 64), RELU,
        conv(3, 64, 64), RELU,
        conv(3, 64, c),
    )


def null_net_arch(channels: int = 1):
    """Six conv layers, hidden width 32, identity skip from the first
    activation into the fifth conv output."""
    c = channels
    return (
        conv(3, c, 32), RELU,       # entries 0, 1
        conv(3, 32, 32), RELU,      # 2, 3
        conv(3, 32, 32), RELU,      # 4, 5
        conv(3, 32, 32), RELU,      # 6, 7
        conv(3, 32, 32), skip(1),   # 8, 9
        RELU,                       # 10
        conv(3, 32, c),             # 11
    )


class Network:
    """A parameterized map R^(C,H,W) -> R^(C,H,W) (same padding throughout)."""

    def __init__(self, arch, params=None, seed=None):
        self.arch = tuple(arch)
        self.layout = []  # (w_offset, w_shape, b_offset, b_len) per conv entry
        offset = 0
        for entry in self.arch:
            if entry[0] == "conv":
                _, k, c_in, c_out = entry
                w_shape = (c_out, c_in, k, k)
                w_len = c_out * c_in * k * k
                self.layout.append((offset, w_shape, offset + w_len, c_out))
                offset += w_len + c_out
            elif entry[0] in ("relu", "skip"):
                self.layout.append(None)
            else:
                raise ValueError(f"unknown layer descriptor {entry!r}")
        self.n_params = offset
        if params is None:
            params = self._init_params(seed)
        params = np.asarray(params, dtype=np.float64).reshape(-1)
        if params.size != self.n_params:
            raise ShapeError(
                f"network expects {self.n_params} parameters, got {params.size}"
            )
        self.params = Tensor(params)

    def _init_params(self, seed) -> np.ndarray:
        rng = np.random.Generator(np.random.PCG64(seed))
        out = np.zeros(self.n_params)
        for entry, lay in zip(self.arch, self.layout):
            if lay is None:
                continue
            w_off, w_shape, b_off, b_len = lay
            fan_in = w_shape[1] * w_shape[2] * w_shape[3]
            s = 1.0 / np.sqrt(fan_in)
            out[w_off:w_off + int(np.prod(w_shape))] = rng.uniform(
                -s, s, int(np.prod(w_shape))
            )
            # biases start at zero
        return out

    @property
    def channels(self) -> int:
        for entry in self.arch:
            if entry[0] == "conv":
                return entry[2]
        raise ValueError("architecture has no conv layer")

    def set_params(self, params) -> None:
        params = np.asarray(params, dtype=np.float64).reshape(-1)
        if params.size != self.n_params:
            raise ShapeError(
                f"network expects {self.n_params} parameters, got {params.size}"
            )
        self.params = Tensor(params)

    def _param_views(self):
        flat = self.params.data
        views = []
        for lay in self.layout:
            if lay is None:
                views.append(None)
                continue
            w_off, w_shape, b_off, b_len = lay
            w = Tensor(flat[w_off:b_off].reshape(w_shape))
            b = Tensor(flat[b_off:b_off + b_len])
            views.append((w, b))
        return views

    def make_leaves(self, tape: Tape):
        """Register every conv's weight and bias as tape leaves (one training step)."""
        return [
            None if wb is None else (tape.leaf(wb[0]), tape.leaf(wb[1]))
            for wb in self._param_views()
        ]

    def forward(self, x: Tensor, leaves=None) -> Tensor:
        """Run the network; pass `leaves` from make_leaves to record gradients."""
        if x.ndim != 4:
            raise ShapeError(f"network input must be (B,C,H,W), got {x.shape}")
        if x.shape[1] != self.channels:
            raise ShapeError(
                f"network expects {self.channels} input channels, got {x.shape[1]}"
            )
        if leaves is None:
            leaves = self._param_views()
        acts = []
        h = x
        for entry, wb in zip(self.arch, leaves):
            kind = entry[0]
            if kind == "conv":
                h = apply_primitive("conv2d", h, wb[0], wb[1])
            elif kind == "relu":
                h = apply_primitive("relu", h)
            else:  # skip
                h = apply_primitive("add", h, acts[entry[1]])
            acts.append(h)
        return h

    def grad_vector(self, leaves, grads: dict) -> np.ndarray:
        """Assemble the flat gradient aligned with `params` from a backward() map."""
        out = np.zeros(self.n_params)
        for lay, wb in zip(self.layout, leaves):
            if lay is None:
                continue
            w_off, w_shape, b_off, b_len = lay
            gw = grads.get(wb[0].node)
            gb = grads.get(wb[1].node)
            if gw is not None:
                out[w_off:b_off] = gw.data.reshape(-1)
            if gb is not None:
                out[b_off:b_off + b_len] = gb.data
        return out
