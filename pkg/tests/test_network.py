import numpy as np
import pytest

from rn_decomp.network import RELU, Network, conv, null_net_arch, range_net_arch, skip
from rn_decomp.tensor import ShapeError, Tape, Tensor, apply_primitive, backward, finite_diff_gradient


def test_param_count_is_sum_of_kernel_and_bias_sizes():
    net = Network(range_net_arch(1))
    expected = (64 * 1 * 9 + 64) + (64 * 64 * 9 + 64) * 2 + (1 * 64 * 9 + 1)
    assert net.n_params == expected


def test_zero_weights_give_zero_output():
    arch = range_net_arch(1)
    net = Network(arch, params=np.zeros(Network(arch).n_params))
    out = net.forward(Tensor(np.random.default_rng(0).uniform(-1, 1, (2, 1, 8, 8))))
    assert np.abs(out.data).max() == 0.0


def test_identity_kernel_is_identity():
    arch = (conv(3, 1, 1),)
    net = Network(arch, params=np.zeros(10))
    params = np.zeros(10)
    params[4] = 1.0  # center tap of the 3x3 kernel
    net.set_params(params)
    x = np.random.default_rng(1).uniform(0, 1, (1, 1, 6, 6))
    out = net.forward(Tensor(x))
    np.testing.assert_array_equal(out.data, x)


def test_random_net_preserves_shape_and_is_finite():
    net = Network(range_net_arch(1), seed=42)
    out = net.forward(Tensor(np.random.default_rng(2).uniform(-1, 1, (1, 1, 8, 8))))
    assert out.shape == (1, 1, 8, 8)
    assert np.isfinite(out.data).all()


def test_channel_mismatch_rejected():
    net = Network(range_net_arch(1), seed=0)
    with pytest.raises(ShapeError, match="channels"):
        net.forward(Tensor(np.zeros((1, 3, 8, 8))))


def test_wrong_param_count_rejected():
    with pytest.raises(ShapeError, match="parameters"):
        Network(range_net_arch(1), params=np.zeros(7))


def test_seeded_init_is_deterministic_and_bounded_by_fan_in():
    a = Network(null_net_arch(1), seed=5)
    b = Network(null_net_arch(1), seed=5)
    assert np.array_equal(a.params.data, b.params.data)
    w_off, w_shape, b_off, b_len = a.layout[2]  # a hidden 32->32 conv
    w = a.params.data[w_off:b_off]
    assert np.abs(w).max() <= 1.0 / np.sqrt(32 * 9)
    assert np.abs(a.params.data[b_off:b_off + b_len]).max() == 0.0


def test_skip_connection_adds_early_activation():
    # two convs with a skip re-adding the first activation
    arch = (conv(3, 1, 1), RELU, conv(3, 1, 1), skip(1))
    net = Network(arch, params=np.zeros(20))
    params = np.zeros(20)
    params[4] = 1.0   # first conv = identity
    params[14] = 1.0  # second conv = identity
    net.set_params(params)
    x = np.random.default_rng(3).uniform(0.1, 1.0, (1, 1, 5, 5))
    out = net.forward(Tensor(x))
    np.testing.assert_allclose(out.data, 2.0 * x, atol=1e-15)


def test_null_net_arch_skip_shapes_agree():
    net = Network(null_net_arch(2), seed=9)
    out = net.forward(Tensor(np.random.default_rng(4).uniform(-1, 1, (1, 2, 8, 8))))
    assert out.shape == (1, 2, 8, 8)


def test_grad_vector_matches_finite_differences():
    arch = (conv(3, 1, 2), RELU, conv(3, 2, 1))
    net = Network(arch, seed=11)
    rng = np.random.default_rng(12)
    x = rng.uniform(-1, 1, (1, 1, 5, 5))
    t = rng.uniform(-1, 1, (1, 1, 5, 5))

    def loss_from_params(p):
        probe = Network(arch, params=p.data)
        out = probe.forward(Tensor(x))
        diff = apply_primitive("sub", out, Tensor(t))
        return apply_primitive("mean", apply_primitive("mul", diff, diff))

    tape = Tape()
    leaves = net.make_leaves(tape)
    out = net.forward(Tensor(x), leaves)
    diff = apply_primitive("sub", out, Tensor(t))
    loss = apply_primitive("mean", apply_primitive("mul", diff, diff))
    flat = net.grad_vector(leaves, backward(tape, loss))

    fd = finite_diff_gradient(lambda p: loss_from_params(p).item(), net.params)
    err = np.linalg.norm(flat - fd.data) / max(np.linalg.norm(fd.data), 1e-12)
    assert err < 1e-4
