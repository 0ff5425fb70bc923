import numpy as np
import pytest

from rn_decomp.optim import AdamState, adam_step
from rn_decomp.tensor import ShapeError, Tensor


def test_zero_gradient_without_decay_is_a_fixed_point():
    p = Tensor([1.0, -2.0, 3.0])
    out, state = adam_step(p, Tensor(np.zeros(3)), AdamState(), lr=0.1)
    np.testing.assert_array_equal(out.data, p.data)
    assert state.step == 1


def test_first_step_with_beta_zero_is_normalized_gradient():
    # with beta1 = beta2 = 0 the update is lr * g / (|g| + eps)
    p = Tensor([1.0, 1.0])
    g = np.array([0.5, -2.0])
    out, _ = adam_step(p, Tensor(g), AdamState(), lr=0.01, beta1=0.0, beta2=0.0, eps=1e-8)
    expected = p.data - 0.01 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(out.data, expected, rtol=1e-12)


def test_decoupled_decay_scales_params():
    p = Tensor([2.0, -4.0])
    out, _ = adam_step(
        p, Tensor(np.zeros(2)), AdamState(), lr=0.01, weight_decay=0.1
    )
    np.testing.assert_allclose(out.data, p.data * (1.0 - 0.001), rtol=1e-12)


def test_decay_mask_restricts_decay():
    p = Tensor([2.0, 2.0])
    mask = np.array([True, False])
    out, _ = adam_step(
        p, Tensor(np.zeros(2)), AdamState(), lr=0.01, weight_decay=0.1, decay_mask=mask
    )
    np.testing.assert_allclose(out.data, [2.0 * 0.999, 2.0])


def test_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        adam_step(Tensor([1.0]), Tensor([1.0, 2.0]), AdamState(), lr=0.1)


def test_state_threads_through_steps():
    p = Tensor([1.0])
    state = AdamState()
    for i in range(3):
        p, state = adam_step(p, Tensor([1.0]), state, lr=0.1)
        assert state.step == i + 1
    # a constant gradient keeps moving the parameter in one direction
    assert p.item() < 1.0 - 0.2
