import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from jointse.autodiff import (Adam, Parameter, Tensor, backward, clip_by_global_norm, debug_mode,
                              default_dtype, global_norm, grad, load_checkpoint, no_grad, ops,
                              save_checkpoint)
from jointse.errors import InvalidInputError, InvalidStateError, NumericError

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def test_grad_of_polynomial_matches_hand_derivative():
    x = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    y = ops.sum(x * x * x + 2.0 * x)
    (g,) = grad(y, [x])
    np.testing.assert_allclose(g, 3 * x.data ** 2 + 2.0)


def test_unreachable_input_gets_zero_gradient():
    a = Tensor(np.ones(3), requires_grad=True)
    b = Tensor(np.ones(2), requires_grad=True)
    ga, gb = grad(ops.sum(a * 2.0), [a, b])
    np.testing.assert_array_equal(ga, 2.0)
    np.testing.assert_array_equal(gb, 0.0)


def test_backward_accumulates_into_leaves():
    p = Parameter(np.array([1.0, 2.0]))
    ops.sum(p * p).backward()
    ops.sum(p * 3.0).backward()
    np.testing.assert_allclose(p.grad, 2 * p.data + 3.0)


def test_non_scalar_output_requires_cotangent():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(InvalidInputError):
        grad(x * 2.0, [x])


def test_grad_of_constant_output_is_an_error():
    with pytest.raises(InvalidStateError):
        grad(Tensor(np.ones(1)), [Tensor(np.ones(1), requires_grad=True)])


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad
    assert y._parents == ()


def test_shared_subexpression_gradients_add():
    x = Tensor(np.array(2.0), requires_grad=True)
    h = ops.exp(x)
    (g,) = grad(h * h + h, [x])
    assert g == pytest.approx(2 * np.exp(4.0) + np.exp(2.0))


def test_incompatible_broadcast_is_rejected():
    with pytest.raises(InvalidInputError):
        ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))


def test_debug_mode_catches_non_finite_forward_values():
    x = Tensor(np.array([-1.0]), requires_grad=True)
    with debug_mode(), pytest.raises(NumericError), np.errstate(invalid="ignore"):
        ops.log(x)


def test_default_dtype_context():
    # non-float input adopts the default dtype; float input keeps its own
    with default_dtype(np.float32):
        assert Tensor([1, 2]).dtype == np.float32
        assert Tensor(np.ones(2)).dtype == np.float64
    assert Tensor([1, 2]).dtype == np.float64


def test_deep_chain_does_not_hit_recursion_limit():
    x = Tensor(np.array(1.0), requires_grad=True)
    y = x
    for _ in range(5000):
        y = y * 1.0001
    (g,) = grad(y, [x])
    assert g == pytest.approx(1.0001 ** 5000)


def test_reverse_sequences_is_an_involution(rng):
    x = Tensor(rng.standard_normal((3, 5, 2)))
    lengths = np.array([5, 2, 4])
    back = ops.reverse_sequences(ops.reverse_sequences(x, lengths), lengths)
    np.testing.assert_array_equal(back.data, x.data)
    np.testing.assert_array_equal(ops.reverse_sequences(x, lengths).data[1, :2], x.data[1, [1, 0]])


def test_conv1d_matches_numpy_correlation(rng):
    x = rng.standard_normal((1, 9, 1))
    w = rng.standard_normal((3, 1, 1))
    out = ops.conv1d(Tensor(x), Tensor(w), padding=0).data[0, :, 0]
    np.testing.assert_allclose(out, np.correlate(x[0, :, 0], w[:, 0, 0], mode="valid"))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (2, 3), elements=finite), arrays(np.float64, (3,), elements=finite))
def test_bias_broadcast_gradient_sums_over_rows(a, b):
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    ga, gb = grad(ops.sum(ops.add(ta, tb)), [ta, tb])
    np.testing.assert_array_equal(ga, np.ones_like(a))
    np.testing.assert_array_equal(gb, np.full(3, 2.0))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4,), elements=finite))
def test_softmax_rows_sum_to_one_and_grad_of_sum_vanishes(a):
    x = Tensor(a, requires_grad=True)
    s = ops.softmax(x)
    assert s.data.sum() == pytest.approx(1.0)
    (g,) = grad(ops.sum(s), [x])
    np.testing.assert_allclose(g, 0.0, atol=1e-12)


def test_adam_first_step_moves_each_coordinate_by_lr():
    p = Parameter(np.array([1.0, -1.0, 3.0]))
    opt = Adam([p], lr=0.1)
    opt.step([np.array([0.5, -2.0, 1e-3])])
    np.testing.assert_allclose(p.data, [0.9, -0.9, 3.0 - 0.1 * 1e-3 / (1e-3 + 1e-8)], rtol=1e-7)


def test_adam_matches_reference_recursion(rng):
    p = Parameter(rng.standard_normal(4))
    ref = p.data.copy()
    m = np.zeros(4)
    v = np.zeros(4)
    opt = Adam([p], lr=0.01)
    for t in range(1, 6):
        g = rng.standard_normal(4)
        opt.step([g])
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p.data, ref, rtol=1e-12)


def test_clip_by_global_norm():
    grads = [np.array([3.0]), np.array([4.0])]
    clipped, norm = clip_by_global_norm(grads, 1.0)
    assert norm == 5.0
    assert global_norm(clipped) == pytest.approx(1.0)
    same, _ = clip_by_global_norm(grads, 10.0)
    np.testing.assert_array_equal(same[0], grads[0])


def test_checkpoint_roundtrip_is_bitwise(tmp_path, rng):
    arrays_in = {"a": rng.standard_normal((3, 4)), "b": np.arange(5, dtype=np.int64),
                 "c": rng.standard_normal(2).astype(np.float32)}
    path = tmp_path / "x.ckpt"
    save_checkpoint(str(path), arrays_in, {"step": 7})
    arrays_out, meta = load_checkpoint(str(path))
    assert meta["step"] == 7
    for k, v in arrays_in.items():
        assert arrays_out[k].dtype == v.dtype
        np.testing.assert_array_equal(arrays_out[k], v)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(InvalidInputError):
        load_checkpoint(str(path))


def test_module_level_backward_helper():
    x = Parameter(np.array([2.0]))
    backward(ops.sum(x * x))
    np.testing.assert_allclose(x.grad, [4.0])
