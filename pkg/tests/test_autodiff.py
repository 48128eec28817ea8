import numpy as np
import pytest

import reil.autodiff as ad
from reil.autodiff import Tensor

from fd import fd_gradient, max_rel_err


def _leaf(arr):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def check_op(build, *shapes, seed=0):
    """Compare tape gradients of a scalar-valued composition against FD."""
    rng = np.random.default_rng(seed)
    leaves = [_leaf(rng.normal(size=s)) for s in shapes]
    out = build(*leaves)
    out.backward()
    for leaf in leaves:
        def f(leaf=leaf):
            fresh = [Tensor(l.data) for l in leaves]
            return float(build(*fresh).data)
        fd = fd_gradient(f, leaf.data.reshape(-1)).reshape(leaf.data.shape)
        assert max_rel_err(leaf.grad, fd) < 1e-6


def test_matmul_grad():
    check_op(lambda a, b: ad.sum_(ad.matmul(a, b)), (3, 4), (4, 2))


def test_add_broadcast_grad():
    check_op(lambda a, b: ad.sum_(ad.square(ad.add(a, b))), (5, 3), (3,))


def test_mul_scalar_tensor_grad():
    check_op(lambda a, m: ad.sum_(ad.mul(m, a)), (4, 4), ())


def test_nonlinearities_grad():
    check_op(lambda a: ad.sum_(ad.tanh(a)), (4, 3))
    check_op(lambda a: ad.sum_(ad.sigmoid(a)), (4, 3))
    check_op(lambda a: ad.sum_(ad.exp(a)), (3, 3))
    check_op(lambda a: ad.sum_(ad.log(ad.add(ad.square(a), 1.0))), (3, 3))


def test_softmax_rows_grad():
    check_op(lambda a: ad.sum_(ad.square(ad.softmax_rows(a))), (4, 5))


def test_softmax_handles_minus_inf():
    x = np.array([[0.0, -np.inf, 1.0]])
    y = ad.softmax_rows(Tensor(x)).data
    assert y[0, 1] == 0.0
    assert abs(y.sum() - 1.0) < 1e-12


def test_concat_and_slice_grad():
    check_op(lambda a, b: ad.sum_(ad.square(ad.concat([a, b], axis=1)[:, 1:4])),
             (3, 2), (3, 3))


def test_causal_shift_grad_and_semantics():
    x = _leaf(np.arange(12.0).reshape(4, 3))
    y = ad.causal_shift(x, 2)
    assert np.array_equal(y.data[:2], np.zeros((2, 3)))
    assert np.array_equal(y.data[2:], x.data[:2])
    check_op(lambda a: ad.sum_(ad.square(ad.causal_shift(a, 1))), (5, 2))


def test_minimum_routes_gradient_to_winner():
    a = _leaf([1.0, 5.0])
    b = _leaf([2.0, 3.0])
    out = ad.sum_(ad.minimum(a, b))
    out.backward()
    assert np.array_equal(a.grad, [1.0, 0.0])
    assert np.array_equal(b.grad, [0.0, 1.0])


def test_take_rows_grad():
    idx = np.array([[0, 1], [1, 2], [0, 0]])
    check_op(lambda a: ad.sum_(ad.square(ad.take_rows(a, idx))), (3, 4))


def test_mean_axis_grad():
    check_op(lambda a: ad.sum_(ad.square(ad.mean(a, axis=1))), (3, 4))


def test_clip_by_value_blocks_boundary_gradient():
    x = _leaf([0.5, 2.0, -2.0])
    y = ad.sum_(ad.clip_by_value(x, -1.0, 1.0))
    y.backward()
    assert np.array_equal(x.grad, [1.0, 0.0, 0.0])


def test_backward_requires_scalar():
    x = _leaf(np.ones((2, 2)))
    with pytest.raises(ValueError):
        ad.tanh(x).backward()


def test_constant_inputs_build_no_graph():
    a = Tensor(np.ones((2, 2)))
    b = Tensor(np.ones((2, 2)))
    out = ad.matmul(a, b)
    assert not out.requires_grad and out._parents == ()


def test_grad_accumulates_over_reuse():
    x = _leaf([3.0])
    y = ad.add(ad.mul(x, x), ad.mul(x, 2.0))  # x^2 + 2x -> 2x + 2 = 8
    ad.sum_(y).backward()
    assert np.allclose(x.grad, [8.0])
