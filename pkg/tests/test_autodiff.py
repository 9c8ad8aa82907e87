import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from dgnn.core import autodiff as ad
from dgnn.errors import GraphIndexError, ShapeError, TapeError
from dgnn.utils.gradcheck import numeric_gradient, relative_error


def check_grad(build, params, seed_note=""):
    """build() returns a scalar Tensor computed from params; compare tape and finite differences."""
    grads = ad.backward(build())
    for p in params:
        numeric = numeric_gradient(lambda: build().item(), p.data)
        analytic = grads.get(p, np.zeros_like(p.data))
        assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-8, err_msg=f"{p.name} {seed_note}")


def param(rng, *shape, name=None):
    return ad.Parameter(rng.normal(size=shape), name=name)


@pytest.mark.parametrize("seed", range(10))
def test_elementwise_and_matmul_gradients(seed):
    rng = np.random.default_rng(seed)
    a, b = param(rng, 3, 4, name="a"), param(rng, 4, name="b")
    W = param(rng, 4, 2, name="W")

    def build():
        h = ad.tanh(ad.add(a, b)) * ad.sigmoid(ad.sub(a, 0.3))
        return ad.sum_all(ad.relu(ad.matmul(h, W) + 0.1))

    check_grad(build, [a, b, W], f"seed={seed}")


@pytest.mark.parametrize("seed", range(10))
def test_structural_op_gradients(seed):
    rng = np.random.default_rng(100 + seed)
    x = param(rng, 5, 3, name="x")
    A = param(rng, 4, 2, 3, name="A")
    senders = np.array([0, 4, 4, 2])
    receivers = np.array([1, 1, 3, 0])

    def build():
        msgs = ad.batched_matvec(A, ad.take_rows(x, senders))
        pooled = ad.segment_sum(msgs, receivers, 5)
        joined = ad.concat([pooled, x], axis=1)
        flat = ad.reshape(joined, (1, 25))
        return ad.sum_all(flat * flat)

    check_grad(build, [x, A], f"seed={seed}")


@pytest.mark.parametrize("seed", range(10))
def test_gru_cell_gradients(seed):
    rng = np.random.default_rng(200 + seed)
    d = 3
    gp = ad.GruParams(*[param(rng, d, d, name=n) if not n.startswith("b") else param(rng, d, name=n)
                        for n in ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")])
    h = param(rng, 4, d, name="h")
    m = param(rng, 4, d, name="m")

    def build():
        return ad.sum_all(ad.gru_cell(h, m, gp))

    check_grad(build, [h, m] + list(vars(gp).values()), f"seed={seed}")


def test_mean_squared_error_gradient():
    rng = np.random.default_rng(7)
    pred = param(rng, 6, 1, name="pred")
    target = rng.normal(size=6)
    check_grad(lambda: ad.mean_squared_error(pred, target), [pred])


def test_dense_matches_numpy():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 4))
    W, b = param(rng, 4, 2), param(rng, 2)
    out = ad.dense(x, W, b, "relu")
    assert_allclose(out.data, np.maximum(x @ W.data + b.data, 0.0))


def test_shared_subexpression_accumulates():
    x = ad.Parameter(np.array([[2.0]]))
    y = x * x + x
    grads = ad.backward(ad.sum_all(y))
    assert_allclose(grads[x], [[5.0]])


def test_segment_sum_empty_segment_is_zero():
    values = ad.as_tensor(np.ones((2, 3)))
    out = ad.segment_sum(values, [0, 0], 3)
    assert_array_equal(out.data[1:], 0.0)
    assert_array_equal(out.data[0], 2.0)


def test_backward_rejects_non_scalar():
    x = ad.Parameter(np.ones((2, 2)))
    with pytest.raises(TapeError):
        ad.backward(x * 2.0)


def test_tape_is_single_use():
    x = ad.Parameter(np.ones((1, 1)))
    loss = ad.sum_all(x * 3.0)
    ad.backward(loss)
    with pytest.raises(TapeError):
        ad.backward(loss)


def test_shape_errors():
    a = ad.as_tensor(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        ad.matmul(a, ad.as_tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        ad.add(a, ad.as_tensor(np.ones((4,))))
    with pytest.raises(ShapeError):
        ad.dense(a, ad.Parameter(np.ones((3, 2))), ad.Parameter(np.ones(3)))


def test_index_errors():
    x = ad.as_tensor(np.ones((3, 2)))
    with pytest.raises(GraphIndexError):
        ad.take_rows(x, [0, 3])
    with pytest.raises(GraphIndexError):
        ad.segment_sum(x, [0, 1, -1], 2)


def test_constants_build_no_backward():
    out = ad.tanh(ad.as_tensor(np.ones((2, 2))))
    assert out.backward_fn is None
    assert not out.requires_grad


def test_float32_stays_float32():
    W = ad.Parameter(np.ones((2, 2), dtype=np.float32))
    out = ad.sigmoid(ad.matmul(ad.as_tensor(np.ones((1, 2), dtype=np.float32)), W) * 0.5 + 1.0)
    assert out.dtype == np.float32


def test_relative_error_helper():
    assert relative_error([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert relative_error([1.0], [1.1]) == pytest.approx(0.1 / 1.1)


def test_matmul_examples():
    M = np.array([[1.5, -2.0, 0.25], [3.0, 0.0, -1.0]])
    assert_array_equal(ad.matmul(np.eye(2), M).data, M)
    assert_array_equal(ad.matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]])).data, [[11.0]])


def test_dense_sigmoid_at_zero():
    out = ad.dense(np.ones((2, 3)), ad.zeros((3, 4)), ad.zeros(4), "sigmoid")
    assert_array_equal(out.data, np.full((2, 4), 0.5))


def zero_gru(d):
    return ad.GruParams(*[ad.zeros((d, d)) if not n.startswith("b") else ad.zeros(d)
                          for n in ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")])


def test_gru_cell_with_zero_parameters_halves_the_state():
    h = np.array([[1.0, -2.0, 4.0], [0.5, 0.0, -3.0]])
    m = np.random.default_rng(0).normal(size=(2, 3))
    assert_array_equal(ad.gru_cell(ad.as_tensor(h), ad.as_tensor(m), zero_gru(3)).data, 0.5 * h)


def test_gru_cell_zero_state_and_message():
    zero = ad.as_tensor(np.zeros((2, 3)))
    assert_array_equal(ad.gru_cell(zero, zero, zero_gru(3)).data, 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_segment_sum_is_permutation_equivariant(seed):
    rng = np.random.default_rng(300 + seed)
    values = rng.normal(size=(7, 3))
    segments = rng.integers(0, 4, size=7)
    out = ad.segment_sum(ad.as_tensor(values), segments, 4).data

    rows = rng.permutation(7)
    assert_allclose(ad.segment_sum(ad.as_tensor(values[rows]), segments[rows], 4).data, out, rtol=0, atol=1e-12)

    relabel = rng.permutation(4)
    moved = ad.segment_sum(ad.as_tensor(values), relabel[segments], 4).data
    assert_allclose(moved[relabel], out, rtol=0, atol=1e-12)


def test_repeated_passes_give_identical_gradients():
    rng = np.random.default_rng(5)
    x, W = param(rng, 4, 3, name="x"), param(rng, 3, 3, name="W")
    senders, receivers = np.array([0, 1, 2, 3, 3]), np.array([1, 2, 3, 0, 1])

    def build():
        msgs = ad.take_rows(ad.tanh(ad.matmul(x, W)), senders)
        return ad.sum_all(ad.relu(ad.segment_sum(msgs, receivers, 4)))

    first, second = ad.backward(build()), ad.backward(build())
    for p in (x, W):
        assert_array_equal(first[p], second[p])
