#!/usr/bin/env python3

import numpy as np
import pytest

from izaber_catt.errors import ContractError, DimensionError, InputError
from izaber_catt.tensor import (
    EmbedParams,
    Graph,
    Parameter,
    backward,
    concat_cols,
    cross_entropy,
    embed_block,
    gather_rows,
    matmul,
    mean_axis,
    mul,
    softmax_rows,
    sum_all,
    zero_grad,
)


def test_matmul_values():
    g = Graph()
    out = matmul(g.constant([[1, 2], [3, 4]]), g.constant([[5], [6]]))
    assert out.data.tolist() == [[17.0], [39.0]]

    m = np.array([[0.5, -2.0], [3.0, 7.25]])
    assert np.array_equal(matmul(g.constant(np.eye(2)), g.constant(m)).data, m)

    zeros = matmul(g.constant(np.zeros((1, 3))), g.constant(np.arange(12.0).reshape(3, 4)))
    assert zeros.shape == (1, 4)
    assert not zeros.data.any()


def test_matmul_shape_error_names_shapes():
    g = Graph()
    with pytest.raises(DimensionError) as err:
        matmul(g.constant(np.zeros((2, 3))), g.constant(np.zeros((2, 2))))
    assert "[2, 3]" in str(err.value)
    assert "[2, 2]" in str(err.value)


def test_matmul_associativity():
    rng = np.random.default_rng(0)
    for _ in range(20):
        m, k, n, p = rng.integers(1, 9, size=4)
        a, b, c = rng.normal(size=(m, k)), rng.normal(size=(k, n)), rng.normal(size=(n, p))
        g = Graph()
        left = matmul(matmul(g.constant(a), g.constant(b)), g.constant(c)).data
        right = matmul(g.constant(a), matmul(g.constant(b), g.constant(c))).data
        assert np.max(np.abs(left - right)) <= 1e-9


def test_softmax_rows():
    g = Graph()
    uniform = softmax_rows(g.constant([[0.0, 0.0, 0.0]])).data
    assert np.allclose(uniform, 1.0 / 3.0, atol=1e-15)

    s = softmax_rows(g.constant([[1.0, 2.0, 3.0]])).data[0]
    assert np.allclose(s, [0.09003057, 0.24472847, 0.66524096], atol=1e-8)

    x = np.array([[0.3, -1.2, 4.0, 2.2]])
    shifted = softmax_rows(g.constant(x + 123.0)).data
    assert np.allclose(shifted, softmax_rows(g.constant(x)).data, atol=1e-12)


def test_softmax_extreme_rows():
    rng = np.random.default_rng(3)
    g = Graph()
    x = rng.uniform(-700, 700, size=(50, 7))
    x[0] = [700, -700, 700, -700, 0, 0, 1]
    s = softmax_rows(g.constant(x)).data
    assert np.all(np.isfinite(s))
    assert np.all(s >= 0)
    assert np.max(np.abs(s.sum(axis=1) - 1.0)) <= 1e-12


def test_concat_cols():
    g = Graph()
    a = g.constant([[1.0], [2.0]])
    assert concat_cols(a, g.constant([[3.0], [4.0]])).data.tolist() == [[1, 3], [2, 4]]
    assert np.array_equal(concat_cols(a, g.constant(np.zeros((2, 0)))).data, a.data)
    assert concat_cols(g.constant(np.zeros((3, 2))), g.constant(np.zeros((3, 5)))).shape == (3, 7)
    with pytest.raises(DimensionError):
        concat_cols(g.constant(np.zeros((3, 2))), g.constant(np.zeros((2, 2))))


def _embed(w1, b1, w2, b2):
    return EmbedParams(Parameter("w1", w1), Parameter("b1", b1), Parameter("w2", w2), Parameter("b2", b2))


def test_embed_block():
    g = Graph()
    params = _embed([[1.0]], [[0.0]], [[1.0]], [[0.0]])
    assert embed_block(g.constant([[2.0]]), params).data.tolist() == [[4.0]]

    zero = _embed(np.zeros((3, 12)), np.zeros((1, 12)), np.zeros((12, 3)), np.zeros((1, 3)))
    x = np.random.default_rng(1).normal(size=(5, 3))
    out = embed_block(g.constant(x), zero)
    assert np.array_equal(out.data, x)

    with pytest.raises(DimensionError):
        embed_block(g.constant(np.zeros((5, 4))), zero)


def test_backward_rules():
    p = Parameter("p", [1.0, 2.0, 3.0])
    g = Graph()
    backward(sum_all(g.parameter(p)))
    assert p.grad.tolist() == [1.0, 1.0, 1.0]

    zero_grad([p])
    assert not p.grad.any()
    g = Graph()
    leaf = g.parameter(p)
    backward(sum_all(mul(leaf, leaf)))
    assert p.grad.tolist() == [2.0, 4.0, 6.0]

    g = Graph()
    leaf = g.parameter(p)
    backward(sum_all(mul(leaf, leaf)))
    assert p.grad.tolist() == [4.0, 8.0, 12.0]


def test_backward_needs_scalar():
    p = Parameter("p", np.ones((2, 2)))
    g = Graph()
    with pytest.raises(ContractError):
        backward(matmul(g.parameter(p), g.parameter(p)))


def test_parameter_leaf_is_shared():
    p = Parameter("p", np.ones((2, 2)))
    g = Graph()
    assert g.parameter(p) is g.parameter(p)


def test_gather_rows_scatters_gradient():
    table = Parameter("table", np.arange(6.0).reshape(3, 2))
    g = Graph()
    rows = gather_rows(g.parameter(table), [0, 0, 2])
    assert rows.data.tolist() == [[0, 1], [0, 1], [4, 5]]
    backward(sum_all(rows))
    assert table.grad.tolist() == [[2, 2], [0, 0], [1, 1]]
    with pytest.raises(InputError):
        gather_rows(g.parameter(table), [3])


def test_cross_entropy_of_uniform_logits():
    g = Graph()
    loss = cross_entropy(g.constant(np.zeros((4, 5))), [0, 1, 2, 4])
    assert abs(float(loss.data) - np.log(5)) <= 1e-12
    with pytest.raises(InputError):
        cross_entropy(g.constant(np.zeros((2, 3))), [0, 3])


def test_batched_matmul_gradient():
    rng = np.random.default_rng(5)
    a = Parameter("a", rng.normal(size=(2, 3, 4)))
    w = Parameter("w", rng.normal(size=(4, 5)))
    g = Graph()
    out = matmul(g.parameter(a), g.parameter(w))
    assert out.shape == (2, 3, 5)
    backward(sum_all(mean_axis(out, -2)))
    expected = (a.value.sum(axis=0).sum(axis=0) / 3.0)[:, None] * np.ones((1, 5))
    assert np.allclose(w.grad, expected, atol=1e-12)


def test_tape_determinism():
    def run():
        rng = np.random.default_rng(42)
        p = Parameter("p", rng.normal(size=(4, 4)))
        g = Graph()
        loss = cross_entropy(matmul(g.constant(rng.normal(size=(3, 4))), g.parameter(p)), [0, 1, 3])
        backward(loss)
        return float(loss.data), p.grad.copy()

    (l1, g1), (l2, g2) = run(), run()
    assert l1 == l2
    assert np.array_equal(g1, g2)


if __name__ == '__main__':
    test_matmul_values()
    test_matmul_shape_error_names_shapes()
    test_matmul_associativity()
    test_softmax_rows()
    test_softmax_extreme_rows()
    test_concat_cols()
    test_embed_block()
    test_backward_rules()
    test_backward_needs_scalar()
    test_parameter_leaf_is_shared()
    test_gather_rows_scatters_gradient()
    test_cross_entropy_of_uniform_logits()
    test_batched_matmul_gradient()
    test_tape_determinism()
