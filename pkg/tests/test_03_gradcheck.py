#!/usr/bin/env python3

import numpy as np
import pytest

from izaber_catt.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from izaber_catt.errors import CheckpointError, ParseError
from izaber_catt.gradcheck import finite_diff_gradcheck
from izaber_catt.tensor import (
    EmbedParams,
    Parameter,
    add_row,
    concat_cols,
    concat_rows,
    cross_entropy,
    embed_block,
    gather_rows,
    layer_norm,
    log_softmax_rows,
    matmul,
    mean_axis,
    mul,
    relu,
    reshape,
    scale,
    softmax_rows,
    sum_all,
    transpose,
)


def test_linear_program_is_exact():
    w = Parameter("w", [[0.25, -0.5], [0.75, 1.0], [-1.25, 0.5]])
    x = np.arange(1.0, 13.0).reshape(4, 3)
    report = finite_diff_gradcheck(lambda g: sum_all(matmul(g.constant(x), g.parameter(w))), [w], h=1e-5)
    assert report.passed
    assert report.max_rel_error <= 1e-10


def test_constant_program():
    w = Parameter("w", np.ones((2, 2)))
    report = finite_diff_gradcheck(lambda g: sum_all(g.constant(np.ones(3))), [w])
    assert report.passed
    assert report.max_rel_error == 0.0
    assert report.checked == 4


def test_softmax_cross_entropy_seed_42():
    rng = np.random.default_rng(42)
    w = Parameter("w", rng.normal(size=(3, 3)))
    x = rng.normal(size=(3, 3))
    labels = [0, 2, 1]
    report = finite_diff_gradcheck(
        lambda g: cross_entropy(log_softmax_rows(matmul(g.constant(x), g.parameter(w))), labels),
        [w], h=1e-5, tol=1e-6)
    assert report.passed, report.summary()


def test_every_op_on_random_shapes():
    rng = np.random.default_rng(9)
    for trial in range(6):
        n, d = rng.integers(2, 6, size=2)
        a = Parameter("a", rng.normal(size=(n, d)))
        b = Parameter("b", rng.normal(size=(d, d)))
        bias = Parameter("bias", rng.normal(size=(1, d)))
        table = Parameter("table", rng.normal(size=(5, d)))
        embed = EmbedParams.create(rng, "embed", int(d), ffn_mult=2, layer_norm=bool(trial % 2))
        ids = rng.integers(0, 5, size=n)

        def program(g):
            x = add_row(matmul(g.parameter(a), g.parameter(b)), g.parameter(bias))
            x = embed_block(x, embed)
            y = mul(softmax_rows(scale(x, 0.7)), relu(gather_rows(g.parameter(table), ids)))
            y = concat_cols(y, transpose(matmul(transpose(g.parameter(b)), transpose(x))))
            y = concat_rows([y, reshape(layer_norm(y), (n, 2 * d))])
            return sum_all(mul(mean_axis(y, 0), mean_axis(y, 0)))

        report = finite_diff_gradcheck(program, [a, b, bias, table] + embed.parameters(), h=1e-5, tol=1e-5,
                                       atol=1e-8)
        assert report.passed, report.summary()


def test_corrupted_gradient_fails():
    rng = np.random.default_rng(1)
    w = Parameter("w", rng.normal(size=(2, 2)))
    x = rng.normal(size=(3, 2))
    report = finite_diff_gradcheck(lambda g: sum_all(relu(matmul(g.constant(x), g.parameter(w)))), [w],
                                   corrupt=lambda p, grad: grad + 1.0)
    assert not report.passed
    assert "FAIL" in report.summary()


def test_small_absolute_errors_fail_unless_exempted():
    w = Parameter("w", [[0.5, -1.0]])

    def program(g):
        return sum_all(scale(mul(g.parameter(w), g.parameter(w)), 1e-6))

    def nudge(p, grad):
        return grad + 1e-9

    strict = finite_diff_gradcheck(program, [w], corrupt=nudge)
    assert not strict.passed
    assert len(strict.failures) == 2
    assert strict.max_abs_error < 1e-8

    relaxed = finite_diff_gradcheck(program, [w], atol=1e-8, corrupt=nudge)
    assert relaxed.passed, relaxed.summary()


def test_gradcheck_leaves_state_clean():
    w = Parameter("w", [[1.0, -2.0]])
    before = w.value.copy()
    finite_diff_gradcheck(lambda g: sum_all(mul(g.parameter(w), g.parameter(w))), [w])
    assert np.array_equal(w.value, before)
    assert not w.grad.any()


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    a = Parameter("block.a", rng.normal(size=(3, 4)))
    b = Parameter("block.b", rng.normal(size=(1, 2)) * 1e-300)
    path = str(tmp_path / "model.ckpt")
    save_checkpoint(path, [a, b, a])
    stored = read_checkpoint(path)
    assert sorted(stored) == ["block.a", "block.b"]

    a2 = Parameter("block.a", np.zeros((3, 4)))
    b2 = Parameter("block.b", np.zeros((1, 2)))
    load_checkpoint(path, [a2, b2])
    assert np.array_equal(a2.value, a.value)
    assert np.array_equal(b2.value, b.value)


def test_checkpoint_mismatches(tmp_path):
    path = str(tmp_path / "model.ckpt")
    save_checkpoint(path, [Parameter("w", np.ones((2, 2)))])
    with pytest.raises(CheckpointError):
        load_checkpoint(path, [Parameter("w", np.ones((2, 3)))])
    with pytest.raises(CheckpointError):
        load_checkpoint(path, [Parameter("w", np.ones((2, 2))), Parameter("v", np.ones(1))])
    with pytest.raises(CheckpointError):
        load_checkpoint(path, [Parameter("v", np.ones((2, 2)))])
    with pytest.raises(CheckpointError):
        save_checkpoint(path, [Parameter("w", np.ones(1)), Parameter("w", np.ones(1))])


def test_checkpoint_parse_errors(tmp_path):
    path = tmp_path / "broken.ckpt"
    path.write_text("izaber-catt-checkpoint 1\nparam w 2 2 2\n1 2 3\n")
    with pytest.raises(ParseError) as err:
        read_checkpoint(str(path))
    assert err.value.line == 3

    path.write_text("something else\n")
    with pytest.raises(ParseError):
        read_checkpoint(str(path))


if __name__ == '__main__':
    test_linear_program_is_exact()
    test_constant_program()
    test_softmax_cross_entropy_seed_42()
    test_every_op_on_random_shapes()
    test_corrupted_gradient_fails()
    test_gradcheck_leaves_state_clean()
