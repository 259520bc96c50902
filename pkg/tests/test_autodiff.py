import numpy as np
import pytest

from cellshift.errors import ArgumentError, NumericError, ShapeError
from cellshift.ndmath import (
    ParamSet,
    Tape,
    Tensor,
    attention,
    backward,
    broadcast_to,
    concat,
    exp,
    grad_check,
    log,
    matmul,
    mul,
    reshape,
    rmsnorm,
    sigmoid,
    silu,
    slice_axis,
    softmax,
    take_rows,
    tmean,
    transpose,
    tsum,
)


def test_identity_gradient():
    tape = Tape()
    x = Tensor([2.0, -1.0], tape)
    y = x + 0.0
    backward(tape, np.ones(2), out=y)
    assert np.array_equal(x.grad, np.ones(2))


def test_sum_of_squares_gradient():
    tape = Tape()
    x = Tensor([1.0, 2.0], tape)
    loss = tsum(mul(x, x))
    backward(tape, 1.0, out=loss)
    assert np.allclose(x.grad, [2.0, 4.0])


def test_fanout_accumulates():
    tape = Tape()
    x = Tensor([3.0], tape)
    loss = tsum(x + x)
    backward(tape, 1.0, out=loss)
    assert np.allclose(x.grad, [2.0])


def test_unreached_leaves_get_zero():
    params = ParamSet()
    params.add("used", np.array([1.0, 2.0]))
    params.add("unused", np.array([5.0]))
    tape = Tape()
    params.bind(tape)
    loss = tsum(mul(params["used"], params["used"]))
    backward(tape, 1.0, out=loss)
    grads = params.grads()
    assert np.allclose(grads["used"], [2.0, 4.0])
    assert np.array_equal(grads["unused"], [0.0])
    params.bind(None)


def test_seed_shape_mismatch():
    tape = Tape()
    x = Tensor([1.0, 2.0], tape)
    y = mul(x, 2.0)
    with pytest.raises(ShapeError):
        backward(tape, np.ones(3), out=y)


def test_constants_get_no_grad():
    tape = Tape()
    x = Tensor([1.0], tape)
    c = Tensor([4.0])  # no tape: constant
    loss = tsum(mul(x, c))
    backward(tape, 1.0, out=loss)
    assert c.grad is None
    assert np.allclose(x.grad, [4.0])


def _fd_check(build, arrays, tol=1e-6, h=1e-6, seed=0):
    """Compare tape grads of scalar build(tensors) against central differences."""
    tape = Tape()
    tensors = [Tensor(a, tape) for a in arrays]
    loss = build(*tensors)
    backward(tape, 1.0, out=loss)
    rng = np.random.default_rng(seed)
    for t, arr in zip(tensors, arrays):
        flat = arr.reshape(-1)
        grad = (t.grad if t.grad is not None else np.zeros_like(arr)).reshape(-1)
        idx = rng.choice(flat.size, size=min(6, flat.size), replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up = build(*[Tensor(a) for a in arrays]).item()
            flat[i] = orig - h
            down = build(*[Tensor(a) for a in arrays]).item()
            flat[i] = orig
            fd = (up - down) / (2 * h)
            assert abs(grad[i] - fd) / max(1.0, abs(grad[i])) < tol


class TestPrimitiveGradients:
    """Every differentiable primitive against central finite differences."""

    rng = np.random.default_rng(42)

    def test_add_broadcast(self):
        a = self.rng.normal(size=(3, 4))
        b = self.rng.normal(size=(4,))
        _fd_check(lambda x, y: tsum(mul(x + y, x + y)), [a, b])

    def test_sub_mul(self):
        a = self.rng.normal(size=(2, 3))
        b = self.rng.normal(size=(2, 3))
        _fd_check(lambda x, y: tsum(mul(x - y, mul(x, y))), [a, b])

    def test_exp_log_sigmoid_silu(self):
        a = self.rng.uniform(0.5, 2.0, size=(5,))
        _fd_check(lambda x: tsum(exp(x)) + tsum(log(x)), [a])
        b = self.rng.normal(size=(6,))
        _fd_check(lambda x: tsum(sigmoid(x)) + tsum(silu(x)), [b])

    def test_matmul_weight_and_batched(self):
        a = self.rng.normal(size=(2, 3, 4))
        w = self.rng.normal(size=(4, 5))
        _fd_check(lambda x, y: tsum(mul(matmul(x, y), matmul(x, y))), [a, w])
        p = self.rng.normal(size=(2, 3, 4))
        q = self.rng.normal(size=(2, 4, 3))
        _fd_check(lambda x, y: tsum(matmul(x, y)), [p, q])

    def test_reductions(self):
        a = self.rng.normal(size=(3, 4))
        _fd_check(lambda x: mul(tmean(x), tsum(mul(x, x))), [a])
        _fd_check(lambda x: tsum(mul(tmean(x, axis=0), tmean(x, axis=0))), [a])
        _fd_check(lambda x: tsum(mul(tsum(x, axis=1, keepdims=True), x)), [a])

    def test_shape_ops(self):
        a = self.rng.normal(size=(2, 3, 4))
        _fd_check(lambda x: tsum(mul(reshape(x, (6, 4)), reshape(x, (6, 4)))), [a])
        _fd_check(lambda x: tsum(mul(transpose(x, (2, 0, 1)), transpose(x, (2, 0, 1)))), [a])
        _fd_check(lambda x: tsum(mul(slice_axis(x, 1, 0, 2), slice_axis(x, 1, 0, 2))), [a])
        b = self.rng.normal(size=(1, 3, 1))
        _fd_check(lambda x: tsum(mul(broadcast_to(x, (2, 3, 4)), broadcast_to(x, (2, 3, 4)))), [b])

    def test_concat(self):
        a = self.rng.normal(size=(2, 3))
        b = self.rng.normal(size=(2, 2))
        _fd_check(lambda x, y: tsum(mul(concat([x, y], axis=1), concat([x, y], axis=1))), [a, b])

    def test_take_rows(self):
        w = self.rng.normal(size=(5, 3))
        ids = np.array([1, 1, 4, 0])
        _fd_check(lambda x: tsum(mul(take_rows(x, ids), take_rows(x, ids))), [w])

    def test_softmax(self):
        a = self.rng.normal(size=(3, 5))
        r = self.rng.normal(size=(3, 5))
        _fd_check(lambda x: tsum(mul(softmax(x), Tensor(r))), [a])

    def test_rmsnorm(self):
        x = self.rng.normal(size=(3, 4))
        g = self.rng.normal(size=(4,))
        r = self.rng.normal(size=(3, 4))
        _fd_check(lambda a, b: tsum(mul(rmsnorm(a, b, 1e-6), Tensor(r))), [x, g])

    def test_attention(self):
        q = self.rng.normal(size=(3, 4))
        k = self.rng.normal(size=(5, 4))
        v = self.rng.normal(size=(5, 4))
        r = self.rng.normal(size=(3, 4))
        _fd_check(lambda a, b, c: tsum(mul(attention(a, b, c), Tensor(r))), [q, k, v])


class TestGradCheck:
    def test_quadratic_form(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(4, 4))
        q = a @ a.T + 4 * np.eye(4)
        params = ParamSet()
        params.add("x", rng.normal(size=(4, 1)))

        def f(p):
            x = p["x"]
            return tsum(mul(x, matmul(Tensor(q), x)))

        assert grad_check(f, params, h=1e-5, coords_per_param=4) < 1e-9

    def test_softmax_cross_term(self):
        rng = np.random.default_rng(1)
        params = ParamSet()
        params.add("v", rng.normal(size=(6,)))
        params.add("w", rng.normal(size=(6,)))

        def f(p):
            return tsum(mul(softmax(p["v"]), sigmoid(p["w"])))

        assert grad_check(f, params, h=1e-5, coords_per_param=6) < 1e-6

    def test_h_out_of_range(self):
        params = ParamSet()
        params.add("x", np.ones(2))
        with pytest.raises(ArgumentError):
            grad_check(lambda p: tsum(p["x"]), params, h=1e-2)

    def test_nonfinite_loss(self):
        params = ParamSet()
        params.add("x", np.array([0.0]))

        def f(p):
            return tsum(log(p["x"]))

        with np.errstate(divide="ignore"), pytest.raises(NumericError):
            grad_check(f, params)
