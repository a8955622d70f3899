import numpy as np
import pytest

import diengmf.autodiff as ad
from diengmf.autodiff import Tensor
from diengmf.rng import RngStream


def finite_diff_check(build, arrays, rel=1e-6, eps=1e-6):
    """Compare reverse-mode gradients of a scalar graph to central differences.

    `build` maps a list of Tensors (one per array) to a scalar Tensor.
    """
    params = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(params)
    out.backward()
    for p in params:
        grad = np.zeros_like(p.data) if p.grad is None else p.grad
        fd = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        fd_flat = fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(ad.value(build(params)))
            flat[i] = orig - eps
            down = float(ad.value(build(params)))
            flat[i] = orig
            fd_flat[i] = (up - down) / (2 * eps)
        np.testing.assert_allclose(grad, fd, rtol=rel, atol=1e-8)


def rand(shape, seed=0):
    return RngStream(seed).standard_normal(shape)


class TestElementwise:
    def test_arithmetic_chain(self):
        arrays = [rand((3, 4), 1), rand((3, 4), 2)]

        def build(ps):
            a, b = ps
            c = (a * b + a - b) / (b * b + 2.0)
            return ad.tensor_sum(c * c)

        finite_diff_check(build, arrays)

    def test_broadcasting(self):
        arrays = [rand((3, 4), 3), rand((4,), 4), rand((), 5)]

        def build(ps):
            a, b, c = ps
            return ad.tensor_sum(a * b + c)

        finite_diff_check(build, arrays)

    def test_unary_functions(self):
        x = np.abs(rand((5,), 6)) + 0.5

        def build(ps):
            (a,) = ps
            return ad.tensor_sum(
                ad.exp(a) + ad.log(a) + ad.sqrt(a) + ad.square(a)
                + ad.softplus(a) + ad.gelu(a)
            )

        finite_diff_check(build, [x])


class TestShapes:
    def test_matmul(self):
        arrays = [rand((3, 4), 7), rand((4, 2), 8)]

        def build(ps):
            return ad.tensor_sum(ad.square(ad.matmul(ps[0], ps[1])))

        finite_diff_check(build, arrays)

    def test_sum_axes_and_mean(self):
        a = rand((3, 4), 9)

        def build(ps):
            s = ad.tensor_sum(ps[0], axis=1)
            return ad.mean(ad.square(s))

        finite_diff_check(build, [a])

    def test_reshape_transpose_concat(self):
        arrays = [rand((2, 6), 10), rand((3, 4), 11)]

        def build(ps):
            a = ad.reshape(ps[0], (3, 4))
            b = ad.transpose(ad.transpose(ps[1]))
            c = ad.concat([a, b], axis=-1)
            return ad.tensor_sum(ad.square(c))

        finite_diff_check(build, arrays)

    def test_cumsum(self):
        a = rand((2, 5), 12)

        def build(ps):
            return ad.tensor_sum(ad.square(ad.cumsum(ps[0], axis=-1)))

        finite_diff_check(build, [a])


class TestSelection:
    def test_where(self):
        a, b = rand((4, 3), 13), rand((4, 3), 14)
        cond = a > 0

        def build(ps):
            return ad.tensor_sum(ad.square(ad.where(cond, ps[0], ps[1])))

        finite_diff_check(build, [a, b])

    def test_take_put_static(self):
        a = rand((5, 4), 15)
        idx = np.array([0, 2])

        def build(ps):
            taken = ad.take_static(ps[0], idx, axis=-1)
            scattered = ad.put_static(taken, np.array([1, 3]), 4, axis=-1)
            return ad.tensor_sum(ad.square(scattered))

        finite_diff_check(build, [a])

    def test_gather_last(self):
        a = rand((4, 6), 16)
        idx = np.array([0, 5, 2, 3])

        def build(ps):
            return ad.tensor_sum(ad.square(ad.gather_last(ps[0], idx)))

        finite_diff_check(build, [a])

    def test_gather_last_repeated_indices(self):
        a = rand((3, 4), 17)
        idx = np.array([1, 1, 1])

        def build(ps):
            return ad.tensor_sum(ad.gather_last(ps[0], idx))

        finite_diff_check(build, [a])


class TestLinearSolve:
    def test_solve_lower_unit(self):
        lower = np.tril(rand((3, 3), 18), -1) + np.eye(3)
        rows = rand((5, 3), 19)

        def build(ps):
            return ad.tensor_sum(
                ad.square(ad.solve_tri_rows(ps[0], ps[1], lower=True, unit_diagonal=True))
            )

        finite_diff_check(build, [lower, rows])

    def test_solve_upper(self):
        upper = np.triu(rand((3, 3), 20)) + 3.0 * np.eye(3)
        rows = rand((4, 3), 21)

        def build(ps):
            return ad.tensor_sum(
                ad.square(ad.solve_tri_rows(ps[0], ps[1], lower=False))
            )

        finite_diff_check(build, [upper, rows])


class TestSoftmax:
    def test_softmax_gradient(self):
        a = rand((3, 5), 22)

        def build(ps):
            w = ad.softmax_last(ps[0])
            return ad.tensor_sum(ad.square(w))

        finite_diff_check(build, [a])

    def test_softmax_rows_sum_to_one(self):
        w = ad.softmax_last(rand((4, 7), 23) * 50.0)
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, rtol=1e-12)


class TestEngine:
    def test_plain_arrays_stay_plain(self):
        a, b = rand((2, 2), 24), rand((2, 2), 25)
        out = ad.add(ad.matmul(a, b), ad.exp(a))
        assert isinstance(out, np.ndarray)

    def test_no_grad_tensor_builds_no_graph(self):
        t = Tensor(rand((2, 2), 26), requires_grad=False)
        out = ad.mul(t, 2.0)
        assert isinstance(out, np.ndarray) or out._vjp is None

    def test_grad_accumulates_over_reuse(self):
        x = Tensor(np.array(2.0), requires_grad=True)
        y = ad.add(ad.mul(x, x), ad.mul(3.0, x))  # x^2 + 3x
        y.backward()
        assert x.grad == pytest.approx(2 * 2.0 + 3.0)

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            ad.mul(x, 2.0).backward()

    def test_diamond_graph(self):
        x = Tensor(np.array(1.5), requires_grad=True)
        a = ad.mul(x, 2.0)
        b = ad.mul(x, 3.0)
        out = ad.mul(a, b)  # 6 x^2
        out.backward()
        assert x.grad == pytest.approx(12 * 1.5)
