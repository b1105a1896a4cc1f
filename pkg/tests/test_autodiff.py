"""Reverse-mode gradients checked against central finite differences."""

import numpy as np
import pytest

from conftest import f64, gradcheck
from gmbinet import tensor as T
from gmbinet.tensor import ConvSpec, OpTape, ShapeError, Tensor


class TestConvGradients:
    @pytest.mark.parametrize("cin,cout,k,stride,dilation,padding,groups", [
        (3, 4, 3, 1, 1, 1, 1),
        (4, 4, 3, 1, 2, 2, 4),
        (4, 6, 3, 2, 1, 1, 2),
        (5, 3, 1, 1, 1, 0, 1),
        (2, 2, 3, 2, 2, 2, 2),
    ])
    def test_conv2d(self, rng, cin, cout, k, stride, dilation, padding, groups):
        x = f64(rng.standard_normal((2, cin, 7, 6)))
        w = f64(rng.standard_normal((cout, cin // groups, k, k)))
        spec = ConvSpec(cin, cout, k, stride, dilation, padding, groups)
        gradcheck(lambda: T.tensor_mean(T.mul(y := T.conv2d(x, w, spec), y)), [x, w])

    def test_conv2d_bias(self, rng):
        x = f64(rng.standard_normal((1, 3, 5, 5)))
        w = f64(rng.standard_normal((4, 3, 3, 3)))
        b = f64(rng.standard_normal((1, 4, 1, 1)))
        spec = ConvSpec(3, 4, padding=1, bias=True)
        gradcheck(lambda: T.tensor_mean(T.sigmoid(T.conv2d(x, w, spec, b))), [x, w, b])


class TestResamplingGradients:
    def test_bilinear_resize(self, rng):
        x = f64(rng.standard_normal((1, 2, 5, 4)))
        gradcheck(lambda: T.tensor_mean(T.mul(y := T.bilinear_resize(x, 8, 9), y)), [x])

    def test_bilinear_downscale(self, rng):
        x = f64(rng.standard_normal((1, 1, 8, 8)))
        gradcheck(lambda: T.tensor_sum(T.sigmoid(T.bilinear_resize(x, 3, 5))), [x])

    def test_gauss_blur(self, rng):
        x = f64(rng.standard_normal((1, 2, 9, 9)))
        gradcheck(lambda: T.tensor_mean(T.mul(y := T.gauss_blur(x, 5, 1.5), y)), [x])


class TestElementwiseGradients:
    def test_binary_ops(self, rng):
        a = f64(rng.standard_normal((1, 2, 3, 3)))
        b = f64(rng.standard_normal((1, 2, 3, 3)) + 3.0)
        gradcheck(lambda: T.tensor_mean(T.mul(T.add(a, b), T.sub(a, b))), [a, b])
        gradcheck(lambda: T.tensor_mean(T.div(a, b)), [a, b])

    def test_affine_sigmoid_log(self, rng):
        x = f64(rng.random((1, 1, 4, 4)) + 0.5)
        gradcheck(lambda: T.tensor_mean(T.log(T.affine(x, 2.0, 0.25))), [x])
        gradcheck(lambda: T.tensor_sum(T.sigmoid(x)), [x])

    def test_relu_away_from_kink(self, rng):
        data = rng.standard_normal((1, 2, 4, 4))
        data[np.abs(data) < 0.2] = 0.3
        x = f64(data)
        gradcheck(lambda: T.tensor_mean(T.mul(y := T.relu(x), y)), [x])

    def test_clamp_interior_and_blocked(self, rng):
        data = rng.uniform(-2, 2, (1, 1, 5, 5))
        data[np.abs(np.abs(data) - 1.0) < 0.2] = 0.0  # keep clear of the edges
        x = f64(data)
        gradcheck(lambda: T.tensor_mean(T.mul(y := T.clamp(x, -1.0, 1.0), y)), [x])


class TestStructureGradients:
    def test_split_concat(self, rng):
        x = f64(rng.standard_normal((1, 6, 3, 3)))
        def fn():
            a, b, c = T.channel_split(x, 3)
            return T.tensor_mean(T.mul(T.concat([c, a]), T.concat([b, b])))
        gradcheck(fn, [x])

    def test_channel_permute(self, rng):
        x = f64(rng.standard_normal((1, 5, 2, 2)))
        perm = [3, 0, 4, 1, 2]
        gradcheck(lambda: T.tensor_mean(T.mul(y := T.channel_permute(x, perm), y)), [x])

    def test_global_avg_pool(self, rng):
        x = f64(rng.standard_normal((2, 3, 4, 4)))
        gradcheck(lambda: T.tensor_sum(T.mul(p := T.global_avg_pool(x), p)), [x])


class TestBatchNormGradients:
    def test_training_mode(self, rng):
        c = 3
        x = f64(rng.standard_normal((3, c, 4, 4)))
        gamma = f64(rng.random((1, c, 1, 1)) + 0.5)
        beta = f64(rng.standard_normal((1, c, 1, 1)))
        rmean, rvar = np.zeros(c), np.ones(c)
        def fn():
            y = T.batch_norm(x, gamma, beta, rmean, rvar, training=True)
            return T.tensor_mean(T.mul(y, y))
        gradcheck(fn, [x, gamma, beta])

    def test_eval_mode(self, rng):
        c = 2
        x = f64(rng.standard_normal((1, c, 4, 4)))
        gamma = f64(rng.random((1, c, 1, 1)) + 0.5)
        beta = f64(rng.standard_normal((1, c, 1, 1)))
        rmean = rng.standard_normal(c)
        rvar = rng.random(c) + 0.5
        def fn():
            y = T.batch_norm(x, gamma, beta, rmean, rvar, training=False)
            return T.tensor_mean(T.sigmoid(y))
        gradcheck(fn, [x, gamma, beta])


class TestTapeMechanics:
    def test_fanout_accumulates(self, rng):
        x = f64(rng.standard_normal((1, 1, 3, 3)))
        # x enters the graph three times; d/dx mean(x*x + 2x) = 2x/9 + 2/9
        gradcheck(lambda: T.tensor_mean(T.add(T.mul(x, x), T.affine(x, 2.0))), [x])

    def test_non_scalar_loss_rejected(self, rng):
        x = f64(rng.standard_normal((1, 1, 2, 2)))
        with OpTape() as tape:
            y = T.mul(x, x)
        with pytest.raises(ShapeError):
            T.backward(tape, y)

    def test_untaped_ops_not_recorded(self, rng):
        x = f64(rng.standard_normal((1, 1, 2, 2)))
        T.mul(x, x)  # outside any tape
        with OpTape() as tape:
            loss = T.tensor_mean(x)
        assert len(tape.records) == 1
        T.backward(tape, loss)
        assert x.grad is not None

    def test_grad_accumulates_across_backward_calls(self, rng):
        x = f64(rng.standard_normal((1, 1, 2, 2)))
        for _ in range(2):
            with OpTape() as tape:
                loss = T.tensor_sum(x)
            T.backward(tape, loss)
        np.testing.assert_allclose(x.grad, 2.0, rtol=1e-6)
        x.zero_grad()
        assert x.grad is None

    def test_composite_chain(self, rng):
        """Deeper mixed graph: conv, upsample, gating, reduction."""
        x = f64(rng.standard_normal((1, 2, 6, 6)))
        w = f64(rng.standard_normal((2, 2, 3, 3)) * 0.5)
        spec = ConvSpec(2, 2, padding=1)
        def fn():
            y = T.conv2d(x, w, spec)
            g = T.sigmoid(T.bilinear_upsample(y, 2))
            return T.tensor_mean(T.mul(g, T.bilinear_upsample(x, 2)))
        gradcheck(fn, [x, w])
