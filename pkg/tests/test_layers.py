import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ocuseg.gradcheck import grad_check
from ocuseg.layers import (activation, activation_backward, conv2d,
                           conv2d_backward, pool2x, pool2x_backward,
                           softmax_vec, softplus, upsample2x,
                           upsample2x_backward)
from ocuseg.rng import Rng


class TestConv2d:
    def test_identity_kernel(self, rng):
        x = rng.uniform_array(3 * 7 * 9).reshape(3, 7, 9)
        k = np.zeros((3, 3, 1, 1))
        for c in range(3):
            k[c, c, 0, 0] = 1.0
        assert np.array_equal(conv2d(x, k, 0), x)

    def test_zero_kernel_and_linearity(self, rng):
        x = rng.uniform_array(2 * 6 * 6).reshape(2, 6, 6)
        k = np.zeros((1, 2, 3, 3))
        out = conv2d(x, k, 1)
        assert np.array_equal(out, np.zeros((1, 6, 6)))
        # grad_kernel at zero kernel is the correlation of input with grad_out
        g = rng.uniform_array(1 * 6 * 6).reshape(1, 6, 6)
        _, gk = conv2d_backward(g, x, k, 1)
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        expected = np.zeros_like(k)
        for ci in range(2):
            for di in range(3):
                for dj in range(3):
                    expected[0, ci, di, dj] = (xp[ci, di:di + 6, dj:dj + 6] * g[0]).sum()
        np.testing.assert_allclose(gk, expected, rtol=1e-12)

    def test_gradients_match_finite_differences(self, rng):
        # random 2x5x5 input, 3x3 kernel, checked against central differences
        x = rng.normal_array(2 * 5 * 5).reshape(2, 5, 5)
        k0 = rng.normal_array(2 * 2 * 3 * 3).reshape(2, 2, 3, 3)
        target = rng.normal_array(2 * 5 * 5).reshape(2, 5, 5)

        def f_kernel(kf):
            k = kf.reshape(2, 2, 3, 3)
            out = conv2d(x, k, 1)
            loss = 0.5 * ((out - target) ** 2).sum()
            _, gk = conv2d_backward(out - target, x, k, 1)
            return loss, gk.reshape(-1)

        assert grad_check(f_kernel, k0.reshape(-1), 1e-5) < 1e-6

        def f_input(xf):
            xi = xf.reshape(2, 5, 5)
            out = conv2d(xi, k0.reshape(2, 2, 3, 3), 1)
            loss = 0.5 * ((out - target) ** 2).sum()
            gi, _ = conv2d_backward(out - target, xi, k0.reshape(2, 2, 3, 3), 1)
            return loss, gi.reshape(-1)

        assert grad_check(f_input, x.reshape(-1), 1e-5) < 1e-6

    def test_shape_errors_name_dimensions(self):
        x = np.zeros((2, 4, 4))
        with pytest.raises(ValueError, match="input channels"):
            conv2d(x, np.zeros((1, 3, 3, 3)), 1)
        with pytest.raises(ValueError, match="pad"):
            conv2d(x, np.zeros((1, 2, 3, 3)), 0)
        with pytest.raises(ValueError, match="odd"):
            conv2d(x, np.zeros((1, 2, 2, 2)), 0)


class TestActivations:
    def test_relu_values(self):
        out = activation(np.array([-1.0, 0.0, 2.0]), "relu")
        assert np.array_equal(out, [0.0, 0.0, 2.0])

    def test_softplus_at_zero(self):
        assert softplus(np.array([0.0]))[0] == pytest.approx(math.log(2), abs=1e-12)

    def test_softplus_overflow_safe(self):
        assert softplus(np.array([50.0]))[0] == pytest.approx(50.0, abs=1e-9)
        assert softplus(np.array([700.0]))[0] == pytest.approx(700.0, abs=1e-9)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown activation"):
            activation(np.zeros(2), "tanh")

    @pytest.mark.parametrize("kind", ["relu", "softplus"])
    def test_backward_matches_fd(self, kind, rng):
        x0 = rng.normal_array(40)

        def f(x):
            y = activation(x, kind)
            return 0.5 * (y ** 2).sum(), activation_backward(y, x, kind)

        assert grad_check(f, x0, 1e-5) < 1e-6


class TestPoolUpsample:
    def test_constant_invariance(self):
        c = np.full((1, 8, 8), 3.25)
        assert np.array_equal(pool2x(c), np.full((1, 4, 4), 3.25))
        assert np.array_equal(upsample2x(c), np.full((1, 16, 16), 3.25))

    def test_pool_arithmetic_mean(self):
        assert pool2x(np.array([[1.0, 3.0], [5.0, 7.0]]))[0, 0] == 4.0

    def test_odd_dims_rejected(self):
        with pytest.raises(ValueError, match="even"):
            pool2x(np.zeros((1, 5, 4)))

    def test_adjoint_up_to_factor_4(self, rng):
        x = rng.normal_array(16).reshape(4, 4)
        y = rng.normal_array(64).reshape(8, 8)
        lhs = (upsample2x(x) * y).sum()
        rhs = (x * pool2x(y)).sum() * 4.0
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_backward_matches_fd(self, rng):
        x0 = rng.normal_array(64)
        target = rng.normal_array(64).reshape(8, 8)

        def f(x):
            up = upsample2x(pool2x(x.reshape(8, 8)))
            loss = 0.5 * ((up - target) ** 2).sum()
            grad = pool2x_backward(upsample2x_backward(up - target))
            return loss, grad.reshape(-1)

        assert grad_check(f, x0, 1e-5) < 1e-6


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax_vec(np.zeros(4)), 0.25, atol=1e-15)

    def test_analytic(self):
        out = softmax_vec(np.array([math.log(3), 0.0]))
        np.testing.assert_allclose(out, [0.75, 0.25], atol=1e-12)

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=8),
           st.floats(-100, 100))
    @settings(max_examples=50, deadline=None)
    def test_shift_invariance_and_normalization(self, logits, c):
        logits = np.array(logits)
        p = softmax_vec(logits)
        q = softmax_vec(logits + c)
        assert abs(p.sum() - 1.0) < 1e-12
        assert np.all(p > 0)
        np.testing.assert_allclose(p, q, atol=1e-12)

    def test_rejects_scalarish_input(self):
        with pytest.raises(ValueError):
            softmax_vec(np.array([1.0]))
