# -*- coding: utf-8 -*-
# Copyright (c) 2023, The leafkit Developers
from __future__ import division, print_function, absolute_import

import numpy as np
import unittest

from leafkit import tensor as T
from leafkit.errors import (LabelMismatch, ModeError, NumericError,
                            ShapeMismatch)

N_INSTANCES = 20


def _weights(rng, shape):
    return rng.standard_normal(shape)


class TestTensorOps(unittest.TestCase):

    def test_arithmetic_and_broadcast_grad(self):
        a = T.Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)
        b = T.Tensor(np.array([10.0, 20.0]), requires_grad=True)
        out = ((a * b + a) / 2.0 - b).sum()
        out.backward()
        np.testing.assert_allclose(a.grad, [[5.5, 10.5], [5.5, 10.5]])
        np.testing.assert_allclose(b.grad, [(1.0 + 3.0) / 2.0 - 2.0,
                                            (2.0 + 4.0) / 2.0 - 2.0])

    def test_ndarray_on_the_left(self):
        a = T.Tensor(np.array([2.0, 4.0]), requires_grad=True)
        out = np.array([1.0, 2.0]) / a
        self.assertIsInstance(out, T.Tensor)
        out.sum().backward()
        np.testing.assert_allclose(a.grad, [-1.0 / 4.0, -2.0 / 16.0])

    def test_backward_needs_scalar_or_seed(self):
        a = T.Tensor(np.ones(3), requires_grad=True)
        self.assertRaises(ShapeMismatch, (a * 2.0).backward)
        (a * 2.0).backward(np.ones(3))
        np.testing.assert_allclose(a.grad, 2.0 * np.ones(3))

    def test_gradients_accumulate(self):
        a = T.Tensor(np.array(3.0), requires_grad=True)
        (a * a).backward()
        (a * a).backward()
        np.testing.assert_allclose(a.grad, 12.0)
        a.zero_grad()
        self.assertIsNone(a.grad)

    def test_no_grad_records_nothing(self):
        a = T.Tensor(np.ones(2), requires_grad=True)
        with T.no_grad():
            out = a * 3.0
            self.assertFalse(T.is_grad_enabled())
        self.assertTrue(T.is_grad_enabled())
        self.assertEqual(len(T.ComputationRecord(out)), 0)
        self.assertEqual(T.ComputationRecord(out).nodes, [out])

    def test_computation_record_order(self):
        a = T.Tensor(np.ones(2), requires_grad=True)
        b = T.exp(a)
        c = (b * a).sum()
        nodes = T.ComputationRecord(c).nodes
        self.assertIs(nodes[-1], c)
        self.assertLess(nodes.index(a), nodes.index(b))
        ops = [op for op, _, _ in T.ComputationRecord(c).operations()]
        self.assertEqual(ops, ['exp', 'multiply', 'sum'])

    def test_non_finite_raises(self):
        self.assertRaises(NumericError, T.log, T.Tensor(np.array([0.0, 1.0])))
        self.assertRaises(NumericError, T.sqrt, T.Tensor(np.array([-1.0])))
        self.assertRaises(NumericError, T.divide, T.Tensor(np.ones(2)),
                          T.Tensor(np.array([1.0, 0.0])))
        self.assertRaises(NumericError, T.exp, T.Tensor(np.array([1000.0])))

    def test_shape_mismatch(self):
        self.assertRaises(ShapeMismatch, T.add, T.Tensor(np.ones(3)),
                          T.Tensor(np.ones(4)))
        self.assertRaises(ShapeMismatch, T.matmul, T.Tensor(np.ones((2, 3))),
                          T.Tensor(np.ones((2, 3))))

    def test_getitem_grad(self):
        a = T.Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        (a[:, 1:] * 2.0).sum().backward()
        np.testing.assert_allclose(a.grad, [[0, 2, 2], [0, 2, 2]])
        a.zero_grad()
        a[np.array([0, 0]), np.array([1, 1])].sum().backward()
        np.testing.assert_allclose(a.grad, [[0, 2, 0], [0, 0, 0]])

    def test_conv1d_matches_numpy(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 1, 50))
        k = rng.standard_normal((3, 1, 5))
        out = T.conv1d(T.Tensor(x), T.Tensor(k), stride=2, padding=(2, 2))
        xp = np.pad(x, ((0, 0), (0, 0), (2, 2)))
        for b in range(2):
            for c in range(3):
                ref = np.correlate(xp[b, 0], k[c, 0], mode='valid')[::2]
                np.testing.assert_allclose(out.values[b, c], ref, atol=1e-12)

    def test_conv1d_fft_path_matches_direct(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((1, 2, 120))
        k = rng.standard_normal((4, 2, 40))
        fft_out = T.conv1d(T.Tensor(x), T.Tensor(k), padding=(19, 20))
        xp = np.pad(x, ((0, 0), (0, 0), (19, 20)))
        ref = np.zeros((1, 4, 120))
        for o in range(4):
            for c in range(2):
                ref[0, o] += np.correlate(xp[0, c], k[o, c], mode='valid')
        np.testing.assert_allclose(fft_out.values, ref, atol=1e-9)

    def test_conv1d_depthwise(self):
        x = np.arange(12.0).reshape(1, 2, 6)
        k = np.array([[[1.0, 1.0]], [[1.0, -1.0]]])
        out = T.conv1d(T.Tensor(x), T.Tensor(k), stride=2, groups=2)
        np.testing.assert_allclose(out.values, [[[1, 5, 9], [-1, -1, -1]]])

    def test_batchnorm_modes(self):
        rng = np.random.default_rng(3)
        x = T.Tensor(rng.standard_normal((4, 2, 3, 3)) * 5 + 2)
        gamma = T.Tensor(np.ones(2))
        beta = T.Tensor(np.zeros(2))
        stats = T.RunningStats(2, dtype=np.float64)
        self.assertRaises(ModeError, T.batchnorm2d, x, gamma, beta, stats,
                          mode='eval')
        out = T.batchnorm2d(x, gamma, beta, stats, mode='train')
        np.testing.assert_allclose(out.values.mean(axis=(0, 2, 3)), 0.0,
                                   atol=1e-10)
        self.assertTrue(stats.initialized)
        self.assertRaises(ModeError, T.batchnorm2d, x, gamma, beta, stats,
                          mode='predict')

    def test_batchnorm_eval_identity(self):
        stats = T.RunningStats(2, dtype=np.float64, updates=1)
        x = T.Tensor(np.random.default_rng(4).standard_normal((2, 2, 3, 3)))
        out = T.batchnorm2d(x, T.Tensor(np.ones(2)), T.Tensor(np.zeros(2)),
                            stats, mode='eval', epsilon=0.0)
        np.testing.assert_allclose(out.values, x.values)

    def test_dropout(self):
        x = T.Tensor(np.ones((50, 40)))
        self.assertIs(T.dropout(x, 0.4, mode='eval'), x)
        self.assertIs(T.dropout(x, 0.0, mode='train'), x)
        self.assertRaises(ValueError, T.dropout, x, 1.0, 'train',
                          np.random.default_rng(0))
        out = T.dropout(x, 0.4, mode='train', rng=np.random.default_rng(0))
        kept = out.values != 0
        self.assertAlmostEqual(kept.mean(), 0.6, delta=0.05)
        np.testing.assert_allclose(out.values[kept], 1.0 / 0.6)

    def test_softmax_cross_entropy(self):
        logits = T.Tensor(np.zeros((4, 5)), requires_grad=True)
        loss = T.softmax_cross_entropy(logits, [0, 1, 2, 3])
        np.testing.assert_allclose(loss.values, np.log(5.0))
        self.assertRaises(LabelMismatch, T.softmax_cross_entropy, logits,
                          [0, 1, 2, 5])

    def test_ema_recursion(self):
        x = np.array([[1.0, 3.0, 2.0, 0.0]])
        s = 0.25
        out = T.ema(T.Tensor(x), np.array([s])).values[0]
        ref = [1.0]
        for v in x[0, 1:]:
            ref.append((1 - s) * ref[-1] + s * v)
        np.testing.assert_allclose(out, ref)

    def test_adam_step(self):
        p = T.Tensor(np.array([1.0, -1.0]), requires_grad=True)
        frozen = T.Tensor(np.array([5.0]))
        state = T.AdamState()
        T.adam_step({'p': p, 'f': frozen}, {'p': np.array([0.5, -2.0]),
                                           'f': None}, state, lr=0.1)
        # first bias-corrected step moves by lr * sign(grad)
        np.testing.assert_allclose(p.values, [0.9, -0.9], atol=1e-6)
        np.testing.assert_equal(frozen.values, [5.0])
        self.assertEqual(state.step, 1)
        self.assertNotIn('f', state.m)

    def test_adam_l2(self):
        p = T.Tensor(np.array([2.0]), requires_grad=True)
        q = T.Tensor(np.array([2.0]), requires_grad=True)
        T.adam_step({'p': p}, {'p': np.array([0.0])}, T.AdamState(), lr=0.1,
                    l2_lambda=1e-3)
        T.adam_step({'q': q}, {'q': np.array([0.0])}, T.AdamState(), lr=0.1)
        self.assertLess(p.values[0], 2.0)
        np.testing.assert_equal(q.values, [2.0])


class TestGradients(unittest.TestCase):
    """Finite-difference checks, 20 random instances per layer."""

    def _check(self, fn, make_inputs, seed):
        rng = np.random.default_rng(seed)
        for _ in range(N_INSTANCES):
            inputs = make_inputs(rng)
            report = T.gradient_check(fn, inputs, max_checks=12, rng=rng)
            self.assertTrue(report.passed, report)

    def test_elementwise(self):
        def fn(a, b, w):
            out = (a * b + T.exp(a) / (b * b + 1.0) - T.sqrt(b * b + 1.0)
                   + T.cos(a) * T.sin(b) + T.log(b * b + 0.5) + a ** 3)
            return (out * w).sum()
        self._check(fn, lambda rng: [rng.standard_normal((3, 4)),
                                     rng.standard_normal(4),
                                     rng.standard_normal((3, 4))], 10)

    def test_power_with_tensor_exponent(self):
        def fn(base, exponent):
            return (base ** exponent).sum()
        self._check(fn, lambda rng: [rng.uniform(0.5, 2.0, 5),
                                     rng.uniform(-1.0, 1.0, 5)], 11)

    def test_matmul_linear_relu(self):
        def fn(x, w, b):
            return (T.relu(T.linear(x, w, b)) ** 2).sum()
        self._check(fn, lambda rng: [rng.standard_normal((3, 5)),
                                     rng.standard_normal((4, 5)),
                                     rng.standard_normal(4)], 12)

    def test_reductions_and_shapes(self):
        def fn(x, w):
            y = T.concat([x, x * 2.0], axis=1).transpose((1, 0))
            return (y.reshape((-1,)) * w).sum() + x.mean(axis=0).sum()
        self._check(fn, lambda rng: [rng.standard_normal((3, 2)),
                                     rng.standard_normal(12)], 13)

    def test_conv1d_direct(self):
        def fn(x, k, w):
            return (T.conv1d(x, k, stride=3, padding=(2, 1), groups=2)
                    * w).sum()
        self._check(fn, lambda rng: [rng.standard_normal((2, 4, 20)),
                                     rng.standard_normal((6, 2, 5)),
                                     rng.standard_normal((2, 6, 7))], 14)

    def test_conv1d_fft(self):
        def fn(x, k, w):
            return (T.conv1d(x, k, padding=(16, 17)) * w).sum()
        self._check(fn, lambda rng: [rng.standard_normal((1, 2, 40)),
                                     rng.standard_normal((3, 2, 34)),
                                     rng.standard_normal((1, 3, 40))], 15)

    def test_conv2d(self):
        def fn(x, k, w):
            return (T.conv2d(x, k, stride=2, padding=1) * w).sum()
        self._check(fn, lambda rng: [rng.standard_normal((2, 2, 5, 6)),
                                     rng.standard_normal((3, 2, 3, 3)),
                                     rng.standard_normal((2, 3, 3, 3))], 16)

    def test_batchnorm_train(self):
        def fn(x, gamma, beta, w):
            stats = T.RunningStats(3, dtype=np.float64)
            return (T.batchnorm2d(x, gamma, beta, stats, mode='train')
                    * w).sum()
        self._check(fn, lambda rng: [rng.standard_normal((2, 3, 2, 3)),
                                     rng.uniform(0.5, 1.5, 3),
                                     rng.standard_normal(3),
                                     rng.standard_normal((2, 3, 2, 3))], 17)

    def test_pool_and_cross_entropy(self):
        labels = np.array([0, 2, 1])

        def fn(x):
            pooled = T.adaptive_avg_pool_to_1x1(x).reshape((3, 4))
            return T.softmax_cross_entropy(pooled, labels)
        self._check(fn, lambda rng: [rng.standard_normal((3, 4, 2, 3))], 18)

    def test_ema(self):
        def fn(x, s, w):
            return (T.ema(x, s) * w).sum()
        self._check(fn, lambda rng: [rng.uniform(0.0, 2.0, (2, 3, 12)),
                                     rng.uniform(0.05, 0.5, 3),
                                     rng.standard_normal((2, 3, 12))], 19)


if __name__ == '__main__':
    unittest.main()
