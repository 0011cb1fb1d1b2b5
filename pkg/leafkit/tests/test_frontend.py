# -*- coding: utf-8 -*-
# Copyright (c) 2023, The leafkit Developers
from __future__ import division, print_function, absolute_import

import numpy as np
import unittest

from leafkit import tensor as T
from leafkit.config import FrontendConfig
from leafkit.dsp import Waveform, build_mel_filterbank, sigma_bounds
from leafkit.errors import (DataError, ModeError, SampleRateError,
                            ShapeMismatch)
from leafkit.frontend import (LeafParams, clamp_params, leaf_features,
                              leaf_forward, leaf_init, mel_filterbank,
                              mel_frontend, pcen, set_ablation)


def _params(n, dtype=np.float64, **values):
    full = np.ones(n)
    defaults = dict(center_freqs=np.linspace(1000.0, 8000.0, n),
                    kernel_sigmas=full * 4.0, pool_sigmas=full * 0.4,
                    pcen_alpha=full * 0.96, pcen_delta=full * 2.0,
                    pcen_root=full * 0.5, pcen_smooth=full * 0.04)
    defaults.update(values)
    return LeafParams(kernel_len=16, dtype=dtype, **defaults)


class TestMelFrontend(unittest.TestCase):

    def test_shape(self):
        cfg = FrontendConfig()
        rng = np.random.default_rng(0)
        w = Waveform(0.1 * rng.standard_normal(cfg.n_samples), 44100)
        fmap = mel_frontend(w, cfg)
        self.assertEqual(fmap.shape, (64, 1500))
        self.assertEqual(fmap.values.dtype, np.float32)
        self.assertTrue(np.all(np.isfinite(fmap.values)))
        np.testing.assert_allclose(fmap.channel_meta,
                                   mel_filterbank(cfg).centers)

    def test_silence_hits_floor(self):
        cfg = FrontendConfig(clip_seconds=0.1)
        fmap = mel_frontend(Waveform(np.zeros(cfg.n_samples), 44100), cfg)
        np.testing.assert_allclose(fmap.values, np.log(cfg.log_floor),
                                   rtol=1e-6)

    def test_clip_checks(self):
        cfg = FrontendConfig(clip_seconds=0.1)
        self.assertRaises(SampleRateError, mel_frontend,
                          Waveform(np.zeros(4800), 48000), cfg)
        self.assertRaises(ShapeMismatch, mel_frontend,
                          Waveform(np.zeros(100), 44100), cfg)
        self.assertRaises(DataError, mel_frontend, np.zeros(4410), cfg)


class TestLeafInit(unittest.TestCase):

    def test_centres_follow_mel(self):
        p = leaf_init(64)
        bank = build_mel_filterbank(64, 512, 44100, 0.0, 22050.0)
        self.assertEqual(p.n_filters, 64)
        np.testing.assert_allclose(p.center_freqs.values, bank.centers,
                                   atol=1.0)
        low, high = sigma_bounds(294)
        sigmas = p.kernel_sigmas.values
        self.assertTrue(np.all(sigmas >= low * (1 - 1e-6)))
        self.assertTrue(np.all(sigmas <= high * (1 + 1e-6)))
        # wider triangles get narrower envelopes
        self.assertTrue(np.all(np.diff(sigmas) <= 1e-4))
        np.testing.assert_allclose(p.pcen_alpha.values, 0.96, rtol=1e-6)
        np.testing.assert_allclose(p.pcen_smooth.values, 0.04, rtol=1e-6)
        np.testing.assert_allclose(p.pool_sigmas.values, 0.4, rtol=1e-6)
        p.validate()

    def test_all_groups_trainable(self):
        p = leaf_init(8)
        self.assertEqual(len(p.parameters()), 7)
        self.assertTrue(all(k.startswith('frontend.')
                            for k in p.parameters()))


class TestLeafFeatures(unittest.TestCase):

    def test_shapes(self):
        p = _params(3)
        rng = np.random.default_rng(1)
        out = leaf_features(rng.standard_normal((2, 100)), p, hop=8)
        self.assertEqual(out.shape, (2, 3, 13))
        out = leaf_features(rng.standard_normal(64), p, hop=8)
        self.assertEqual(out.shape, (1, 3, 8))
        self.assertRaises(ShapeMismatch, leaf_features, np.zeros((1, 1, 8)),
                          p, 8)

    def test_full_clip_shape(self):
        cfg = FrontendConfig()
        p = leaf_init(64, cfg=cfg)
        rng = np.random.default_rng(2)
        w = Waveform(0.1 * rng.standard_normal(cfg.n_samples), 44100)
        with T.no_grad():
            fmap = leaf_forward(w, p, cfg)
        self.assertEqual(fmap.shape, (64, 1500))
        self.assertTrue(np.all(np.isfinite(fmap.values)))

    def test_tone_lands_in_matching_channel(self):
        cfg = FrontendConfig(clip_seconds=0.25)
        p = leaf_init(64, cfg=cfg)
        t = np.arange(cfg.n_samples) / 44100.0
        # below channel 16 the kernel sigmas sit at their clip bound and
        # neighbouring low channels overlap
        channels = np.linspace(16, 62, 20).astype(int)
        agree = 0
        for c in channels:
            freq = float(p.center_freqs.values[c])
            w = Waveform(0.5 * np.sin(2 * np.pi * freq * t), 44100)
            with T.no_grad():
                leaf = leaf_forward(w, p, cfg).values.mean(axis=1)
            mel = mel_frontend(w, cfg).values.mean(axis=1)
            if np.argmax(leaf) == np.argmax(mel) == c:
                agree += 1
        self.assertGreaterEqual(agree, 18)

    def test_graph_reaches_parameters(self):
        p = _params(3)
        out = leaf_features(np.random.default_rng(3).standard_normal(40), p,
                            hop=8)
        out.sum().backward()
        for name, tensor in p.parameters().items():
            self.assertIsNotNone(tensor.grad, name)
            self.assertTrue(np.all(np.isfinite(tensor.grad)), name)

    def test_gradients(self):
        x = np.random.default_rng(4).standard_normal(48)
        weights = np.random.default_rng(5).standard_normal((1, 3, 6))

        def fn(cf, ks, ps, alpha, delta, root, smooth):
            p = LeafParams(cf, ks, ps, alpha, delta, root, smooth,
                           kernel_len=16, dtype=np.float64)
            return (leaf_features(x, p, hop=8) * weights).sum()

        rng = np.random.default_rng(6)
        for _ in range(20):
            inputs = [rng.uniform(500.0, 15000.0, 3), rng.uniform(2.0, 5.0, 3),
                      rng.uniform(0.2, 0.8, 3), rng.uniform(0.5, 1.0, 3),
                      rng.uniform(0.5, 3.0, 3), rng.uniform(0.3, 0.7, 3),
                      rng.uniform(0.02, 0.3, 3)]
            report = T.gradient_check(fn, inputs, tolerance=1e-3)
            self.assertTrue(report.passed, report)

    def test_gradients_on_short_clip(self):
        init = leaf_init(8, dtype=np.float64)
        x = 0.1 * np.random.default_rng(7).standard_normal(4410)
        weights = np.random.default_rng(8).standard_normal((1, 8, 30))

        def fn(cf, ks, ps, alpha, delta, root, smooth):
            p = LeafParams(cf, ks, ps, alpha, delta, root, smooth,
                           epsilon=init.epsilon, kernel_len=init.kernel_len,
                           dtype=np.float64)
            return (leaf_features(x, p, hop=147) * weights).sum()

        rng = np.random.default_rng(9)
        for _ in range(3):
            inputs = [getattr(init, name).values
                      * rng.uniform(0.95, 1.05, 8)
                      for name in LeafParams.FIELDS]
            report = T.gradient_check(fn, inputs, max_checks=4, rng=rng)
            self.assertTrue(report.passed, report)


class TestPCEN(unittest.TestCase):

    def test_zero_energy(self):
        p = _params(3)
        np.testing.assert_allclose(pcen(np.zeros((3, 10)), p), 0.0,
                                   atol=1e-12)

    def test_unit_energy(self):
        p = _params(3)
        out = pcen(np.ones((3, 20)), p)
        np.testing.assert_allclose(out, np.sqrt(3.0) - np.sqrt(2.0),
                                   atol=1e-5)

    def test_gain_invariance(self):
        full = np.ones(3)
        p = _params(3, pcen_alpha=full)
        energy = np.random.default_rng(7).uniform(1.0, 5.0, (3, 30))
        np.testing.assert_allclose(pcen(energy * 1000.0, p), pcen(energy, p),
                                   rtol=1e-5)

    def test_plain_and_tensor(self):
        p = _params(3)
        energy = np.random.default_rng(8).uniform(0.0, 1.0, (2, 3, 5))
        plain = pcen(energy, p)
        self.assertIsInstance(plain, np.ndarray)
        traced = pcen(T.Tensor(energy), p)
        self.assertIsInstance(traced, T.Tensor)
        np.testing.assert_allclose(traced.values, plain)
        self.assertRaises(DataError, pcen, -np.ones((3, 4)), p)


class TestAblation(unittest.TestCase):

    def test_modes(self):
        p = leaf_init(4)
        set_ablation(p, 'leafFB')
        self.assertEqual(sorted(p.parameters()),
                         ['frontend.center_freqs', 'frontend.kernel_sigmas',
                          'frontend.pool_sigmas'])
        set_ablation(p, 'leafPCEN')
        self.assertEqual(sorted(p.parameters()),
                         ['frontend.pcen_alpha', 'frontend.pcen_delta',
                          'frontend.pcen_root', 'frontend.pcen_smooth'])
        set_ablation(p, 'leaf')
        self.assertEqual(len(p.parameters()), 7)
        self.assertRaises(ModeError, set_ablation, p, 'mel')

    def test_frozen_group_gets_no_gradient(self):
        p = set_ablation(_params(3), 'leafPCEN')
        leaf_features(np.random.default_rng(9).standard_normal(40), p,
                      hop=8).sum().backward()
        self.assertIsNone(p.center_freqs.grad)
        self.assertIsNone(p.pool_sigmas.grad)
        self.assertIsNotNone(p.pcen_alpha.grad)

    def test_copy_keeps_flags(self):
        p = set_ablation(_params(3), 'leafFB')
        q = p.copy(np.float32)
        self.assertEqual(q.center_freqs.dtype, np.float32)
        self.assertEqual(sorted(q.parameters()), sorted(p.parameters()))
        q.center_freqs.values[0] = 1.0
        self.assertNotEqual(p.center_freqs.values[0], 1.0)


class TestClamp(unittest.TestCase):

    def test_projects_into_range(self):
        p = _params(3, center_freqs=np.array([-5.0, 1000.0, 30000.0]),
                    pool_sigmas=np.array([0.0, 0.5, 2.0]),
                    pcen_smooth=np.array([0.9, 0.04, -0.1]))
        self.assertRaises(DataError, p.validate)
        clamp_params(p)
        p.validate()
        np.testing.assert_allclose(p.center_freqs.values,
                                   [0.0, 1000.0, 22050.0])
        self.assertEqual(p.pool_sigmas.values[1], 0.5)
        self.assertTrue(np.all(p.pcen_smooth.values <= 0.5))

    def test_shape_checked(self):
        self.assertRaises(ShapeMismatch, _params, 3,
                          kernel_sigmas=np.ones(2))


if __name__ == '__main__':
    unittest.main()
