# -*- coding: utf-8 -*-
# Copyright (c) 2023, The leafkit Developers
from __future__ import division, print_function, absolute_import

import os
import shutil
import tempfile
import unittest
from collections import Counter

import numpy as np
from scipy import signal

from leafkit.augment import (PEAK_LIMIT, add_colored_noise, append_augmented,
                             apply_impulse_response, augment_batch,
                             augment_one, frequency_mask, generate_offline,
                             limit_peak, load_ir_bank)
from leafkit.config import AugmentConfig
from leafkit.dataset import ingest, split
from leafkit.dsp import Waveform
from leafkit.errors import DataError, ModeError, SampleRateError
from leafkit.rng import derive_key, make_stream
from leafkit.tests.corpus import make_corpus, write_file


def _noise(n=44100, seed=0, rate=44100):
    return Waveform(0.1 * np.random.default_rng(seed).standard_normal(n),
                    rate)


def _power(x):
    return float(np.mean(np.square(x)))


class TestColoredNoise(unittest.TestCase):

    def test_snr(self):
        w = _noise()
        for snr in (25.0, 40.0, 80.0):
            out = add_colored_noise(w, snr, 0.0, make_stream(0, 'n', int(snr)))
            added = out.samples - w.samples
            measured = 10 * np.log10(_power(w.samples) / _power(added))
            self.assertAlmostEqual(measured, snr, delta=0.5)

    def test_spectral_slope(self):
        w = _noise(2 ** 17)
        for decay in (-2.0, 0.0, 1.5):
            out = add_colored_noise(w, 30.0, decay, make_stream(1, 'slope'))
            added = out.samples - w.samples
            freqs, psd = signal.welch(added, 44100, nperseg=4096)
            band = (freqs >= 200.0) & (freqs <= 10000.0)
            slope = np.polyfit(np.log10(freqs[band]), np.log10(psd[band]),
                               1)[0]
            self.assertAlmostEqual(slope, -decay, delta=0.3)

    def test_silent_input(self):
        w = Waveform(np.zeros(100), 44100)
        with self.assertLogs('leafkit.augment', 'WARNING'):
            self.assertIs(add_colored_noise(w, 30.0, 1.0,
                                            make_stream(0, 'n')), w)


class TestImpulseResponse(unittest.TestCase):

    def test_identity_and_delay(self):
        w = _noise(2000)
        for taps in ([1.0], [0.5], [0.0, 0.0, 0.0, 1.0]):
            ir = Waveform(np.array(taps), 44100)
            out = apply_impulse_response(w, ir, mix=0.6)
            np.testing.assert_allclose(out.samples, w.samples, atol=1e-12)

    def test_mix(self):
        w = _noise(2000)
        ir = Waveform(np.array([1.0, 0.0, 0.0, -0.8, 0.3]), 44100)
        self.assertIs(apply_impulse_response(w, ir, mix=0.0), w)
        full = apply_impulse_response(w, ir, mix=1.0)
        half = apply_impulse_response(w, ir, mix=0.5)
        np.testing.assert_allclose(half.samples,
                                   0.5 * (w.samples + full.samples),
                                   atol=1e-12)
        self.assertAlmostEqual(np.sqrt(_power(full.samples)),
                               np.sqrt(_power(w.samples)), places=10)
        drawn = apply_impulse_response(w, ir, rng=make_stream(0, 'mix'))
        self.assertEqual(len(drawn), len(w))

    def test_errors(self):
        w = _noise(100)
        self.assertRaises(SampleRateError, apply_impulse_response, w,
                          Waveform(np.ones(3), 48000), 0.5)
        self.assertRaises(DataError, apply_impulse_response, w,
                          Waveform(np.zeros(0), 44100), 0.5)


class TestFrequencyMask(unittest.TestCase):

    def _band_power(self, x, low, high):
        spectrum = np.abs(np.fft.rfft(x)) ** 2
        freqs = np.fft.rfftfreq(len(x), 1.0 / 44100)
        return spectrum[(freqs >= low) & (freqs <= high)].sum()

    def test_band_removed(self):
        w = _noise()
        out = frequency_mask(w, 0.1, None, center_hz=8000.0)
        width = 0.1 * 22050.0
        low, high = 8000.0 - width / 2, 8000.0 + width / 2
        before = self._band_power(w.samples, low, high)
        after = self._band_power(out.samples, low, high)
        self.assertLess(after, 0.01 * before)
        taper = 0.02 * width
        outside_before = self._band_power(w.samples, 0, low - taper) \
            + self._band_power(w.samples, high + taper, 22050.0)
        outside_after = self._band_power(out.samples, 0, low - taper) \
            + self._band_power(out.samples, high + taper, 22050.0)
        self.assertAlmostEqual(outside_after / outside_before, 1.0, delta=0.03)

    def test_tone_outside_band_survives(self):
        t = np.arange(44100) / 44100.0
        w = Waveform(0.5 * np.sin(2 * np.pi * 2000.0 * t), 44100)
        out = frequency_mask(w, 0.2, None, center_hz=12000.0)
        self.assertAlmostEqual(_power(out.samples) / _power(w.samples), 1.0,
                               delta=0.01)
        hit = frequency_mask(w, 0.06, None, center_hz=2000.0)
        self.assertLess(_power(hit.samples), 0.01 * _power(w.samples))

    def test_random_centre(self):
        w = _noise(4096)
        a = frequency_mask(w, 0.1, make_stream(0, 'mask'))
        b = frequency_mask(w, 0.1, make_stream(0, 'mask'))
        np.testing.assert_array_equal(a.samples, b.samples)
        self.assertRaises(DataError, frequency_mask, w, 0.0,
                          make_stream(0, 'mask'))
        self.assertRaises(DataError, frequency_mask, w, 1.0,
                          make_stream(0, 'mask'))


class TestPipelines(unittest.TestCase):

    def setUp(self):
        self.tmpdir = tempfile.mkdtemp(prefix='leafkit-augment-')

    def tearDown(self):
        shutil.rmtree(self.tmpdir, ignore_errors=True)

    def test_limit_peak(self):
        w = Waveform(np.array([0.5, -2.0, 1.0]), 44100)
        out = limit_peak(w)
        self.assertAlmostEqual(np.max(np.abs(out.samples)), PEAK_LIMIT)
        quiet = Waveform(np.array([0.5, -1.0]), 44100)
        self.assertIs(limit_peak(quiet), quiet)

    def test_online_rates(self):
        cfg = AugmentConfig.preset('online')
        bank = [Waveform(np.array([1.0, 0.3, 0.1]), 44100),
                Waveform(np.array([0.0, 1.0, -0.5]), 44100)]
        stats = Counter()
        rng = make_stream(0, 'augment', 0)
        batch = [_noise(256, seed=i) for i in range(100)]
        for _ in range(100):
            out = augment_batch(batch, cfg, rng, bank, stats)
            self.assertEqual(len(out), 100)
        self.assertEqual(stats['examples'], 10000)
        self.assertAlmostEqual(stats['noise'] / 10000.0, 0.9, delta=0.02)
        self.assertAlmostEqual(stats['ir'] / 10000.0, 0.7, delta=0.02)
        self.assertEqual(stats['mask'], 0)

    def test_batch_is_order_independent(self):
        cfg = AugmentConfig.preset('online')
        batch = [_noise(512, seed=i) for i in range(6)]
        first = augment_batch(batch, cfg, make_stream(3, 'augment', 1, 0))
        again = augment_batch(batch, cfg, make_stream(3, 'augment', 1, 0))
        key = derive_key(make_stream(3, 'augment', 1, 0))
        for i in (5, 2, 0):
            alone = augment_one(batch[i], cfg, make_stream(key, i))
            np.testing.assert_array_equal(alone.samples, first[i].samples)
        for a, b in zip(first, again):
            np.testing.assert_array_equal(a.samples, b.samples)
        self.assertRaises(ModeError, augment_batch, batch, AugmentConfig(),
                          make_stream(0, 'x'))

    def test_ir_bank(self):
        folder = os.path.join(self.tmpdir, 'irs')
        for i in range(3):
            taps = np.zeros(64)
            taps[i] = 1.0
            write_file(os.path.join(folder, 'ir%d.wav' % i), taps)
        with self.assertLogs('leafkit.augment', 'WARNING'):
            bank = load_ir_bank(folder)
        self.assertEqual(len(bank), 3)
        self.assertEqual(bank[2].sample_rate, 44100)
        self.assertEqual(np.argmax(bank[2].samples), 2)

    def _manifest(self):
        root = os.path.join(self.tmpdir, 'corpus')
        if not os.path.isdir(root):
            make_corpus(root, {'Tettigonia_viridissima': [6.5]})
        return split(ingest(root))

    def _offline(self, out_name):
        manifest = self._manifest()
        cfg = AugmentConfig.preset('offline')
        out_dir = os.path.join(self.tmpdir, out_name)
        return manifest, generate_offline(manifest, cfg, out_dir, 220500,
                                          seed=7), out_dir

    def test_offline_generations(self):
        manifest, entries, out_dir = self._offline('aug_a')
        self.assertEqual(len(manifest.entries[0].chunks), 3)
        self.assertEqual(len(entries), 30)
        names = sorted(os.listdir(os.path.join(out_dir,
                                               'Tettigonia_viridissima')))
        self.assertEqual(len(names), 30)
        self.assertIn('Tettigonia_viridissima__Tettigonia_viridissima_00'
                      '_c2_aug9_seed7.wav', names)
        for e in entries:
            self.assertEqual(e.split, 'train')
            self.assertEqual(e.source, 'augmented')
            self.assertAlmostEqual(e.duration_s, 5.0)
            self.assertEqual(e.group, manifest.entries[0].group)
        _, again, other_dir = self._offline('aug_b')
        for name in names:
            with open(os.path.join(out_dir, 'Tettigonia_viridissima',
                                   name), 'rb') as a, \
                    open(os.path.join(other_dir, 'Tettigonia_viridissima',
                                      name), 'rb') as b:
                self.assertEqual(a.read(), b.read())
        self.assertEqual([e.sha256 for e in entries],
                         [e.sha256 for e in again])
        merged = append_augmented(manifest, entries)
        self.assertEqual(len(merged), 31)
        self.assertEqual(len(merged.chunks('train')), 33)
        merged.validate()

    def test_offline_needs_offline_mode(self):
        manifest = self._manifest()
        self.assertRaises(ModeError, generate_offline, manifest,
                          AugmentConfig.preset('online'), self.tmpdir, 220500)


if __name__ == '__main__':
    unittest.main()
