# -*- coding: utf-8 -*-
# Copyright (c) 2023, The leafkit Developers
from __future__ import division, print_function, absolute_import

import os
import shutil
import struct
import tempfile
import unittest

import numpy as np

from leafkit import tensor as T
from leafkit.backend import build_model, model_forward
from leafkit.checkpoint import (MAGIC, Checkpoint, CheckpointReader, capture,
                                load_checkpoint, restore, save_checkpoint)
from leafkit.config import ModelConfig, RunConfig
from leafkit.errors import CheckpointError, InputError, ShapeMismatch
from leafkit.frontend import leaf_init
from leafkit.rng import make_stream, restore_stream, stream_state


class TestCheckpointFile(unittest.TestCase):

    def setUp(self):
        self.tmpdir = tempfile.mkdtemp(prefix='leafkit-ckpt-')
        self.path = os.path.join(self.tmpdir, 'model.ckpt')

    def tearDown(self):
        shutil.rmtree(self.tmpdir, ignore_errors=True)

    def _trained(self, n_classes=4, seed=0):
        model = build_model(ModelConfig(n_classes=n_classes),
                            make_stream(seed, 'init'))
        frontend = leaf_init(8)
        adam = T.AdamState()
        x = np.random.default_rng(seed).standard_normal((2, 1, 8, 12))
        logits = model_forward(model, x, 'train', make_stream(seed, 'd'))
        T.softmax_cross_entropy(logits, [0, 1]).backward()
        params = model.parameters()
        T.adam_step(params, dict((k, t.grad) for k, t in params.items()),
                    adam, lr=1e-3)
        return model, frontend, adam

    def test_roundtrip(self):
        model, frontend, adam = self._trained()
        rng = make_stream(5, 'shuffle', 1)
        rng.random(3)
        cfg = RunConfig().to_dict()
        ckpt = capture(model, frontend, adam, config=cfg,
                       labels=['a', 'b', 'c', 'd'], epoch=3,
                       best_val_loss=0.75, rng_state=stream_state(rng),
                       meta={'val_accuracy': 0.5})
        save_checkpoint(ckpt, self.path)
        loaded = load_checkpoint(self.path)
        self.assertEqual(loaded.epoch, 3)
        self.assertEqual(loaded.labels, ['a', 'b', 'c', 'd'])
        self.assertEqual(loaded.best_val_loss, 0.75)
        self.assertEqual(loaded.optimizer_step, 1)
        self.assertEqual(loaded.config, cfg)
        self.assertEqual(loaded.frontend, 'leaf')
        self.assertEqual(loaded.meta['val_accuracy'], 0.5)
        self.assertEqual(loaded.meta['bn_updates']['conv1'], 1)
        self.assertEqual(list(loaded.tensors), list(ckpt.tensors))
        for name, values in ckpt.tensors.items():
            np.testing.assert_array_equal(loaded.tensors[name],
                                          values.astype(np.float32))
        np.testing.assert_array_equal(
            restore_stream(loaded.rng_state).random(4), rng.random(4))

        other = build_model(ModelConfig(n_classes=4), make_stream(9, 'init'))
        other_frontend = leaf_init(8)
        other_frontend.center_freqs.values[:] = 1.0
        other_adam = T.AdamState()
        restore(loaded, other, other_frontend, other_adam)
        for name, tensor in model.parameters().items():
            np.testing.assert_array_equal(other.parameters()[name].values,
                                          tensor.values)
        np.testing.assert_array_equal(other_frontend.center_freqs.values,
                                      frontend.center_freqs.values)
        self.assertEqual(other_adam.step, 1)
        self.assertEqual(sorted(other_adam.m), sorted(adam.m))
        self.assertEqual(other.stats_updates(), model.stats_updates())

    def test_group(self):
        model, frontend, _ = self._trained()
        ckpt = capture(model, frontend)
        self.assertEqual(len(ckpt.group('frontend.')), 7)
        self.assertIn('center_freqs', ckpt.group('frontend.'))
        self.assertEqual(Checkpoint().frontend, 'mel')

    def test_class_count_mismatch(self):
        model, _, _ = self._trained(n_classes=32)
        save_checkpoint(capture(model), self.path)
        wider = build_model(ModelConfig(n_classes=47), make_stream(0, 'init'))
        self.assertRaises(ShapeMismatch, restore, load_checkpoint(self.path),
                          wider)

    def test_missing_tensor(self):
        model, frontend, _ = self._trained()
        ckpt = capture(model)
        self.assertRaises(CheckpointError, restore, ckpt, model, frontend)
        del ckpt.tensors['backend.fc.bias']
        self.assertRaises(CheckpointError, restore, ckpt, model)

    def _saved_bytes(self):
        model, _, _ = self._trained()
        save_checkpoint(capture(model, labels=['a', 'b']), self.path)
        with open(self.path, 'rb') as handle:
            return handle.read()

    def _rewrite(self, data):
        with open(self.path, 'wb') as handle:
            handle.write(data)

    def test_bad_magic(self):
        data = self._saved_bytes()
        self._rewrite(b'NOTACKPT' + data[len(MAGIC):])
        with self.assertRaises(CheckpointError) as ctx:
            load_checkpoint(self.path)
        self.assertIn('magic', str(ctx.exception))

    def test_bad_version(self):
        data = self._saved_bytes()
        self._rewrite(MAGIC + struct.pack('<I', 2) + data[len(MAGIC) + 4:])
        with self.assertRaises(CheckpointError) as ctx:
            load_checkpoint(self.path)
        self.assertIn('version 2', str(ctx.exception))

    def test_truncated(self):
        data = self._saved_bytes()
        for cut in (4, len(MAGIC) + 6, len(data) // 2, len(data) - 1):
            self._rewrite(data[:cut])
            self.assertRaises(CheckpointError, load_checkpoint, self.path)
        self._rewrite(data + b'\x00')
        self.assertRaises(CheckpointError, load_checkpoint, self.path)

    def test_unreadable(self):
        self.assertRaises(CheckpointError, CheckpointReader,
                          os.path.join(self.tmpdir, 'missing.ckpt'))
        self.assertTrue(issubclass(CheckpointError, InputError))


if __name__ == '__main__':
    unittest.main()
