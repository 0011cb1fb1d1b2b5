#!/usr/bin/env python
from __future__ import division, print_function, absolute_import

import sys

import numpy as np

import leafkit


if __name__ == '__main__':
    path = sys.argv[1] if len(sys.argv) > 1 else 'runs/leaf-s1/best.ckpt'
    ckpt = leafkit.load_checkpoint(path)
    print("\nlibrary version: %s" % leafkit.__version__)

    print("\ncheckpoint header:\n")
    print("frontend: %s" % ckpt.frontend)
    print("epoch: %i" % ckpt.epoch)
    print("best validation loss: %s" % ckpt.best_val_loss)
    print("optimizer step: %i" % ckpt.optimizer_step)
    print("seed: %s" % (ckpt.rng_state or {}).get('seed'))
    print("classes: %i" % len(ckpt.labels))
    for label in ckpt.labels:
        print("    %s" % label)
    for key in ('val_loss', 'val_accuracy', 'early_stopping'):
        if key in ckpt.meta:
            print("%s: %s" % (key, ckpt.meta[key]))

    print("\ntensors:\n")
    total = 0
    for name, values in ckpt.tensors.items():
        if not name.startswith('adam.'):
            total += values.size
        print("%-40s %-16s min %9.4f max %9.4f" % (
            name, 'x'.join(str(s) for s in values.shape) or 'scalar',
            np.min(values), np.max(values)))
    print("\nstored model and frontend values: %i" % total)

    model, frontend, cfg = leafkit.load_trained(ckpt)
    print("trainable parameters: %i" % leafkit.count_parameters(model, frontend))
    if frontend is not None:
        centers = frontend.center_freqs.values
        print("\nfilter centres (Hz): %s ..."
              % ", ".join("%.0f" % c for c in centers[:8]))
