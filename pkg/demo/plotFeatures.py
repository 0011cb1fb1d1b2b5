#!/usr/bin/env python
from __future__ import division, print_function, absolute_import

import sys

import numpy as np
import matplotlib.pyplot as plt

import leafkit
from leafkit import tensor as T


if __name__ == '__main__':
    cfg = leafkit.FrontendConfig()
    if len(sys.argv) > 1:
        w = leafkit.read_waveform(sys.argv[1])
    else:
        t = np.arange(cfg.n_samples) / float(cfg.sample_rate)
        chirp = np.sin(2 * np.pi * (1000.0 + 1500.0 * t) * t)
        w = leafkit.Waveform(0.3 * chirp * (np.sin(2 * np.pi * 8 * t) > 0),
                             cfg.sample_rate)
    samples = np.resize(w.samples, cfg.n_samples)
    w = leafkit.Waveform(samples, cfg.sample_rate)

    mel = leafkit.mel_frontend(w, cfg)
    params = leafkit.leaf_init(cfg.n_filters, cfg=cfg)
    if len(sys.argv) > 2:
        _, trained, _ = leafkit.load_trained(leafkit.load_checkpoint(sys.argv[2]))
        if trained is not None:
            params = trained
    with T.no_grad():
        leaf = leafkit.leaf_forward(w, params, cfg)

    fig, axes = plt.subplots(2, 1, figsize=(10, 6), sharex=True)
    extent = (0, cfg.clip_seconds, 0, cfg.n_filters)
    for ax, fmap, title in ((axes[0], mel, 'log-mel'),
                            (axes[1], leaf, 'LEAF (PCEN)')):
        ax.imshow(fmap.values, origin='lower', aspect='auto', extent=extent)
        ax.set_title(title)
        ax.set_ylabel('filter')
    axes[1].set_xlabel('time (s)')
    fig.tight_layout()
    plt.show()
