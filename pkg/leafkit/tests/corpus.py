# -*- coding: utf-8 -*-
# Copyright (c) 2023, The leafkit Developers
"""Synthetic species folders for the ingestion, training and CLI tests."""
from __future__ import division, print_function, absolute_import

import os

import numpy as np

from leafkit.audiowriter import write_waveform
from leafkit.dsp import Waveform


def species_signal(k, seconds, rate=44100, seed=0):
    """Noise-modulated tone whose pitch depends on the species index."""
    rng = np.random.default_rng(seed)
    n = int(round(seconds * rate))
    t = np.arange(n) / float(rate)
    freq = 1500.0 + 2500.0 * k
    pulses = 0.5 + 0.5 * np.sign(np.sin(2 * np.pi * (3.0 + k) * t))
    tone = 0.4 * np.sin(2 * np.pi * freq * t) * pulses
    return tone + 0.02 * rng.standard_normal(n)


def write_file(path, samples, rate=44100, subtype='FLOAT'):
    directory = os.path.dirname(path)
    if not os.path.isdir(directory):
        os.makedirs(directory)
    write_waveform(path, Waveform(samples, rate), subtype=subtype)
    return path


def make_corpus(root, durations, rate=44100, seed=0):
    """Writes ``<root>/<label>/<label>_<i>.wav`` for every duration.

    ``durations`` maps a label to the list of file lengths in seconds.
    Every file gets distinct noise so no two payloads coincide.
    """
    paths = []
    for k, label in enumerate(sorted(durations)):
        for i, seconds in enumerate(durations[label]):
            samples = species_signal(k, seconds, rate, seed=seed * 1000
                                     + 100 * k + i)
            paths.append(write_file(os.path.join(
                root, label, '%s_%02d.wav' % (label, i)), samples, rate))
    return paths
