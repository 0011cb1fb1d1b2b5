# -*- coding: utf-8 -*-
# Copyright (c) 2023, The leafkit Developers
from __future__ import division, print_function, absolute_import

import os
import sys

import numpy as np

import leafkit

# species                    carrier     pulse rate   files
# ----------------------------------------------------------
#    Chorthippus_biguttulus   4000 Hz     12 Hz        12
#    Gryllus_campestris       4500 Hz      4 Hz        12
#    Nemobius_sylvestris      8000 Hz     25 Hz        12
#    Oecanthus_pellucens      2800 Hz      6 Hz        12
#    Tettigonia_viridissima  11000 Hz     40 Hz        12
#
# Every file is 3 to 9 seconds long with a random phase, a little pink
# background noise and its own gain.

SPECIES = [('Chorthippus_biguttulus', 4000.0, 12.0),
           ('Gryllus_campestris', 4500.0, 4.0),
           ('Nemobius_sylvestris', 8000.0, 25.0),
           ('Oecanthus_pellucens', 2800.0, 6.0),
           ('Tettigonia_viridissima', 11000.0, 40.0)]
FILES_PER_SPECIES = 12
SAMPLE_RATE = 44100


def song(carrier, pulse_rate, seconds, rng):
    t = np.arange(int(seconds * SAMPLE_RATE)) / float(SAMPLE_RATE)
    phase = rng.uniform(0, 2 * np.pi)
    gate = np.sin(2 * np.pi * pulse_rate * t + phase) > 0.3
    tone = np.sin(2 * np.pi * carrier * (1 + 0.01 * rng.standard_normal()) * t)
    x = rng.uniform(0.2, 0.6) * tone * gate
    return leafkit.add_colored_noise(leafkit.Waveform(x, SAMPLE_RATE),
                                     rng.uniform(20.0, 35.0), 1.0, rng)


if __name__ == '__main__':
    out_dir = sys.argv[1] if len(sys.argv) > 1 else os.path.join('.', 'data',
                                                                  'insects')
    rng = np.random.default_rng(0)
    for label, carrier, pulse_rate in SPECIES:
        for i in range(FILES_PER_SPECIES):
            path = os.path.join(out_dir, label, '%s_%02d.wav' % (label, i))
            if not os.path.isdir(os.path.dirname(path)):
                os.makedirs(os.path.dirname(path))
            w = song(carrier, pulse_rate, rng.uniform(3.0, 9.0), rng)
            leafkit.write_waveform(path, leafkit.limit_peak(w),
                                   subtype='PCM_16')
        print('%-24s %d files' % (label, FILES_PER_SPECIES))
    print('\nnow run: leafkit prepare --data-root %s --manifest manifest.jsonl'
          % out_dir)
