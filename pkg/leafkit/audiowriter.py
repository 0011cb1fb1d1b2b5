# -*- coding: utf-8 -*-
# Copyright (c) 2023, The leafkit Developers
# All rights reserved.
#
# Redistribution and use in source and binary forms, with or without
# modification, are permitted under the terms of the BSD 3-clause license
# distributed with this package.
import logging
import os

import numpy as np
import soundfile as sf

from .dsp import TARGET_RATE, Waveform
from .errors import DataError, ShapeMismatch

__all__ = ['AudioWriter', 'write_waveform']

log = logging.getLogger(__name__)


class AudioWriter(object):
    """Writes WAV files.

    @subtype is a libsndfile subtype name: 'FLOAT' (default, lossless for
    augmented output), 'PCM_16' or 'PCM_24'. Data are buffered by
    :meth:`writeSamples` and flushed on :meth:`close`.
    """

    def __init__(self, file_name, sample_rate=TARGET_RATE, n_channels=1,
                 subtype='FLOAT'):
        self.path = str(file_name)
        self.sample_rate = int(sample_rate)
        self.n_channels = int(n_channels)
        self.subtype = subtype
        self.sample_buffer = []
        self.closed = False
        directory = os.path.dirname(os.path.abspath(self.path))
        if not os.access(directory, os.W_OK):
            raise DataError('output directory %s is not writable' % directory)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, ex_tb):
        self.close()

    def setSampleRate(self, sample_rate):
        self.sample_rate = int(sample_rate)

    def writeSamples(self, data):
        """
        Queues samples shaped [frames] or [frames, n_channels]
        """
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2 or data.shape[1] != self.n_channels:
            raise ShapeMismatch('expected %d channel(s), got shape %s'
                                % (self.n_channels, data.shape))
        self.sample_buffer.append(data)

    def writeWaveform(self, w):
        if not isinstance(w, Waveform):
            raise DataError('expected a Waveform')
        self.setSampleRate(w.sample_rate)
        self.writeSamples(w.samples)

    def close(self):
        if self.closed:
            return
        self.closed = True
        if self.sample_buffer:
            data = np.concatenate(self.sample_buffer, axis=0)
        else:
            data = np.zeros((0, self.n_channels))
        sf.write(self.path, data, self.sample_rate, subtype=self.subtype,
                 format='WAV')
        self.sample_buffer = []
        log.debug('wrote %s (%d frames)', self.path, len(data))


def write_waveform(path, w, subtype='FLOAT'):
    with AudioWriter(path, w.sample_rate, subtype=subtype) as f:
        f.writeWaveform(w)
