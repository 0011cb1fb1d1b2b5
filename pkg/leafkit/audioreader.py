# -*- coding: utf-8 -*-
# Copyright (c) 2023, The leafkit Developers
# All rights reserved.
#
# Redistribution and use in source and binary forms, with or without
# modification, are permitted under the terms of the BSD 3-clause license
# distributed with this package.
import hashlib
import logging

import numpy as np
import soundfile as sf

from .dsp import TARGET_RATE, resample_to_44100, to_mono
from .errors import DataError, SampleRateError

__all__ = ['AudioReader', 'read_waveform']

log = logging.getLogger(__name__)


class AudioReader(object):
    """Read access to one WAV file.

    Usable as a context manager::

        with AudioReader('cicada.wav') as f:
            w = f.readWaveform()
    """

    def __init__(self, file_name):
        self.path = str(file_name)
        try:
            self.handle = sf.SoundFile(self.path, 'r')
        except (RuntimeError, IOError, OSError) as exc:
            raise DataError('%s: unreadable audio (%s)' % (self.path, exc))

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, ex_tb):
        self.close()

    def close(self):
        self.handle.close()

    def getSampleRate(self):
        return int(self.handle.samplerate)

    def getNChannels(self):
        return int(self.handle.channels)

    def getNSamples(self):
        return int(self.handle.frames)

    def getFileDuration(self):
        """
        Returns the duration in seconds
        """
        return self.getNSamples() / float(self.getSampleRate())

    def getFormat(self):
        return self.handle.format

    def getSubtype(self):
        return self.handle.subtype

    def getHeader(self):
        """
        Returns the file header as dict
        """
        return {'sample_rate': self.getSampleRate(),
                'channels': self.getNChannels(),
                'frames': self.getNSamples(),
                'duration_s': self.getFileDuration(),
                'format': self.getFormat(),
                'subtype': self.getSubtype()}

    def readSignal(self, start=0, frames=-1):
        """Returns samples as float64, shaped [frames, channels]."""
        self.handle.seek(start)
        try:
            data = self.handle.read(frames=frames, dtype='float64',
                                    always_2d=True)
        except (RuntimeError, IOError) as exc:
            raise DataError('%s: decode failed (%s)' % (self.path, exc))
        return data

    def readWaveform(self, offset_s=0.0, duration_s=None, resample=True):
        """Mono waveform, resampled to 44.1 kHz unless ``resample`` is
        False.

        ``offset_s`` and ``duration_s`` select a section in seconds of the
        file's own time axis.
        """
        if resample:
            self.checkRate()
        rate = self.getSampleRate()
        start = int(round(offset_s * rate))
        frames = -1 if duration_s is None else int(round(duration_s * rate))
        w = to_mono(self.readSignal(start, frames), rate)
        if resample:
            w = resample_to_44100(w)
        return w

    def payloadDigest(self):
        """sha256 of the decoded samples, independent of container details."""
        return hashlib.sha256(
            np.ascontiguousarray(self.readSignal()).tobytes()).hexdigest()

    def checkRate(self, minimum=TARGET_RATE):
        if self.getSampleRate() < minimum:
            raise SampleRateError('%s: %d Hz is below %d Hz'
                                  % (self.path, self.getSampleRate(), minimum))


def read_waveform(path, offset_s=0.0, duration_s=None):
    """Shorthand for ``AudioReader(path).readWaveform(...)``."""
    with AudioReader(path) as f:
        return f.readWaveform(offset_s=offset_s, duration_s=duration_s)
