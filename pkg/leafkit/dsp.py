# -*- coding: utf-8 -*-
# Copyright (c) 2023, The leafkit Developers
# All rights reserved.
#
# Redistribution and use in source and binary forms, with or without
# modification, are permitted under the terms of the BSD 3-clause license
# distributed with this package.
"""Signal-processing primitives shared by both frontends.

Everything here is a pure function of its arguments. The kernel builders
accept either arrays or :class:`leafkit.tensor.Tensor` parameters; given
tensors they return tensors so that gradients reach the parameters.
"""
import logging
from dataclasses import dataclass
from math import gcd

import numpy as np
from scipy import signal

from . import tensor as T
from .errors import DataError, SampleRateError, ShapeMismatch

__all__ = ['TARGET_RATE', 'Waveform', 'FramingConfig', 'MelFilterbank',
           'to_mono', 'resample_to_44100', 'hz_to_mel', 'mel_to_hz',
           'stft_power', 'build_mel_filterbank', 'gabor_kernels',
           'gaussian_lowpass_kernel', 'same_padding', 'sigma_bounds']

log = logging.getLogger(__name__)

TARGET_RATE = 44100

# windowed-sinc taps per polyphase branch
_TAPS_PER_PHASE = 64
_KAISER_BETA = 12.0


@dataclass
class Waveform(object):
    """Single-channel audio.

    Parameters
    ----------
    samples : ndarray
        1-D amplitudes, nominally within [-1, 1]
    sample_rate : int
        Hz
    """
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.dtype.kind != 'f':
            self.samples = self.samples.astype(np.float64)
        if self.samples.ndim != 1:
            raise ShapeMismatch('a Waveform holds one channel, got shape %s'
                                % (self.samples.shape,))
        if not self.sample_rate > 0:
            raise SampleRateError('sample rate must be positive, got %r'
                                  % self.sample_rate)
        if not np.all(np.isfinite(self.samples)):
            raise DataError('waveform contains non-finite samples')

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        """Length in seconds."""
        return len(self.samples) / float(self.sample_rate)


@dataclass(frozen=True)
class FramingConfig(object):
    window_len: int = 294
    hop: int = 147
    centered: bool = True

    def __post_init__(self):
        if self.hop < 1:
            raise ShapeMismatch('hop must be >= 1')
        if self.window_len != 2 * self.hop:
            raise ShapeMismatch('window length %d must be twice the hop %d'
                                % (self.window_len, self.hop))

    def n_frames(self, n_samples):
        if self.centered:
            return -(-n_samples // self.hop)
        return (n_samples - self.window_len) // self.hop + 1


def to_mono(samples, sample_rate=TARGET_RATE):
    """Averages the channels of ``samples``.

    ``samples`` is either 1-D or shaped [frames, channels], the layout
    soundfile returns.
    """
    data = np.asarray(samples)
    if data.ndim == 1:
        return Waveform(data, sample_rate)
    if data.ndim != 2:
        raise ShapeMismatch('expected [frames, channels], got %s'
                            % (data.shape,))
    if data.shape[1] == 0:
        raise DataError('audio has zero channels')
    return Waveform(data.mean(axis=1), sample_rate)


def resample_to_44100(w):
    """Downsamples ``w`` to 44.1 kHz with a Kaiser windowed-sinc polyphase
    filter; 44.1 kHz input is returned as is."""
    if w.sample_rate == TARGET_RATE:
        return w
    if w.sample_rate < TARGET_RATE:
        raise SampleRateError('sample rate %d Hz is below %d Hz'
                              % (w.sample_rate, TARGET_RATE))
    if int(w.sample_rate) != w.sample_rate:
        raise SampleRateError('non-integer sample rate %r' % w.sample_rate)
    div = gcd(TARGET_RATE, int(w.sample_rate))
    up = TARGET_RATE // div
    down = int(w.sample_rate) // div
    max_rate = max(up, down)
    taps = signal.firwin(2 * (_TAPS_PER_PHASE // 2) * max_rate + 1,
                         1.0 / max_rate, window=('kaiser', _KAISER_BETA))
    out = signal.resample_poly(w.samples, up, down, window=taps)
    log.debug('resampled %d Hz -> %d Hz (up=%d, down=%d)', w.sample_rate,
              TARGET_RATE, up, down)
    return Waveform(out.astype(w.samples.dtype), TARGET_RATE)


def hz_to_mel(f):
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise DataError('negative frequency')
    return 2595.0 * np.log10(1.0 + f / 700.0)


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise DataError('negative mel value')
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


def stft_power(w, cfg, fft_size=512):
    """Power spectrogram shaped [fft_size // 2 + 1, frames].

    Frames are centred: the signal is reflect-padded by half a window on
    each side and framed with a periodic Hann window.
    """
    if fft_size < cfg.window_len:
        raise ShapeMismatch('fft size %d shorter than window %d'
                            % (fft_size, cfg.window_len))
    x = w.samples if isinstance(w, Waveform) else np.asarray(w)
    if len(x) == 0:
        raise DataError('empty waveform')
    n_frames = cfg.n_frames(len(x))
    if cfg.centered:
        half = cfg.window_len // 2
        mode = 'reflect' if len(x) > half else 'constant'
        x = np.pad(x, (half, half), mode=mode)
    frames = np.lib.stride_tricks.sliding_window_view(
        x, cfg.window_len)[::cfg.hop][:n_frames]
    window = signal.get_window('hann', cfg.window_len, fftbins=True)
    spec = np.fft.rfft(frames * window, n=fft_size, axis=1)
    return (spec.real ** 2 + spec.imag ** 2).T


class MelFilterbank(object):
    """Triangular filters, linear in Hz between mel-spaced edges.

    ``edges`` holds ``n_filters + 2`` frequencies; triangle ``k`` rises
    from ``edges[k]`` to a peak of 1 at ``edges[k + 1]`` and falls to zero
    at ``edges[k + 2]``.
    """

    def __init__(self, n_filters, fft_size, sample_rate, f_min, f_max):
        self.n_filters = n_filters
        self.fft_size = fft_size
        self.sample_rate = sample_rate
        self.f_min = f_min
        self.f_max = f_max
        mels = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_filters + 2)
        self.edges = mel_to_hz(mels)
        self.edges[0] = f_min
        self.edges[-1] = f_max
        self.weights = self.response(self.bin_frequencies)

    @property
    def centers(self):
        return self.edges[1:-1]

    @property
    def bin_frequencies(self):
        return np.fft.rfftfreq(self.fft_size, 1.0 / self.sample_rate)

    @property
    def fwhm(self):
        """Full width at half maximum of each triangle, in Hz."""
        return (self.edges[2:] - self.edges[:-2]) / 2.0

    def response(self, freqs):
        """Evaluates every triangle at ``freqs``; returns [n_filters, n]."""
        freqs = np.asarray(freqs, dtype=np.float64)
        lower = self.edges[:-2, None]
        center = self.edges[1:-1, None]
        upper = self.edges[2:, None]
        rising = (freqs[None, :] - lower) / (center - lower)
        falling = (upper - freqs[None, :]) / (upper - center)
        return np.clip(np.minimum(rising, falling), 0.0, None)

    def apply(self, power):
        """Projects a [bins, frames] power grid onto the mel channels."""
        if power.shape[0] != self.weights.shape[1]:
            raise ShapeMismatch('power grid has %d bins, filterbank expects %d'
                                % (power.shape[0], self.weights.shape[1]))
        return self.weights.dot(power)


def build_mel_filterbank(n_filters=64, fft_size=512, sample_rate=TARGET_RATE,
                         f_min=0.0, f_max=22050.0):
    if n_filters < 2:
        raise ShapeMismatch('need at least 2 mel filters')
    if f_max > sample_rate / 2.0:
        raise SampleRateError('f_max %.1f Hz above Nyquist %.1f Hz'
                              % (f_max, sample_rate / 2.0))
    if not 0 <= f_min < f_max:
        raise DataError('need 0 <= f_min < f_max')
    return MelFilterbank(n_filters, fft_size, sample_rate, f_min, f_max)


def sigma_bounds(klen):
    """Admissible range of Gabor envelope widths, in samples."""
    scale = np.sqrt(2.0 * np.log(2.0)) / np.pi
    return 4.0 * scale, klen * scale


def _is_tensor(*values):
    return any(isinstance(v, T.Tensor) for v in values)


def _time_axis(klen):
    return np.arange(klen, dtype=np.float64) - (klen - 1) / 2.0


def gabor_kernels(centers, bandwidth_sigmas, klen=294,
                  sample_rate=TARGET_RATE):
    """Complex Gabor filters split into cosine and sine parts.

    Parameters
    ----------
    centers : array or Tensor
        [n] centre frequencies in Hz
    bandwidth_sigmas : array or Tensor
        [n] Gaussian envelope widths in samples
    klen : int
    sample_rate : int

    Returns
    -------
    (cos, sin) : each [n, klen], Tensors when either input is a Tensor
    """
    tensors = _is_tensor(centers, bandwidth_sigmas)
    sigma = T._wrap(bandwidth_sigmas)
    if np.any(sigma.values <= 0):
        raise DataError('Gabor sigmas must be positive')
    freq = T._wrap(centers, sigma)
    t = _time_axis(klen).astype(sigma.dtype)
    sigma_col = sigma.reshape((-1, 1))
    envelope = T.exp((t ** 2 * -0.5) / sigma_col ** 2) \
        / (sigma_col * np.sqrt(2.0 * np.pi))
    phase = freq.reshape((-1, 1)) * (2.0 * np.pi * t / sample_rate)
    cos_part = envelope * T.cos(phase)
    sin_part = envelope * T.sin(phase)
    if tensors:
        return cos_part, sin_part
    return cos_part.values, sin_part.values


def gaussian_lowpass_kernel(sigma_fraction, klen=294):
    """Sum-normalised Gaussian windows of standard deviation
    ``sigma_fraction * klen / 2``; returns [n, klen] (or [klen] for a
    scalar fraction)."""
    tensors = _is_tensor(sigma_fraction)
    frac = T._wrap(sigma_fraction)
    if np.any(frac.values <= 0) or np.any(frac.values > 1):
        raise DataError('pooling sigma fraction must lie in (0, 1]')
    scalar = frac.ndim == 0
    t = _time_axis(klen).astype(frac.dtype)
    width = frac.reshape((-1, 1)) * (klen / 2.0)
    bump = T.exp((t ** 2 * -0.5) / width ** 2)
    kernel = bump / bump.sum(axis=1, keepdims=True)
    if scalar:
        kernel = kernel.reshape((klen,))
    return kernel if tensors else kernel.values


def same_padding(klen):
    """(left, right) zero padding keeping the length of a stride-1
    correlation."""
    left = (klen - 1) // 2
    return left, klen - 1 - left
