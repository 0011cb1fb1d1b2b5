# -*- coding: utf-8 -*-
# Copyright (c) 2023, The leafkit Developers
# All rights reserved.
#
# Redistribution and use in source and binary forms, with or without
# modification, are permitted under the terms of the BSD 3-clause license
# distributed with this package.
"""The two interchangeable frontends.

``mel_frontend`` is a fixed log-mel spectrogram. ``leaf_forward`` is the
learnable chain Gabor filterbank -> squared modulus -> Gaussian lowpass
pooling -> PCEN. Both map a clip of ``FrontendConfig.n_samples`` samples
to ``[n_filters, FrontendConfig.n_frames]`` features, [64, 1500] for 5 s
at 44.1 kHz.

Channel ``i`` of a LEAF feature map is always parameter ``i``; channels
are never re-sorted by frequency.
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .config import FrontendConfig
from .dsp import (Waveform, build_mel_filterbank, gabor_kernels,
                  gaussian_lowpass_kernel, same_padding, sigma_bounds,
                  stft_power)
from .errors import DataError, ModeError, SampleRateError, ShapeMismatch

__all__ = ['FeatureMap', 'LeafParams', 'ABLATIONS', 'mel_frontend',
           'leaf_init', 'leaf_features', 'leaf_forward', 'pcen',
           'set_ablation', 'clamp_params', 'mel_filterbank']

log = logging.getLogger(__name__)

ABLATIONS = ('full', 'leafFB', 'leafPCEN')

# valid ranges enforced after every optimiser step
PCEN_LIMITS = OrderedDict([
    ('pcen_alpha', (0.05, 1.5)),
    ('pcen_delta', (1e-3, 10.0)),
    ('pcen_root', (0.05, 2.0)),
    ('pcen_smooth', (1e-3, 0.5)),
])
POOL_LIMITS = (1e-3, 1.0)


@dataclass
class FeatureMap(object):
    """A [channels, frames] feature grid.

    ``channel_meta`` holds the nominal centre frequency (Hz) of every
    channel when the map was produced. ``tensor`` keeps the graph of a
    LEAF map computed with gradients enabled.
    """
    values: np.ndarray
    channel_meta: np.ndarray
    tensor: object = None

    @property
    def shape(self):
        return self.values.shape


@lru_cache(maxsize=8)
def _cached_bank(n_filters, fft_size, sample_rate, f_min, f_max):
    return build_mel_filterbank(n_filters, fft_size, sample_rate, f_min, f_max)


def mel_filterbank(cfg):
    """The (cached) triangle bank described by ``cfg``."""
    return _cached_bank(cfg.n_filters, cfg.fft_size, cfg.sample_rate,
                        float(cfg.f_min), float(cfg.f_max))


def _check_clip(w, cfg):
    if not isinstance(w, Waveform):
        raise DataError('expected a Waveform')
    if w.sample_rate != cfg.sample_rate:
        raise SampleRateError('frontend expects %d Hz audio, got %d Hz'
                              % (cfg.sample_rate, w.sample_rate))
    if len(w) != cfg.n_samples:
        raise ShapeMismatch('frontend expects %d samples, got %d'
                            % (cfg.n_samples, len(w)))


def mel_frontend(w, cfg=None):
    """Log-compressed mel spectrogram of one clip."""
    cfg = cfg or FrontendConfig()
    _check_clip(w, cfg)
    bank = mel_filterbank(cfg)
    power = stft_power(w, cfg.framing, cfg.fft_size)
    values = np.log(cfg.log_floor + bank.apply(power))
    return FeatureMap(values.astype(np.float32), bank.centers.copy())


class LeafParams(object):
    """Per-channel LEAF parameters.

    Every field is a :class:`leafkit.tensor.Tensor` of ``n_filters``
    entries. The three trainability flags decide which tensors require
    gradients: the filterbank group is ``center_freqs`` and
    ``kernel_sigmas``, the pooling group ``pool_sigmas`` and the PCEN group
    the four ``pcen_*`` fields.
    """

    GROUPS = OrderedDict([
        ('filterbank', ('center_freqs', 'kernel_sigmas')),
        ('pooling', ('pool_sigmas',)),
        ('pcen', ('pcen_alpha', 'pcen_delta', 'pcen_root', 'pcen_smooth')),
    ])
    FIELDS = tuple(name for group in GROUPS.values() for name in group)

    def __init__(self, center_freqs, kernel_sigmas, pool_sigmas, pcen_alpha,
                 pcen_delta, pcen_root, pcen_smooth, epsilon=1e-6,
                 trainable_filterbank=True, trainable_pooling=True,
                 trainable_pcen=True, kernel_len=294, sample_rate=44100,
                 dtype=np.float32):
        values = dict(center_freqs=center_freqs, kernel_sigmas=kernel_sigmas,
                      pool_sigmas=pool_sigmas, pcen_alpha=pcen_alpha,
                      pcen_delta=pcen_delta, pcen_root=pcen_root,
                      pcen_smooth=pcen_smooth)
        n = len(np.atleast_1d(center_freqs.values if isinstance(
            center_freqs, T.Tensor) else center_freqs))
        for name in self.FIELDS:
            value = values[name]
            if isinstance(value, T.Tensor):
                tensor = value
            else:
                tensor = T.Tensor(np.array(value, dtype=dtype), name=name)
            if tensor.shape != (n,):
                raise ShapeMismatch('%s needs %d entries, got shape %s'
                                    % (name, n, tensor.shape))
            tensor.name = name
            setattr(self, name, tensor)
        self.epsilon = float(epsilon)
        self.kernel_len = int(kernel_len)
        self.sample_rate = int(sample_rate)
        self.trainable_filterbank = bool(trainable_filterbank)
        self.trainable_pooling = bool(trainable_pooling)
        self.trainable_pcen = bool(trainable_pcen)
        self.sync_flags()

    @property
    def n_filters(self):
        return self.center_freqs.shape[0]

    def sync_flags(self):
        """Propagates the trainability flags to ``requires_grad``."""
        flags = dict(filterbank=self.trainable_filterbank,
                     pooling=self.trainable_pooling,
                     pcen=self.trainable_pcen)
        for group, names in self.GROUPS.items():
            for name in names:
                getattr(self, name).requires_grad = flags[group]

    def named_tensors(self, prefix='frontend.'):
        return OrderedDict((prefix + name, getattr(self, name))
                           for name in self.FIELDS)

    def parameters(self, prefix='frontend.'):
        """Trainable tensors only, keyed like :meth:`named_tensors`."""
        return OrderedDict((k, t) for k, t in self.named_tensors(prefix).items()
                           if t.requires_grad)

    def zero_grad(self):
        for name in self.FIELDS:
            getattr(self, name).zero_grad()

    def replace(self, **tensors):
        """Copy with some fields swapped for the given tensors (or arrays)."""
        values = dict((name, tensors.get(name, getattr(self, name)))
                      for name in self.FIELDS)
        dtype = self.center_freqs.dtype
        return LeafParams(epsilon=self.epsilon,
                          trainable_filterbank=self.trainable_filterbank,
                          trainable_pooling=self.trainable_pooling,
                          trainable_pcen=self.trainable_pcen,
                          kernel_len=self.kernel_len,
                          sample_rate=self.sample_rate, dtype=dtype, **values)

    def copy(self, dtype=None):
        """Deep copy, optionally cast (float64 for gradient checks)."""
        dtype = dtype or self.center_freqs.dtype
        values = dict((name, np.array(getattr(self, name).values, dtype=dtype))
                      for name in self.FIELDS)
        return LeafParams(epsilon=self.epsilon,
                          trainable_filterbank=self.trainable_filterbank,
                          trainable_pooling=self.trainable_pooling,
                          trainable_pcen=self.trainable_pcen,
                          kernel_len=self.kernel_len,
                          sample_rate=self.sample_rate, dtype=dtype, **values)

    def validate(self):
        """Raises DataError when a field left its valid domain."""
        nyquist = self.sample_rate / 2.0
        checks = [
            ('center_freqs', (self.center_freqs.values >= 0)
             & (self.center_freqs.values <= nyquist)),
            ('kernel_sigmas', self.kernel_sigmas.values > 0),
            ('pool_sigmas', (self.pool_sigmas.values > 0)
             & (self.pool_sigmas.values <= 1)),
            ('pcen_smooth', (self.pcen_smooth.values > 0)
             & (self.pcen_smooth.values < 1)),
            ('pcen_root', self.pcen_root.values > 0),
            ('pcen_delta', self.pcen_delta.values > 0),
        ]
        for name, ok in checks:
            if not np.all(ok):
                raise DataError('%s outside its valid range' % name)
        return self


def leaf_init(n=64, f_min=0.0, f_max=22050.0, cfg=None, dtype=np.float32):
    """LEAF parameters initialised on the mel scale.

    Centres sit on the mel triangle centres and each Gabor envelope is
    chosen so that its frequency response has the same full width at half
    maximum as the matching triangle.
    """
    cfg = cfg or FrontendConfig()
    bank = build_mel_filterbank(n, cfg.fft_size, cfg.sample_rate, f_min,
                                f_max)
    klen = cfg.kernel_len
    # FWHM of a Gaussian frequency response: sqrt(2 ln 2) * sr / (pi * sigma)
    sigmas = np.sqrt(2.0 * np.log(2.0)) * cfg.sample_rate / (np.pi * bank.fwhm)
    sigmas = np.clip(sigmas, *sigma_bounds(klen))
    full = np.ones(n)
    return LeafParams(center_freqs=bank.centers,
                      kernel_sigmas=sigmas,
                      pool_sigmas=full * cfg.pool_init,
                      pcen_alpha=full * cfg.pcen_alpha,
                      pcen_delta=full * cfg.pcen_delta,
                      pcen_root=full * cfg.pcen_root,
                      pcen_smooth=full * cfg.pcen_smooth,
                      epsilon=cfg.pcen_floor, kernel_len=klen,
                      sample_rate=cfg.sample_rate, dtype=dtype)


def pcen(energy, p):
    """Per-channel energy normalisation.

    ``M[t] = (1 - s) M[t-1] + s E[t]`` with ``M[0] = E[0]``, then
    ``(E / (eps + M)**alpha + delta)**r - delta**r`` per channel.
    ``energy`` is [..., channels, frames]; a plain array gives a plain
    array back.
    """
    plain = not isinstance(energy, T.Tensor)
    e = T._wrap(energy, p.pcen_alpha)
    if np.any(e.values < 0):
        raise DataError('PCEN needs non-negative energy')
    column = (-1, 1)
    alpha = p.pcen_alpha.reshape(column)
    delta = p.pcen_delta.reshape(column)
    root = p.pcen_root.reshape(column)
    if plain:
        with T.no_grad():
            return _pcen(e, p, alpha, delta, root).values
    return _pcen(e, p, alpha, delta, root)


def _pcen(e, p, alpha, delta, root):
    smooth = T.ema(e, p.pcen_smooth)
    gain = (smooth + p.epsilon) ** alpha
    return (e / gain + delta) ** root - delta ** root


def leaf_features(samples, p, hop=147):
    """Differentiable LEAF transform of a batch.

    Parameters
    ----------
    samples : ndarray or Tensor
        [time] or [batch, time]
    p : LeafParams
    hop : int
        pooling stride

    Returns
    -------
    Tensor shaped [batch, n_filters, ceil(time / hop)]
    """
    x = T._wrap(samples, p.center_freqs)
    if x.ndim == 1:
        x = x.reshape((1, 1, x.shape[0]))
    elif x.ndim == 2:
        x = x.reshape((x.shape[0], 1, x.shape[1]))
    else:
        raise ShapeMismatch('expected [time] or [batch, time], got %s'
                            % (x.shape,))
    n = p.n_filters
    klen = p.kernel_len
    length = x.shape[-1]

    cos_k, sin_k = gabor_kernels(p.center_freqs, p.kernel_sigmas, klen,
                                 p.sample_rate)
    kernels = T.concat([cos_k, sin_k], axis=0).reshape((2 * n, 1, klen))
    filtered = T.conv1d(x, kernels, stride=1, padding=same_padding(klen))
    energy = filtered[:, :n, :] ** 2 + filtered[:, n:, :] ** 2

    frames = -(-length // hop)
    left = klen // 2
    right = max(0, hop * (frames - 1) + klen - length - left)
    window = gaussian_lowpass_kernel(p.pool_sigmas, klen).reshape((n, 1, klen))
    pooled = T.conv1d(energy, window, stride=hop, padding=(left, right),
                      groups=n)
    return _pcen(pooled, p, p.pcen_alpha.reshape((-1, 1)),
                 p.pcen_delta.reshape((-1, 1)), p.pcen_root.reshape((-1, 1)))


def leaf_forward(w, p, cfg=None):
    """LEAF features of one clip; ``FeatureMap.tensor`` holds the graph."""
    cfg = cfg or FrontendConfig()
    _check_clip(w, cfg)
    p.validate()
    out = leaf_features(w.samples, p, hop=cfg.hop)
    out = out.reshape((p.n_filters, out.shape[-1]))
    return FeatureMap(out.values, p.center_freqs.values.copy(), tensor=out)


def set_ablation(p, mode):
    """Sets the trainability flags of ``p`` for an ablation mode.

    ``full`` (alias ``leaf``) trains everything, ``leafFB`` freezes PCEN and
    ``leafPCEN`` freezes filterbank and pooling. Returns ``p``.
    """
    if mode == 'leaf':
        mode = 'full'
    if mode not in ABLATIONS:
        raise ModeError('unknown ablation mode %r' % (mode,))
    p.trainable_filterbank = mode in ('full', 'leafFB')
    p.trainable_pooling = mode in ('full', 'leafFB')
    p.trainable_pcen = mode in ('full', 'leafPCEN')
    p.sync_flags()
    log.debug('ablation %s: filterbank=%s pooling=%s pcen=%s', mode,
              p.trainable_filterbank, p.trainable_pooling, p.trainable_pcen)
    return p


def _clip(tensor, low, high):
    tensor.values = np.clip(tensor.values, low, high).astype(tensor.dtype)


def clamp_params(p):
    """Projects every field back into its valid range, in place."""
    _clip(p.center_freqs, 0.0, p.sample_rate / 2.0)
    _clip(p.kernel_sigmas, *sigma_bounds(p.kernel_len))
    _clip(p.pool_sigmas, *POOL_LIMITS)
    for name, (low, high) in PCEN_LIMITS.items():
        _clip(getattr(p, name), low, high)
    return p
