# -*- coding: utf-8 -*-
# Copyright (c) 2023, The leafkit Developers
# All rights reserved.
#
# Redistribution and use in source and binary forms, with or without
# modification, are permitted under the terms of the BSD 3-clause license
# distributed with this package.
"""Waveform augmentation.

Three transforms (colored noise at a target SNR, impulse-response
convolution, frequency masking) and two pipelines built on them: an
online one applied per example in every batch and an offline one that
writes a fixed number of augmented generations of each training chunk.

Every random draw comes from an explicitly passed generator. Batches
derive one child stream per example so the result does not depend on
the order in which examples are processed.
"""
import glob
import hashlib
import logging
import os
from collections import Counter

import numpy as np
from scipy import signal

from .audioreader import read_waveform
from .audiowriter import write_waveform
from .dataset import ChunkLoader, ChunkSpec, DatasetManifest, RecordingEntry
from .dsp import Waveform
from .errors import DataError, ModeError, SampleRateError
from .rng import derive_key, make_stream

__all__ = ['EXPECTED_IR_COUNT', 'PEAK_LIMIT', 'add_colored_noise',
           'apply_impulse_response', 'frequency_mask', 'limit_peak',
           'augment_one', 'augment_batch', 'load_ir_bank', 'generate_offline',
           'append_augmented']

log = logging.getLogger(__name__)

EXPECTED_IR_COUNT = 11
PEAK_LIMIT = 0.999
# raised-cosine edge width relative to the masked band
MASK_TAPER = 0.02


def _rms(x):
    return float(np.sqrt(np.mean(np.square(x, dtype=np.float64))))


def add_colored_noise(w, snr_db, decay, rng):
    """Adds noise with power spectral density proportional to
    ``f**-decay`` (0 white, 1 pink, negative values rising), scaled to
    ``snr_db`` below the signal power. Silent input is returned
    unchanged."""
    x = w.samples
    signal_rms = _rms(x)
    if signal_rms == 0.0:
        log.warning('silent input, colored noise skipped')
        return w
    n = len(x)
    n_bins = n // 2 + 1
    spectrum = rng.standard_normal(n_bins) + 1j * rng.standard_normal(n_bins)
    bins = np.arange(n_bins, dtype=np.float64)
    scale = np.ones(n_bins)
    scale[1:] = bins[1:] ** (-decay / 2.0)
    if n_bins > 1:
        scale[0] = scale[1]
    noise = np.fft.irfft(spectrum * scale, n)
    noise_rms = _rms(noise)
    if noise_rms == 0.0:
        return w
    noise *= signal_rms / (noise_rms * 10.0 ** (snr_db / 20.0))
    return Waveform((x + noise).astype(x.dtype), w.sample_rate)


def apply_impulse_response(w, ir, mix=None, rng=None):
    """Convolves ``w`` with ``ir`` and mixes the result back in.

    The wet signal is advanced so that the strongest IR tap sits at lag 0
    and scaled to the RMS of the dry signal; the output is
    ``(1 - mix) * dry + mix * wet``. With ``mix`` None it is drawn
    uniformly from [0, 1) with ``rng``.
    """
    if ir.sample_rate != w.sample_rate:
        raise SampleRateError('impulse response at %d Hz, audio at %d Hz'
                              % (ir.sample_rate, w.sample_rate))
    if len(ir) == 0:
        raise DataError('empty impulse response')
    if mix is None:
        mix = float(rng.uniform(0.0, 1.0))
    if mix == 0.0:
        return w
    x = w.samples
    n = len(x)
    lag = int(np.argmax(np.abs(ir.samples)))
    wet = signal.fftconvolve(x, ir.samples)[lag:lag + n]
    if len(wet) < n:
        wet = np.pad(wet, (0, n - len(wet)))
    wet_rms = _rms(wet)
    if wet_rms > 0.0:
        wet = wet * (_rms(x) / wet_rms)
    out = (1.0 - mix) * x + mix * wet
    return Waveform(out.astype(x.dtype), w.sample_rate)


def frequency_mask(w, bw_fraction, rng, center_hz=None):
    """Erases a band of ``bw_fraction * Nyquist`` Hz around a uniformly
    drawn centre; the band is clipped to [0, Nyquist] and flanked by
    raised-cosine edges."""
    if not 0.0 < bw_fraction < 1.0:
        raise DataError('mask bandwidth fraction must lie in (0, 1)')
    x = w.samples
    nyquist = w.sample_rate / 2.0
    if center_hz is None:
        center_hz = float(rng.uniform(0.0, nyquist))
    width = bw_fraction * nyquist
    low = max(0.0, center_hz - width / 2.0)
    high = min(nyquist, center_hz + width / 2.0)
    taper = MASK_TAPER * width
    freqs = np.fft.rfftfreq(len(x), 1.0 / w.sample_rate)
    gain = np.ones_like(freqs)
    gain[(freqs >= low) & (freqs <= high)] = 0.0
    if taper > 0:
        lower_edge = (freqs >= low - taper) & (freqs < low)
        gain[lower_edge] = 0.5 * (1.0 + np.cos(
            np.pi * (freqs[lower_edge] - (low - taper)) / taper))
        upper_edge = (freqs > high) & (freqs <= high + taper)
        gain[upper_edge] = 0.5 * (1.0 + np.cos(
            np.pi * (high + taper - freqs[upper_edge]) / taper))
    out = np.fft.irfft(np.fft.rfft(x) * gain, len(x))
    return Waveform(out.astype(x.dtype), w.sample_rate)


def limit_peak(w):
    """Rescales to a peak of 0.999 when any sample exceeds full scale."""
    peak = float(np.max(np.abs(w.samples))) if len(w) else 0.0
    if peak <= 1.0:
        return w
    log.info('peak %.3f above full scale, rescaled to %.3f', peak,
             PEAK_LIMIT)
    return Waveform((w.samples * (PEAK_LIMIT / peak)).astype(w.samples.dtype),
                    w.sample_rate)


def augment_one(w, cfg, rng, bank=(), stats=None):
    """Mask, then noise, then impulse response, each with its own
    probability from ``cfg``."""
    stats = stats if stats is not None else Counter()
    stats['examples'] += 1
    if cfg.mask_prob and rng.random() < cfg.mask_prob:
        w = frequency_mask(w, rng.uniform(*cfg.mask_bw_range), rng)
        stats['mask'] += 1
    if cfg.noise_prob and rng.random() < cfg.noise_prob:
        w = add_colored_noise(w, rng.uniform(*cfg.snr_range_db),
                              rng.uniform(*cfg.decay_range), rng)
        stats['noise'] += 1
    if bank and cfg.ir_prob and rng.random() < cfg.ir_prob:
        ir = bank[int(rng.integers(len(bank)))]
        w = apply_impulse_response(w, ir, rng.uniform(*cfg.mix_range))
        stats['ir'] += 1
    return limit_peak(w)


def augment_batch(batch, cfg, rng, bank=(), stats=None):
    """Online augmentation of a list of Waveforms.

    Example ``i`` draws from a child stream keyed by one value taken from
    ``rng`` and by ``i``; ``stats`` (a Counter) collects how often each
    transform fired.
    """
    if cfg.mode != 'online':
        raise ModeError('augment_batch needs an online configuration, got %r'
                        % cfg.mode)
    key = derive_key(rng)
    return [augment_one(w, cfg, make_stream(key, i), bank, stats)
            for i, w in enumerate(batch)]


def load_ir_bank(directory, expected=EXPECTED_IR_COUNT):
    """All WAV impulse responses in ``directory``, at 44.1 kHz."""
    paths = sorted(glob.glob(os.path.join(str(directory), '*.wav'))
                   + glob.glob(os.path.join(str(directory), '*.WAV')))
    bank = [read_waveform(p) for p in paths]
    if len(bank) != expected:
        log.warning('impulse response bank %s holds %d files, expected %d',
                    directory, len(bank), expected)
    return bank


def _payload_digest(w):
    # same bytes AudioReader.payloadDigest hashes after a FLOAT round trip
    decoded = w.samples.astype(np.float32).astype(np.float64)[:, None]
    return hashlib.sha256(np.ascontiguousarray(decoded).tobytes()).hexdigest()


def _safe_name(recording_id):
    return recording_id.replace('/', '__')


def generate_offline(manifest, cfg, out_dir, n_samples, seed=0, bank=()):
    """Writes ``cfg.offline_generations`` augmented copies of every training
    chunk to ``out_dir/<label>/``.

    Files are named ``<recording>_c<chunk>_aug<N>_seed<S>.wav``. Returns
    the new manifest entries, which :func:`append_augmented` adds to a
    manifest.
    """
    if cfg.mode != 'offline':
        raise ModeError('generate_offline needs an offline configuration, '
                        'got %r' % cfg.mode)
    out_dir = os.path.abspath(str(out_dir))
    loader = ChunkLoader(manifest, n_samples)
    entries = []
    stats = Counter()
    index = 0
    for entry in manifest.by_split('train'):
        if entry.source == 'augmented':
            continue
        folder = os.path.join(out_dir, entry.label)
        try:
            os.makedirs(folder, exist_ok=True)
        except OSError as exc:
            raise DataError('cannot create %s: %s' % (folder, exc))
        for c, spec in enumerate(entry.chunks):
            clip = Waveform(loader.load(entry, spec), 44100)
            for generation in range(cfg.offline_generations):
                rng = make_stream(seed, 'offline', index, generation)
                out = augment_one(clip, cfg, rng, bank, stats)
                name = '%s_c%d_aug%d_seed%d' % (_safe_name(entry.id), c,
                                                generation, seed)
                path = os.path.join(folder, name + '.wav')
                write_waveform(path, out)
                new_id = '%s/%s' % (entry.label, name)
                digest = _payload_digest(out)
                new = RecordingEntry(id=new_id, label=entry.label,
                                     duration_s=len(out) / 44100.0,
                                     source_path=path, split='train',
                                     sha256=digest, group=entry.group,
                                     source='augmented')
                new.chunks = [ChunkSpec(new_id, 0.0)]
                entries.append(new)
            index += 1
    log.info('offline augmentation wrote %d files (%s)', len(entries),
             ', '.join('%s=%d' % kv for kv in sorted(stats.items())))
    return entries


def append_augmented(manifest, entries):
    """Returns a manifest with ``entries`` added (replacing same ids)."""
    new_ids = set(e.id for e in entries)
    kept = [e for e in manifest.entries if e.id not in new_ids]
    return DatasetManifest(kept + list(entries), manifest.labels,
                           manifest.root, manifest.rejections,
                           manifest.header_extra)
