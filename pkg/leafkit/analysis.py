# -*- coding: utf-8 -*-
# Copyright (c) 2023, The leafkit Developers
# All rights reserved.
#
# Redistribution and use in source and binary forms, with or without
# modification, are permitted under the terms of the BSD 3-clause license
# distributed with this package.
"""Where did the learned filters go?

Compares the Gabor centre frequencies of a trained LEAF frontend with its
mel initialisation: per-filter deviation, the filters sorted by frequency,
density over the mel axis and how much training scrambled the original
ascending order.
"""
import csv
import logging
from dataclasses import dataclass

import numpy as np
from matplotlib.figure import Figure
from scipy.stats import gaussian_kde

from .dsp import hz_to_mel
from .errors import DataError, ModeError, ShapeMismatch

__all__ = ['FilterReport', 'DENSITY_BINS', 'KDE_BANDWIDTH_MEL',
           'extract_filter_report', 'report_from_checkpoints',
           'order_disturbance_metric', 'write_filter_csv',
           'render_filter_plots']

log = logging.getLogger(__name__)

DENSITY_BINS = 32
KDE_BANDWIDTH_MEL = 100.0


@dataclass
class FilterReport(object):
    """Initial and trained centre frequencies (Hz) of every filter, in
    parameter order."""
    init_hz: np.ndarray
    trained_hz: np.ndarray
    sample_rate: int = 44100

    @property
    def n_filters(self):
        return len(self.init_hz)

    @property
    def init_mel(self):
        return hz_to_mel(self.init_hz)

    @property
    def trained_mel(self):
        return hz_to_mel(self.trained_hz)

    @property
    def deviation_hz(self):
        return self.trained_hz - self.init_hz

    @property
    def order(self):
        """Stable permutation sorting the trained centres ascending."""
        return np.argsort(self.trained_hz, kind='stable')

    @property
    def mel_range(self):
        return 0.0, float(hz_to_mel(self.sample_rate / 2.0))

    def density(self, which='trained'):
        """Filter counts in 32 equal-width mel bins over [0, mel(Nyquist)]."""
        values = self.trained_mel if which == 'trained' else self.init_mel
        counts, edges = np.histogram(values, bins=DENSITY_BINS,
                                     range=self.mel_range)
        return counts, edges


def extract_filter_report(init, trained):
    """FilterReport of two LeafParams (or centre-frequency arrays)."""
    def centers(p):
        if hasattr(p, 'center_freqs'):
            return np.array(p.center_freqs.values, dtype=np.float64), \
                p.sample_rate
        return np.asarray(p, dtype=np.float64), None

    init_hz, rate = centers(init)
    trained_hz, trained_rate = centers(trained)
    if init_hz.shape != trained_hz.shape:
        raise ShapeMismatch('%d initial filters but %d trained filters'
                            % (len(init_hz), len(trained_hz)))
    return FilterReport(init_hz, trained_hz,
                        rate or trained_rate or 44100)


def report_from_checkpoints(init_ckpt, trained_ckpt):
    """FilterReport from two checkpoints of the same LEAF-family run."""
    for ckpt in (init_ckpt, trained_ckpt):
        if ckpt.frontend == 'mel' or 'frontend.center_freqs' not in \
                ckpt.tensors:
            raise ModeError('no learnable filters: checkpoint uses the mel '
                            'frontend')
    rate = trained_ckpt.config.get('frontend', {}).get('sample_rate', 44100)
    report = extract_filter_report(init_ckpt.tensors['frontend.center_freqs'],
                                   trained_ckpt.tensors['frontend.center_freqs'])
    report.sample_rate = int(rate)
    return report


def order_disturbance_metric(report):
    """Share of neighbouring filter pairs (i, i+1) whose trained centres are
    in descending order; 0 for a fully ordered bank."""
    if report.n_filters < 2:
        return 0.0
    return float(np.mean(np.diff(report.trained_hz) < 0))


def write_filter_csv(report, path):
    rows = zip(range(report.n_filters), report.init_hz, report.trained_hz,
               report.init_mel, report.trained_mel, report.deviation_hz)
    try:
        with open(path, 'w', newline='') as handle:
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow(['index', 'init_hz', 'trained_hz', 'init_mel',
                             'trained_mel', 'deviation_hz'])
            for i, ih, th, im, tm, dev in rows:
                writer.writerow([i, '%.4f' % ih, '%.4f' % th, '%.4f' % im,
                                 '%.4f' % tm, '%.4f' % dev])
    except (IOError, OSError) as exc:
        raise DataError('cannot write %s: %s' % (path, exc))


def _kde_curve(values, grid):
    spread = np.std(values)
    if len(values) < 2 or spread == 0:
        return None
    return gaussian_kde(values, bw_method=KDE_BANDWIDTH_MEL / spread)(grid)


def render_filter_plots(report, path):
    """Writes the six-panel comparison plus a density strip to ``path``
    (SVG).

    Top row in Hz, middle row in mel: initialisation, trained in parameter
    order, trained sorted by frequency, each later panel with the
    initialisation curve overlaid. Bottom row: violins and kernel density
    of the initial and trained centres over the mel axis.
    """
    index = np.arange(report.n_filters)
    hz_top = report.sample_rate / 2.0
    mel_top = report.mel_range[1]
    fig = Figure(figsize=(12, 10))
    grid = fig.add_gridspec(3, 3)
    panels = [
        ('A', report.init_hz, report.init_hz, 'Hz', hz_top, False),
        ('B', report.trained_hz, report.init_hz, 'Hz', hz_top, True),
        ('C', report.trained_hz[report.order], report.init_hz, 'Hz', hz_top,
         True),
        ('D', report.init_mel, report.init_mel, 'mel', mel_top, False),
        ('E', report.trained_mel, report.init_mel, 'mel', mel_top, True),
        ('F', report.trained_mel[report.order], report.init_mel, 'mel',
         mel_top, True),
    ]
    for k, (letter, values, init, unit, top, overlay) in enumerate(panels):
        ax = fig.add_subplot(grid[k // 3, k % 3])
        ax.plot(index, values, '.', color='C0', markersize=4)
        if overlay:
            ax.plot(index, init, '-', color='C1', linewidth=1)
        ax.set_ylim(0.0, top * 1.02)
        ax.set_xlim(-1, report.n_filters)
        ax.set_title(letter, loc='left', fontweight='bold')
        ax.set_xlabel('filter index' if letter not in 'CF'
                      else 'filter rank')
        ax.set_ylabel('centre frequency (%s)' % unit)

    violin = fig.add_subplot(grid[2, :2])
    data = [report.init_mel, report.trained_mel]
    if all(np.std(v) > 0 for v in data):
        violin.violinplot(data, vert=False, showmedians=True,
                          bw_method=lambda kde: KDE_BANDWIDTH_MEL
                          / np.std(kde.dataset))
    violin.set_yticks([1, 2])
    violin.set_yticklabels(['initial', 'trained'])
    violin.set_xlim(0.0, mel_top)
    violin.set_xlabel('centre frequency (mel)')

    density = fig.add_subplot(grid[2, 2])
    axis = np.linspace(0.0, mel_top, 256)
    counts, edges = report.density()
    density.bar(edges[:-1], counts, width=np.diff(edges), align='edge',
                color='0.8')
    for values, colour, name in ((report.init_mel, 'C1', 'initial'),
                                 (report.trained_mel, 'C0', 'trained')):
        curve = _kde_curve(values, axis)
        if curve is not None:
            scale = report.n_filters * (edges[1] - edges[0])
            density.plot(axis, curve * scale, color=colour, label=name)
    density.set_xlim(0.0, mel_top)
    density.set_xlabel('centre frequency (mel)')
    density.set_ylabel('filters per bin')
    density.legend(fontsize=7)
    fig.tight_layout()
    try:
        fig.savefig(str(path), format='svg')
    except (IOError, OSError) as exc:
        raise DataError('cannot write %s: %s' % (path, exc))
    log.info('filter plots written to %s', path)
    return str(path)
