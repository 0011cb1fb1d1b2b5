# -*- coding: utf-8 -*-
# Copyright (c) 2023, The leafkit Developers
# All rights reserved.
#
# Redistribution and use in source and binary forms, with or without
# modification, are permitted under the terms of the BSD 3-clause license
# distributed with this package.
"""Test-set scoring, confusion matrices and multi-run summaries.

Labels are always ordered alphabetically. Precision, recall and F1 are
macro averages (unweighted over classes); a class that is never predicted
has precision 0.
"""
import csv
import json
import logging
import os
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np
from matplotlib.figure import Figure
from sklearn.metrics import confusion_matrix, precision_recall_fscore_support

from .errors import DataError, InputError, LabelMismatch
from .training import ExampleSet, load_trained, predict

__all__ = ['EvalReport', 'RunSummary', 'SUMMARY_METRICS', 'score',
           'evaluate', 'evaluate_examples', 'summarize_runs',
           'export_confusion', 'write_report', 'load_report',
           'write_summary_csv', 'genus']

log = logging.getLogger(__name__)

SUMMARY_METRICS = ('accuracy', 'macro_f1', 'macro_recall', 'macro_precision',
                   'val_accuracy', 'val_loss')


@dataclass
class EvalReport(object):
    """Scores of one run on one split.

    ``confusion[i][j]`` counts items of true label ``labels[i]`` predicted
    as ``labels[j]``.
    """
    labels: list
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: list
    per_class: list = field(default_factory=list)
    n_items: int = 0
    level: str = 'chunk'
    split: str = 'test'
    model: str = None
    val_accuracy: float = None
    val_loss: float = None

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)

    @property
    def confusion_array(self):
        return np.asarray(self.confusion, dtype=np.int64)


@dataclass
class RunSummary(object):
    """Median and range of every metric over several runs."""
    model: str
    runs: list
    stats: OrderedDict = field(default_factory=OrderedDict)

    @property
    def n_runs(self):
        return len(self.runs)

    def format(self, metric):
        """``median low - high`` with two decimals, e.g. ``0.62 0.57 - 0.67``."""
        median, low, high = self.stats[metric]
        return '%.2f %.2f - %.2f' % (median, low, high)


def score(y_true, y_pred, labels=None):
    """EvalReport for two sequences of label names."""
    y_true = [str(v) for v in y_true]
    y_pred = [str(v) for v in y_pred]
    if len(y_true) != len(y_pred):
        raise DataError('%d true labels but %d predictions'
                        % (len(y_true), len(y_pred)))
    if not y_true:
        raise DataError('nothing to score')
    labels = sorted(set(labels if labels is not None else y_true + y_pred))
    unknown = sorted(set(y_true + y_pred) - set(labels))
    if unknown:
        raise LabelMismatch('labels %s are not in the label set'
                            % ', '.join(unknown))
    matrix = confusion_matrix(y_true, y_pred, labels=labels)
    precision, recall, f1, support = precision_recall_fscore_support(
        y_true, y_pred, labels=labels, average=None, zero_division=0)
    predicted = matrix.sum(axis=0)
    for label, count, n in zip(labels, predicted, support):
        if count == 0 and n > 0:
            log.warning('class %s was never predicted, precision set to 0',
                        label)
    per_class = [OrderedDict([('label', label), ('precision', float(p)),
                              ('recall', float(r)), ('f1', float(f)),
                              ('support', int(s))])
                 for label, p, r, f, s in zip(labels, precision, recall, f1,
                                              support)]
    return EvalReport(labels=labels,
                      accuracy=float(np.trace(matrix)) / float(matrix.sum()),
                      macro_precision=float(np.mean(precision)),
                      macro_recall=float(np.mean(recall)),
                      macro_f1=float(np.mean(f1)),
                      confusion=matrix.astype(int).tolist(),
                      per_class=per_class, n_items=len(y_true))


def _majority(keys, truth, predictions, n_classes):
    """One vote per source file; ties go to the alphabetically first
    class."""
    order = OrderedDict()
    for key, t, p in zip(keys, truth, predictions):
        order.setdefault(key, (t, []))[1].append(p)
    file_truth = [t for t, _ in order.values()]
    file_pred = [int(np.argmax(np.bincount(votes, minlength=n_classes)))
                 for _, votes in order.values()]
    return file_truth, file_pred


def evaluate_examples(model, frontend, examples, labels, cfg,
                      group_by_file=False, batch_size=14):
    """Scores ``model`` on an ExampleSet whose label indices refer to
    ``labels``."""
    logits = predict(model, frontend, examples, cfg, batch_size)
    predictions = np.argmax(logits, axis=1)
    truth = examples.labels
    level = 'chunk'
    if group_by_file:
        truth, predictions = _majority(examples.keys, truth, predictions,
                                       len(labels))
        level = 'file'
    report = score([labels[i] for i in truth],
                   [labels[i] for i in predictions], labels)
    report.level = level
    return report


def evaluate(ckpt, manifest, split_name='test', group_by_file=False,
             data_root=None):
    """Scores a checkpoint on one split of a manifest.

    Raises
    ------
    LabelMismatch
        if the manifest's label set differs from the checkpoint's
    """
    if sorted(manifest.labels) != sorted(ckpt.labels):
        raise LabelMismatch('checkpoint labels (%d) differ from manifest '
                            'labels (%d)' % (len(ckpt.labels),
                                             len(manifest.labels)))
    if data_root is not None:
        manifest = manifest.copy()
        manifest.root = data_root
    model, frontend, run_cfg = load_trained(ckpt)
    examples = ExampleSet.from_manifest(manifest, split_name,
                                        run_cfg.frontend.n_samples,
                                        ckpt.labels)
    if len(examples) == 0:
        raise DataError('split %s is empty' % split_name)
    report = evaluate_examples(model, frontend, examples, list(ckpt.labels),
                               run_cfg.frontend, group_by_file,
                               run_cfg.train.batch_size)
    report.split = split_name
    report.val_loss = ckpt.meta.get('val_loss')
    report.val_accuracy = ckpt.meta.get('val_accuracy')
    report.model = '%s-%d' % (run_cfg.train.frontend,
                              run_cfg.model.n_conv_layers)
    log.info('%s split: accuracy %.4f, macro F1 %.4f over %d %s items',
             split_name, report.accuracy, report.macro_f1, report.n_items,
             report.level)
    return report


def _lower_median(values):
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def summarize_runs(reports, model=None):
    """Median (lower-middle for even counts), minimum and maximum of every
    metric in :data:`SUMMARY_METRICS` that all runs carry."""
    reports = list(reports)
    if not reports:
        raise InputError('no reports to summarize')
    label_sets = set(tuple(sorted(r.labels)) for r in reports)
    if len(label_sets) > 1:
        raise LabelMismatch('reports cover %d different label sets'
                            % len(label_sets))
    if model is None:
        model = reports[0].model or 'model'
    summary = RunSummary(model=model, runs=[r.to_dict() for r in reports])
    for metric in SUMMARY_METRICS:
        values = [getattr(r, metric) for r in reports]
        if any(v is None for v in values):
            continue
        values = [float(v) for v in values]
        summary.stats[metric] = (_lower_median(values), min(values),
                                 max(values))
    return summary


def write_summary_csv(summaries, path):
    """One row per model: for each metric its median, min and max."""
    if isinstance(summaries, RunSummary):
        summaries = [summaries]
    header = ['model', 'runs']
    for metric in SUMMARY_METRICS:
        header.extend(['%s_median' % metric, '%s_min' % metric,
                       '%s_max' % metric])
    try:
        with open(path, 'w', newline='') as handle:
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow(header)
            for s in summaries:
                row = [s.model, s.n_runs]
                for metric in SUMMARY_METRICS:
                    if metric in s.stats:
                        row.extend('%.4f' % v for v in s.stats[metric])
                    else:
                        row.extend(['', '', ''])
                writer.writerow(row)
    except (IOError, OSError) as exc:
        raise DataError('cannot write %s: %s' % (path, exc))


def write_report(report, path):
    try:
        with open(path, 'w') as handle:
            json.dump(report.to_dict(), handle, indent=2)
            handle.write('\n')
    except (IOError, OSError) as exc:
        raise DataError('cannot write %s: %s' % (path, exc))


def load_report(path):
    """Reads an EvalReport JSON file; malformed files raise InputError
    naming the file."""
    try:
        with open(path, 'r') as handle:
            return EvalReport.from_dict(json.load(handle))
    except (IOError, OSError, ValueError, TypeError) as exc:
        raise InputError('%s: not a readable evaluation report (%s)'
                         % (path, exc))


def genus(label):
    """First word of a binomial label (``Gryllus_campestris`` -> ``Gryllus``)."""
    return label.replace('_', ' ').split(' ')[0]


def export_confusion(report, path, group_by_genus=True):
    """Writes ``<path>.csv`` (counts, labels as header row and column) and
    ``<path>.svg`` (heatmap, true labels vertical). Returns both paths."""
    base = os.path.splitext(str(path))[0]
    csv_path, svg_path = base + '.csv', base + '.svg'
    order = np.argsort(report.labels, kind='stable')
    labels = [report.labels[i] for i in order]
    matrix = report.confusion_array[np.ix_(order, order)]
    try:
        with open(csv_path, 'w', newline='') as handle:
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow([''] + labels)
            for label, row in zip(labels, matrix):
                writer.writerow([label] + [int(v) for v in row])
    except (IOError, OSError) as exc:
        raise DataError('cannot write %s: %s' % (csv_path, exc))

    n = len(labels)
    size = max(4.0, 0.25 * n + 2.0)
    fig = Figure(figsize=(size, size))
    ax = fig.add_subplot(1, 1, 1)
    image = ax.imshow(matrix, cmap='Blues', interpolation='nearest')
    fig.colorbar(image, ax=ax, fraction=0.046, pad=0.04)
    ax.set_xticks(range(n))
    ax.set_yticks(range(n))
    ax.set_xticklabels(labels, rotation=90, fontsize=6)
    ax.set_yticklabels(labels, fontsize=6)
    ax.set_xlabel('predicted label')
    ax.set_ylabel('true label')
    if group_by_genus:
        for i in range(1, n):
            if genus(labels[i]) != genus(labels[i - 1]):
                ax.axhline(i - 0.5, color='0.3', linewidth=0.6)
                ax.axvline(i - 0.5, color='0.3', linewidth=0.6)
    ax.set_title('%s accuracy %.3f' % (report.split, report.accuracy))
    fig.tight_layout()
    try:
        fig.savefig(svg_path, format='svg')
    except (IOError, OSError) as exc:
        raise DataError('cannot write %s: %s' % (svg_path, exc))
    return csv_path, svg_path
