# -*- coding: utf-8 -*-
# Copyright (c) 2023, The leafkit Developers
# All rights reserved.
#
# Redistribution and use in source and binary forms, with or without
# modification, are permitted under the terms of the BSD 3-clause license
# distributed with this package.
"""``leafkit`` command line.

::

    leafkit prepare --data-root corpus/ --manifest runs/manifest.jsonl
    leafkit train --config run.yaml --manifest runs/manifest.jsonl --out runs/leaf-s1 --seed 1
    leafkit eval runs/leaf-s1/best.ckpt --manifest runs/manifest.jsonl --out runs/leaf-s1
    leafkit summarize runs/leaf-s*/test_report.json --out runs/summary.csv
    leafkit analyze runs/leaf-s1/init.ckpt runs/leaf-s1/best.ckpt --out runs/leaf-s1

Exit codes: 0 ok, 2 data, 3 numeric, 4 label, 5 input, 6 mode.
"""
import argparse
import json
import logging
import os
import sys

from .analysis import (order_disturbance_metric, render_filter_plots,
                       report_from_checkpoints, write_filter_csv)
from .augment import append_augmented, generate_offline, load_ir_bank
from .backend import build_model, count_parameters
from .checkpoint import load_checkpoint
from .config import (REFERENCE_PARAMETER_COUNT, AugmentConfig, FRONTENDS,
                     load_config, resolve_seed)
from .dataset import (ingest, load_manifest, split, write_manifest,
                      write_rejections)
from .errors import DataError, LeafkitError
from .metrics import (evaluate, export_confusion, load_report,
                      summarize_runs, write_report, write_summary_csv)
from .rng import make_stream
from .training import build_frontend, train

__all__ = ['main', 'build_parser']

log = logging.getLogger(__name__)


def _configure_logging(verbosity):
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity and verbosity > 1:
        level = logging.DEBUG
    logging.basicConfig(level=level,
                        format='%(asctime)s %(levelname)s %(name)s: '
                               '%(message)s')


def _ensure_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise DataError('cannot create output directory %s: %s' % (path, exc))
    return path


def _run_config(args):
    cfg = load_config(args.config)
    if getattr(args, 'frontend', None) is not None:
        cfg = cfg.override('train', frontend=args.frontend)
    if getattr(args, 'layers', None) is not None:
        cfg = cfg.override('model', n_conv_layers=args.layers)
    if getattr(args, 'deterministic', None):
        cfg = cfg.override('train', deterministic=True)
    return cfg


def cmd_prepare(args):
    cfg = _run_config(args)
    if args.scheme is not None:
        cfg = cfg.override('ingest', scheme=args.scheme)
    manifest = ingest(args.data_root, cfg.ingest, cfg.frontend.clip_seconds)
    manifest = split(manifest, cfg.ingest.scheme)
    if args.augment_offline:
        acfg = cfg.augment
        if acfg.mode != 'offline':
            acfg = AugmentConfig.preset('offline', ir_dir=acfg.ir_dir)
        out_dir = args.out or os.path.join(
            os.path.dirname(os.path.abspath(args.manifest)), 'augmented')
        bank = load_ir_bank(acfg.ir_dir) if acfg.ir_dir else ()
        seed = resolve_seed(args.seed, cfg)
        entries = generate_offline(manifest, acfg, out_dir,
                                   cfg.frontend.n_samples, seed, bank)
        manifest = append_augmented(manifest, entries)
    manifest.validate()
    write_manifest(manifest, args.manifest)
    rejections = args.rejections or args.manifest + '.rejections.tsv'
    write_rejections(manifest, rejections)
    print('manifest: %s' % args.manifest)
    for name, info in manifest.summary().items():
        print('%-6s %5d files %9.1f s %6d chunks'
              % (name, info['files'], info['seconds'], info['chunks']))
    print('rejected: %d (see %s)' % (len(manifest.rejections), rejections))
    return 0


def _dry_run(cfg, manifest):
    n_classes = len(manifest.labels) if manifest is not None \
        else cfg.model.n_classes
    cfg = cfg.override('model', n_classes=n_classes)
    model = build_model(cfg.model, make_stream(0, 'init'))
    frontend = build_frontend(cfg)
    total = count_parameters(model, frontend)
    print('frontend: %s, layers: %d, classes: %d'
          % (cfg.train.frontend, cfg.model.n_conv_layers, n_classes))
    print('backend parameters: %d' % count_parameters(model))
    print('frontend parameters: %d' % (total - count_parameters(model)))
    print('trainable parameters: %d' % total)
    print('reference count: %d (delta %+d)'
          % (REFERENCE_PARAMETER_COUNT,
             total - REFERENCE_PARAMETER_COUNT))
    return 0


def cmd_train(args):
    cfg = _run_config(args)
    manifest = load_manifest(args.manifest) if args.manifest else None
    if args.dry_run:
        return _dry_run(cfg, manifest)
    if manifest is None:
        raise DataError('train needs --manifest')
    seed = resolve_seed(args.seed, cfg)
    out_dir = _ensure_dir(args.out)
    resume = load_checkpoint(args.resume) if args.resume else None
    best, logs = train(cfg, manifest, args.data_root, out_dir, seed, resume)
    if best is None:
        raise DataError('no epoch completed')
    report = evaluate(best, manifest, 'val', data_root=args.data_root)
    report_path = os.path.join(out_dir, 'val_report.json')
    write_report(report, report_path)
    print('best epoch %d of %d, val loss %.4f, val accuracy %.4f'
          % (best.epoch, logs[-1].epoch if logs else 0, best.best_val_loss,
             report.accuracy))
    print('checkpoint: %s' % os.path.join(out_dir, 'best.ckpt'))
    return 0


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    report = evaluate(ckpt, manifest, args.split, args.group_by_file,
                      args.data_root)
    out_dir = _ensure_dir(args.out)
    path = os.path.join(out_dir, '%s_report.json' % args.split)
    write_report(report, path)
    csv_path, svg_path = export_confusion(
        report, os.path.join(out_dir, '%s_confusion' % args.split))
    print('accuracy %.4f  macro F1 %.4f  recall %.4f  precision %.4f'
          % (report.accuracy, report.macro_f1, report.macro_recall,
             report.macro_precision))
    print('report: %s' % path)
    print('confusion: %s, %s' % (csv_path, svg_path))
    return 0


def cmd_summarize(args):
    reports = [load_report(path) for path in args.reports]
    summary = summarize_runs(reports, model=args.model)
    if args.out:
        write_summary_csv(summary, args.out)
    print('%s (%d runs)' % (summary.model, summary.n_runs))
    for metric in summary.stats:
        print('  %-16s %s' % (metric, summary.format(metric)))
    return 0


def cmd_analyze(args):
    report = report_from_checkpoints(load_checkpoint(args.init),
                                     load_checkpoint(args.trained))
    out_dir = _ensure_dir(args.out)
    write_filter_csv(report, os.path.join(out_dir, 'filters.csv'))
    render_filter_plots(report, os.path.join(out_dir, 'filters.svg'))
    disturbance = order_disturbance_metric(report)
    with open(os.path.join(out_dir, 'filters.json'), 'w') as handle:
        json.dump({'n_filters': report.n_filters,
                   'order_disturbance': disturbance,
                   'max_abs_deviation_hz':
                       float(abs(report.deviation_hz).max())},
                  handle, indent=2)
        handle.write('\n')
    print('filters: %d, order disturbance %.3f' % (report.n_filters,
                                                   disturbance))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog='leafkit',
        description='Insect sound classification with mel and LEAF '
                    'frontends.')
    parser.add_argument('-v', '--verbose', action='count', default=0,
                        help='-v for progress, -vv for debug output')
    sub = parser.add_subparsers(dest='command')
    sub.required = True

    def common(p, seed=True):
        p.add_argument('--config', help='YAML run configuration')
        if seed:
            p.add_argument('--seed', type=int,
                           help='run seed (default: train.seed, then '
                                '$LEAFKIT_SEED, then 0)')

    p = sub.add_parser('prepare', help='ingest, split and chunk a corpus')
    common(p)
    p.add_argument('--data-root', required=True,
                   help='directory of <species>/<file>.wav')
    p.add_argument('--manifest', required=True, help='manifest to write')
    p.add_argument('--scheme', choices=('pattern', 'stratified'))
    p.add_argument('--rejections', help='rejection list (default: '
                                        '<manifest>.rejections.tsv)')
    p.add_argument('--augment-offline', action='store_true',
                   help='write augmented generations of every training chunk')
    p.add_argument('--out', help='directory for offline augmented files')
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser('train', help='train one model')
    common(p)
    p.add_argument('--manifest')
    p.add_argument('--out', default='.', help='output directory')
    p.add_argument('--data-root', help='override the manifest root')
    p.add_argument('--frontend', choices=FRONTENDS)
    p.add_argument('--layers', type=int, choices=(4, 5))
    p.add_argument('--deterministic', action='store_true', default=None,
                   help='single-threaded batch preparation and no wall '
                        'times in epochs.csv')
    p.add_argument('--dry-run', action='store_true',
                   help='print the parameter count and exit')
    p.add_argument('--resume', help='last.ckpt of an interrupted run')
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('eval', help='score a checkpoint')
    p.add_argument('checkpoint')
    p.add_argument('--manifest', required=True)
    p.add_argument('--out', default='.', help='output directory')
    p.add_argument('--split', default='test', choices=('train', 'val', 'test'))
    p.add_argument('--data-root', help='override the manifest root')
    p.add_argument('--group-by-file', action='store_true',
                   help='majority vote over the chunks of each recording')
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('summarize', help='median and range over runs')
    p.add_argument('reports', nargs='+', help='evaluation report JSON files')
    p.add_argument('--model', help='row name (default: from the reports)')
    p.add_argument('--out', help='CSV to write')
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser('analyze', help='compare trained LEAF filters with '
                                       'their initialisation')
    p.add_argument('init', help='checkpoint before training (init.ckpt)')
    p.add_argument('trained', help='trained checkpoint (best.ckpt)')
    p.add_argument('--out', default='.', help='output directory')
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)
    try:
        return args.func(args)
    except LeafkitError as exc:
        print('leafkit %s: error: %s' % (args.command, exc), file=sys.stderr)
        return exc.exit_code
