# -*- coding: utf-8 -*-
# Copyright (c) 2023, The leafkit Developers
"""Runs the mel versus LEAF comparison end to end.

    python reproduce.py <corpus> <work dir> [seeds]

prepares a manifest, trains each frontend once per seed, scores the test
split and prints the median and range of every metric per model. Expect
hours per run on a full corpus; results vary with the seed, so compare
medians and not single runs.
"""
from __future__ import division, print_function, absolute_import

import os
import sys

from leafkit.cli import main

MODELS = [('mel', 4), ('leaf', 4), ('mel', 5), ('leaf', 5)]


def run(argv):
    print('$ leafkit %s' % ' '.join(argv))
    code = main(argv)
    if code != 0:
        sys.exit(code)


if __name__ == '__main__':
    corpus, work = sys.argv[1], sys.argv[2]
    seeds = range(1, int(sys.argv[3]) + 1) if len(sys.argv) > 3 else (1, 2, 3)
    manifest = os.path.join(work, 'manifest.jsonl')
    run(['-v', 'prepare', '--data-root', corpus, '--manifest', manifest])
    for frontend, layers in MODELS:
        reports = []
        for seed in seeds:
            out = os.path.join(work, '%s-%d-s%d' % (frontend, layers, seed))
            run(['-v', 'train', '--manifest', manifest, '--out', out,
                 '--frontend', frontend, '--layers', str(layers),
                 '--seed', str(seed)])
            run(['eval', os.path.join(out, 'best.ckpt'), '--manifest',
                 manifest, '--out', out])
            reports.append(os.path.join(out, 'test_report.json'))
        run(['summarize'] + reports + ['--out', os.path.join(
            work, 'summary-%s-%d.csv' % (frontend, layers))])
