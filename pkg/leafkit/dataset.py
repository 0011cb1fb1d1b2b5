# -*- coding: utf-8 -*-
# Copyright (c) 2023, The leafkit Developers
# All rights reserved.
#
# Redistribution and use in source and binary forms, with or without
# modification, are permitted under the terms of the BSD 3-clause license
# distributed with this package.
"""Corpus ingestion, splitting, chunking and the JSON-lines manifest.

The expected layout is ``<root>/<species_label>/<file>.wav``. A manifest
starts with one header line::

    {"format": "leafkit-manifest", "version": 1, "labels": [...], "root": ...}

followed by one JSON object per recording. Fields this version does not
know are kept and written back unchanged.
"""
import json
import logging
import os
import re
from collections import OrderedDict, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .audioreader import AudioReader
from .config import IngestConfig
from .dsp import TARGET_RATE
from .errors import (DataError, LeafkitError, ManifestError,
                     SampleRateError)

__all__ = ['SPLIT_PATTERN', 'STRATIFIED_FRACTIONS', 'RecordingEntry',
           'ChunkSpec', 'DatasetManifest', 'ingest', 'split', 'chunk',
           'render_chunk', 'write_manifest', 'load_manifest',
           'write_rejections', 'ChunkLoader']

log = logging.getLogger(__name__)

MANIFEST_FORMAT = 'leafkit-manifest'
MANIFEST_VERSION = 1

# position i of a species' duration-sorted recordings goes to
# SPLIT_PATTERN[i % 10]
SPLIT_PATTERN = ('train', 'train', 'val', 'test', 'train', 'train', 'val',
                 'test', 'train', 'train')
STRATIFIED_FRACTIONS = OrderedDict([('train', 0.627), ('val', 0.152),
                                    ('test', 0.221)])
SPLITS = ('train', 'val', 'test')

_EPS = 1e-9
_ENTRY_FIELDS = ('id', 'label', 'duration_s', 'split', 'chunks', 'sha256',
                 'source_path', 'offset_s', 'group', 'source', 'sample_rate')


@dataclass
class ChunkSpec(object):
    """One 5 s segment: ``start_s`` into the recording, ``wrap_s`` seconds
    completed from the recording start, ``looped`` for short files that are
    tiled."""
    recording_id: str
    start_s: float = 0.0
    wrap_s: float = 0.0
    looped: bool = False

    def to_dict(self):
        return OrderedDict([('start_s', round(self.start_s, 9)),
                            ('wrap_s', round(self.wrap_s, 9)),
                            ('looped', bool(self.looped))])


@dataclass
class RecordingEntry(object):
    id: str
    label: str
    duration_s: float
    source_path: str
    split: str = 'unassigned'
    chunks: list = field(default_factory=list)
    sha256: str = ''
    offset_s: float = 0.0
    group: str = None
    source: str = 'original'
    sample_rate: int = TARGET_RATE
    extra: dict = field(default_factory=OrderedDict)

    def __post_init__(self):
        if not self.duration_s > 0:
            raise DataError('%s: duration must be positive' % self.id)
        if self.group is None:
            self.group = self.id

    def to_dict(self):
        out = OrderedDict()
        out['id'] = self.id
        out['label'] = self.label
        out['duration_s'] = round(float(self.duration_s), 9)
        out['split'] = self.split
        out['chunks'] = [c.to_dict() for c in self.chunks]
        out['sha256'] = self.sha256
        out['source_path'] = self.source_path
        out['offset_s'] = round(float(self.offset_s), 9)
        out['group'] = self.group
        out['source'] = self.source
        out['sample_rate'] = int(self.sample_rate)
        for key, value in self.extra.items():
            out[key] = value
        return out

    @classmethod
    def from_dict(cls, data):
        extra = OrderedDict((k, v) for k, v in data.items()
                            if k not in _ENTRY_FIELDS)
        entry = cls(id=data['id'], label=data['label'],
                    duration_s=float(data['duration_s']),
                    source_path=data['source_path'],
                    split=data.get('split', 'unassigned'),
                    sha256=data.get('sha256', ''),
                    offset_s=float(data.get('offset_s', 0.0)),
                    group=data.get('group'),
                    source=data.get('source', 'original'),
                    sample_rate=int(data.get('sample_rate', TARGET_RATE)),
                    extra=extra)
        entry.chunks = [ChunkSpec(entry.id, float(c['start_s']),
                                  float(c.get('wrap_s', 0.0)),
                                  bool(c.get('looped', False)))
                        for c in data.get('chunks', [])]
        return entry


class DatasetManifest(object):
    """Recordings with their splits and chunks, plus the rejection list."""

    def __init__(self, entries=None, labels=None, root=None, rejections=None,
                 header_extra=None):
        self.entries = list(entries or [])
        self.labels = sorted(labels if labels is not None
                             else set(e.label for e in self.entries))
        self.root = root
        self.rejections = list(rejections or [])
        self.header_extra = OrderedDict(header_extra or {})

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def copy(self):
        entries = [RecordingEntry.from_dict(e.to_dict()) for e in self.entries]
        return DatasetManifest(entries, self.labels, self.root,
                               self.rejections, self.header_extra)

    def entry(self, recording_id):
        for e in self.entries:
            if e.id == recording_id:
                return e
        raise KeyError(recording_id)

    def by_split(self, name):
        return [e for e in self.entries if e.split == name]

    def chunks(self, name):
        """``(entry, ChunkSpec)`` pairs of one split in manifest order."""
        return [(e, c) for e in self.by_split(name) for c in e.chunks]

    def resolve(self, entry):
        if self.root is None or os.path.isabs(entry.source_path):
            return entry.source_path
        return os.path.join(self.root, entry.source_path)

    def summary(self):
        """Per split: file count, total seconds and chunk count."""
        out = OrderedDict()
        for name in SPLITS + ('unassigned',):
            entries = self.by_split(name)
            if not entries and name == 'unassigned':
                continue
            out[name] = OrderedDict([
                ('files', len(entries)),
                ('seconds', round(sum(e.duration_s for e in entries), 6)),
                ('chunks', sum(len(e.chunks) for e in entries)),
            ])
        return out

    def validate(self):
        """Checks unique ids and that chunks belong to their recording."""
        seen = set()
        for e in self.entries:
            if e.id in seen:
                raise ManifestError('duplicate recording id %s' % e.id)
            seen.add(e.id)
            if e.label not in self.labels:
                raise ManifestError('%s: label %s missing from header'
                                    % (e.id, e.label))
            for c in e.chunks:
                if c.recording_id != e.id:
                    raise ManifestError('%s: foreign chunk %s'
                                        % (e.id, c.recording_id))
        return self


def chunk(recording_id, duration, clip_s=5.0):
    """Cuts a recording into ``clip_s`` chunks.

    Shorter recordings give one looped chunk. Longer ones give windows at
    ``0, clip/4, clip/2, ...`` while they fit, then one wrapped chunk at the
    next start if at least ``clip/4`` remains. A recording of exactly
    ``clip_s`` is a single plain chunk.
    """
    if not duration > 0:
        raise DataError('%s: duration must be positive' % recording_id)
    hop = clip_s / 4.0
    if duration < clip_s - _EPS:
        return [ChunkSpec(recording_id, 0.0, clip_s - duration, True)]
    specs = []
    k = 0
    while k * hop + clip_s <= duration + _EPS:
        specs.append(ChunkSpec(recording_id, k * hop))
        k += 1
    start = k * hop
    tail = duration - start
    if duration > clip_s + _EPS and tail >= hop - _EPS:
        specs.append(ChunkSpec(recording_id, start, clip_s - tail))
    return specs


def render_chunk(samples, spec, n_samples, sample_rate=TARGET_RATE):
    """Realises ``spec`` on the recording ``samples``; always returns
    exactly ``n_samples`` values."""
    samples = np.asarray(samples)
    if len(samples) == 0:
        raise DataError('%s: empty recording' % spec.recording_id)
    if spec.looped or len(samples) < n_samples:
        return np.resize(samples, n_samples)
    start = min(int(round(spec.start_s * sample_rate)), len(samples) - 1)
    segment = samples[start:start + n_samples]
    if len(segment) < n_samples:
        segment = np.concatenate((segment,
                                  samples[:n_samples - len(segment)]))
    return segment


def _probe(path, label, root, cfg):
    """Returns ``(entry, None)`` or ``(None, reason)`` for one file."""
    if not path.lower().endswith('.wav'):
        return None, 'not-wav'
    try:
        with AudioReader(path) as f:
            if f.getFormat() != 'WAV':
                return None, 'not-wav'
            rate = f.getSampleRate()
            try:
                f.checkRate()
            except SampleRateError:
                return None, 'low-sample-rate'
            if f.getNSamples() == 0:
                return None, 'empty'
            duration = f.getFileDuration()
            digest = f.payloadDigest()
    except LeafkitError:
        return None, 'unreadable'
    offset = 0.0
    if cfg.trim_last_seconds is not None and duration > cfg.trim_last_seconds:
        offset = duration - cfg.trim_last_seconds
        duration = cfg.trim_last_seconds
    stem = os.path.splitext(os.path.basename(path))[0]
    group = None
    if cfg.group_regex:
        match = re.match(cfg.group_regex, stem)
        if match:
            group = '%s/%s' % (label, match.group(1) if match.groups()
                               else match.group(0))
    entry = RecordingEntry(id='%s/%s' % (label, stem), label=label,
                           duration_s=duration,
                           source_path=os.path.relpath(path, root),
                           sha256=digest, offset_s=offset, group=group,
                           sample_rate=rate)
    return entry, None


def ingest(directory, cfg=None, clip_s=5.0):
    """Scans ``directory`` and returns an unsplit, chunked manifest.

    Rejected files are logged and listed in ``manifest.rejections`` as
    ``(path, reason)``; reasons are ``not-wav``, ``low-sample-rate``,
    ``empty``, ``unreadable``, ``duplicate``, ``duplicate-across-labels``
    and ``too-few-files``.
    """
    cfg = cfg or IngestConfig()
    root = os.path.abspath(str(directory))
    if not os.path.isdir(root):
        raise DataError('data root %s is not a directory' % root)
    jobs = []
    for label in sorted(os.listdir(root)):
        folder = os.path.join(root, label)
        if not os.path.isdir(folder) or label.startswith('.'):
            continue
        files = sorted(f for f in os.listdir(folder)
                       if os.path.isfile(os.path.join(folder, f))
                       and not f.startswith('.'))
        if not files:
            raise DataError('label folder %s is empty' % folder)
        jobs.extend((os.path.join(folder, f), label) for f in files)

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        results = list(pool.map(lambda job: _probe(job[0], job[1], root, cfg),
                                jobs))

    rejections = []
    entries = []
    for (path, _), (entry, reason) in zip(jobs, results):
        if entry is None:
            rejections.append((path, reason))
        else:
            entries.append(entry)

    by_digest = defaultdict(list)
    for e in entries:
        by_digest[e.sha256].append(e)
    dropped = set()
    for digest, same in by_digest.items():
        if len(same) < 2:
            continue
        if len(set(e.label for e in same)) > 1:
            log.warning('identical audio under labels %s: excluding %s',
                        ', '.join(sorted(set(e.label for e in same))),
                        ', '.join(e.id for e in same))
            for e in same:
                dropped.add(e.id)
                rejections.append((os.path.join(root, e.source_path),
                                   'duplicate-across-labels'))
        else:
            for e in same[1:]:
                dropped.add(e.id)
                rejections.append((os.path.join(root, e.source_path),
                                   'duplicate'))
    entries = [e for e in entries if e.id not in dropped]

    counts = defaultdict(int)
    for e in entries:
        counts[e.label] += 1
    kept = []
    for e in entries:
        if counts[e.label] < cfg.min_files_per_species:
            rejections.append((os.path.join(root, e.source_path),
                               'too-few-files'))
        else:
            kept.append(e)

    for path, reason in rejections:
        log.warning('rejected %s: %s', path, reason)
    if not kept:
        raise DataError('no valid recordings under %s' % root)

    ids = set()
    for e in kept:
        if e.id in ids:
            previous, e.id = e.id, e.source_path.replace(os.sep, '/')
            if e.group == previous:
                e.group = e.id
        ids.add(e.id)
        e.chunks = chunk(e.id, e.duration_s, clip_s)
    kept.sort(key=lambda e: e.id)
    rejections.sort()
    log.info('ingested %d recordings of %d species, rejected %d files',
             len(kept), len(set(e.label for e in kept)), len(rejections))
    return DatasetManifest(kept, root=root, rejections=rejections)


def _largest_remainder(n, fractions):
    raw = [n * f for f in fractions]
    counts = [int(np.floor(r)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:n - sum(counts)]:
        counts[i] += 1
    if n >= len(counts):
        while min(counts) == 0:
            counts[counts.index(max(counts))] -= 1
            counts[counts.index(0)] += 1
    return counts


def _units(entries):
    """Groups sorted by total duration descending, ties by group id."""
    groups = OrderedDict()
    for e in sorted(entries, key=lambda e: e.id):
        groups.setdefault(e.group, []).append(e)
    return sorted(groups.items(),
                  key=lambda item: (-sum(e.duration_s for e in item[1]),
                                    item[0]))


def split(manifest, scheme='pattern'):
    """Assigns train/val/test per species; returns a new manifest.

    ``pattern`` walks each species' recordings (longest first) through
    ``SPLIT_PATTERN``. ``stratified`` fixes per-species quotas of
    62.7/15.2/22.1 percent by largest remainder (at least one recording per
    subset when possible) and fills them in pattern order. Snippets of one
    original recording share a group and always land together.
    """
    if scheme not in ('pattern', 'stratified'):
        raise DataError('unknown split scheme %r' % (scheme,))
    out = manifest.copy()
    by_label = defaultdict(list)
    for e in out.entries:
        if e.source == 'augmented':
            continue
        by_label[e.label].append(e)
    for label in sorted(by_label):
        units = _units(by_label[label])
        if scheme == 'pattern':
            for i, (_, members) in enumerate(units):
                for e in members:
                    e.split = SPLIT_PATTERN[i % len(SPLIT_PATTERN)]
            continue
        quota = dict(zip(STRATIFIED_FRACTIONS,
                         _largest_remainder(len(units),
                                            list(STRATIFIED_FRACTIONS.values()))))
        pos = 0
        for _, members in units:
            while quota[SPLIT_PATTERN[pos % len(SPLIT_PATTERN)]] == 0:
                pos += 1
            name = SPLIT_PATTERN[pos % len(SPLIT_PATTERN)]
            quota[name] -= 1
            pos += 1
            for e in members:
                e.split = name
    for e in out.entries:
        if e.source == 'augmented':
            e.split = 'train'
    log.info('split (%s): %s', scheme,
             ', '.join('%s=%d' % (k, v['files'])
                       for k, v in out.summary().items()))
    return out


def write_manifest(manifest, path):
    header = OrderedDict([('format', MANIFEST_FORMAT),
                          ('version', MANIFEST_VERSION),
                          ('labels', list(manifest.labels)),
                          ('root', manifest.root)])
    for key, value in manifest.header_extra.items():
        header[key] = value
    try:
        with open(path, 'w') as handle:
            handle.write(json.dumps(header) + '\n')
            for e in manifest.entries:
                handle.write(json.dumps(e.to_dict()) + '\n')
    except (IOError, OSError) as exc:
        raise ManifestError('cannot write manifest %s: %s' % (path, exc))


def load_manifest(path):
    """Parses a manifest; errors name the offending line."""
    try:
        with open(path, 'r') as handle:
            lines = handle.read().split('\n')
    except (IOError, OSError) as exc:
        raise ManifestError('cannot read manifest %s: %s' % (path, exc))
    if lines and lines[-1] == '':
        lines.pop()
    if not lines:
        raise ManifestError('%s: empty manifest' % path)
    records = []
    for number, line in enumerate(lines, 1):
        try:
            records.append(json.loads(line, object_pairs_hook=OrderedDict))
        except ValueError as exc:
            raise ManifestError('%s:%d: cannot parse line (%s)'
                                % (path, number, exc))
    header = records[0]
    if not isinstance(header, dict) or header.get('format') != MANIFEST_FORMAT:
        raise ManifestError('%s:1: not a leafkit manifest header' % path)
    if header.get('version') != MANIFEST_VERSION:
        raise ManifestError('%s:1: manifest version %r, expected %d'
                            % (path, header.get('version'), MANIFEST_VERSION))
    entries = []
    for number, record in enumerate(records[1:], 2):
        try:
            entries.append(RecordingEntry.from_dict(record))
        except (KeyError, TypeError, ValueError, DataError) as exc:
            raise ManifestError('%s:%d: invalid recording (%s)'
                                % (path, number, exc))
    extra = OrderedDict((k, v) for k, v in header.items()
                        if k not in ('format', 'version', 'labels', 'root'))
    manifest = DatasetManifest(entries, header.get('labels'),
                               header.get('root'), header_extra=extra)
    try:
        return manifest.validate()
    except ManifestError as exc:
        raise ManifestError('%s: %s' % (path, exc))


def write_rejections(manifest, path):
    """One ``path<TAB>reason`` line per excluded file."""
    with open(path, 'w') as handle:
        for file_path, reason in manifest.rejections:
            handle.write('%s\t%s\n' % (file_path, reason))


class ChunkLoader(object):
    """Decodes recordings (mono, 44.1 kHz) and renders their chunks.

    The most recently used recordings are cached; a loader is not shared
    between threads.
    """

    def __init__(self, manifest, n_samples, cache_size=32):
        self.manifest = manifest
        self.n_samples = int(n_samples)
        self.cache_size = cache_size
        self._cache = OrderedDict()

    def recording(self, entry):
        cached = self._cache.pop(entry.id, None)
        if cached is None:
            with AudioReader(self.manifest.resolve(entry)) as f:
                cached = f.readWaveform(offset_s=entry.offset_s,
                                        duration_s=entry.duration_s
                                        if entry.offset_s else None).samples
        self._cache[entry.id] = cached
        while len(self._cache) > self.cache_size:
            self._cache.popitem(last=False)
        return cached

    def load(self, entry, spec):
        return render_chunk(self.recording(entry), spec,
                            self.n_samples).astype(np.float32)
