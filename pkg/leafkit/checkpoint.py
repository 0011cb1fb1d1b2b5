# -*- coding: utf-8 -*-
# Copyright (c) 2023, The leafkit Developers
# All rights reserved.
#
# Redistribution and use in source and binary forms, with or without
# modification, are permitted under the terms of the BSD 3-clause license
# distributed with this package.
"""Binary checkpoint files.

Layout, all integers little-endian::

    b"LEAFCKPT"                      magic
    u32 version                      currently 1
    u32 n, n bytes                   UTF-8 JSON header
    u32 count                        number of tensors
    count x:
        u16 n, n bytes               tensor name (UTF-8)
        u8  ndim
        ndim x u32                   dimensions
        float32 payload              prod(dims) values

The JSON header carries the run configuration snapshot, label list, epoch
counters, the best validation loss and random stream states. Tensors are
named ``backend.*``, ``frontend.*`` and ``adam.m.*`` / ``adam.v.*``.
"""
import json
import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, ShapeMismatch

__all__ = ['MAGIC', 'VERSION', 'Checkpoint', 'CheckpointWriter',
           'CheckpointReader', 'save_checkpoint', 'load_checkpoint',
           'capture', 'restore']

log = logging.getLogger(__name__)

MAGIC = b'LEAFCKPT'
VERSION = 1


@dataclass
class Checkpoint(object):
    tensors: OrderedDict = field(default_factory=OrderedDict)
    config: dict = field(default_factory=dict)
    labels: list = field(default_factory=list)
    epoch: int = 0
    best_val_loss: float = None
    rng_state: dict = None
    optimizer_step: int = 0
    meta: dict = field(default_factory=dict)

    def header(self):
        return OrderedDict([
            ('config', self.config),
            ('labels', list(self.labels)),
            ('epoch', int(self.epoch)),
            ('best_val_loss', None if self.best_val_loss is None
             else float(self.best_val_loss)),
            ('rng_state', self.rng_state),
            ('optimizer_step', int(self.optimizer_step)),
            ('meta', self.meta),
        ])

    @property
    def frontend(self):
        return self.config.get('train', {}).get('frontend', 'mel')

    def group(self, prefix):
        """Tensors whose name starts with ``prefix``, prefix stripped."""
        return OrderedDict((name[len(prefix):], value)
                           for name, value in self.tensors.items()
                           if name.startswith(prefix))


class CheckpointWriter(object):
    """Streams a checkpoint to disk; tensors are cast to float32."""

    def __init__(self, file_name):
        self.path = str(file_name)
        self.header = {}
        self.tensors = OrderedDict()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, ex_tb):
        if exc_type is None:
            self.close()

    def setHeader(self, header):
        self.header = header

    def writeTensor(self, name, values):
        values = np.asarray(values)
        if values.ndim > 255:
            raise ShapeMismatch('too many dimensions for %s' % name)
        self.tensors[name] = values

    def close(self):
        header = json.dumps(self.header, sort_keys=False).encode('utf-8')
        try:
            with open(self.path, 'wb') as handle:
                handle.write(MAGIC)
                handle.write(struct.pack('<II', VERSION, len(header)))
                handle.write(header)
                handle.write(struct.pack('<I', len(self.tensors)))
                for name, values in self.tensors.items():
                    encoded = name.encode('utf-8')
                    handle.write(struct.pack('<H', len(encoded)))
                    handle.write(encoded)
                    handle.write(struct.pack('<B', values.ndim))
                    handle.write(struct.pack('<%dI' % values.ndim,
                                             *values.shape))
                    handle.write(np.ascontiguousarray(values,
                                                      dtype='<f4').tobytes())
        except (IOError, OSError) as exc:
            raise CheckpointError('cannot write checkpoint %s: %s'
                                  % (self.path, exc))


class CheckpointReader(object):
    """Parses a checkpoint file completely on open."""

    def __init__(self, file_name):
        self.path = str(file_name)
        try:
            with open(self.path, 'rb') as handle:
                self._data = handle.read()
        except (IOError, OSError) as exc:
            raise CheckpointError('cannot read checkpoint %s: %s'
                                  % (self.path, exc))
        self._pos = 0
        self._parse()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, ex_tb):
        self._data = None

    def _take(self, n):
        if self._pos + n > len(self._data):
            raise CheckpointError('%s: truncated checkpoint' % self.path)
        chunk = self._data[self._pos:self._pos + n]
        self._pos += n
        return chunk

    def _unpack(self, fmt):
        return struct.unpack(fmt, self._take(struct.calcsize(fmt)))

    def _parse(self):
        if self._take(len(MAGIC)) != MAGIC:
            raise CheckpointError('%s: not a leafkit checkpoint (bad magic)'
                                  % self.path)
        version, header_len = self._unpack('<II')
        if version != VERSION:
            raise CheckpointError('%s: checkpoint version %d, expected %d'
                                  % (self.path, version, VERSION))
        try:
            self.header = json.loads(self._take(header_len).decode('utf-8'),
                                     object_pairs_hook=OrderedDict)
        except ValueError as exc:
            raise CheckpointError('%s: corrupt header (%s)' % (self.path, exc))
        count, = self._unpack('<I')
        self.tensors = OrderedDict()
        for _ in range(count):
            name_len, = self._unpack('<H')
            name = self._take(name_len).decode('utf-8')
            ndim, = self._unpack('<B')
            shape = self._unpack('<%dI' % ndim) if ndim else ()
            size = int(np.prod(shape)) if shape else 1
            payload = self._take(4 * size)
            self.tensors[name] = np.frombuffer(payload, dtype='<f4').astype(
                np.float32).reshape(shape)
        if self._pos != len(self._data):
            raise CheckpointError('%s: trailing bytes after last tensor'
                                  % self.path)

    def getHeader(self):
        return self.header

    def getTensorNames(self):
        return list(self.tensors)

    def readTensor(self, name):
        try:
            return self.tensors[name]
        except KeyError:
            raise CheckpointError('%s: no tensor named %r' % (self.path, name))


def save_checkpoint(ckpt, path):
    with CheckpointWriter(path) as writer:
        writer.setHeader(ckpt.header())
        for name, values in ckpt.tensors.items():
            writer.writeTensor(name, values)
    log.info('saved checkpoint %s (epoch %d)', path, ckpt.epoch)


def load_checkpoint(path):
    reader = CheckpointReader(path)
    header = reader.getHeader()
    try:
        return Checkpoint(tensors=reader.tensors,
                          config=header['config'],
                          labels=list(header['labels']),
                          epoch=int(header['epoch']),
                          best_val_loss=header.get('best_val_loss'),
                          rng_state=header.get('rng_state'),
                          optimizer_step=int(header.get('optimizer_step', 0)),
                          meta=header.get('meta') or {})
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError('%s: incomplete header (%s)' % (path, exc))


def capture(model, frontend=None, adam=None, **fields):
    """Snapshots model, frontend and optimizer state into a Checkpoint."""
    tensors = OrderedDict()
    for name, tensor in model.parameters().items():
        tensors[name] = tensor.values.copy()
    for name, values in model.buffers().items():
        tensors[name] = np.array(values, copy=True)
    if frontend is not None:
        for name, tensor in frontend.named_tensors().items():
            tensors[name] = tensor.values.copy()
    if adam is not None:
        for name in adam.m:
            tensors['adam.m.' + name] = adam.m[name].copy()
            tensors['adam.v.' + name] = adam.v[name].copy()
        fields.setdefault('optimizer_step', adam.step)
    meta = dict(fields.pop('meta', {}) or {})
    meta['bn_updates'] = model.stats_updates()
    return Checkpoint(tensors=tensors, meta=meta, **fields)


def _assign(tensor, values, name):
    if tensor.shape != values.shape:
        raise ShapeMismatch('%s: checkpoint shape %s does not match model '
                            'shape %s' % (name, values.shape, tensor.shape))
    tensor.values = np.array(values, dtype=tensor.dtype)


def restore(ckpt, model, frontend=None, adam=None):
    """Copies checkpoint tensors into ``model``/``frontend``/``adam``.

    Raises ShapeMismatch when a tensor does not fit, e.g. a 32-class head
    loaded into a 47-class model.
    """
    for name, tensor in model.parameters().items():
        if name not in ckpt.tensors:
            raise CheckpointError('checkpoint lacks tensor %s' % name)
        _assign(tensor, ckpt.tensors[name], name)
    model.load_buffers(ckpt.tensors, ckpt.meta.get('bn_updates'))
    if frontend is not None:
        for name, tensor in frontend.named_tensors().items():
            if name not in ckpt.tensors:
                raise CheckpointError('checkpoint lacks tensor %s' % name)
            _assign(tensor, ckpt.tensors[name], name)
    if adam is not None:
        adam.step = ckpt.optimizer_step
        adam.m.clear()
        adam.v.clear()
        for name in ckpt.group('adam.m.'):
            adam.m[name] = np.array(ckpt.tensors['adam.m.' + name])
            adam.v[name] = np.array(ckpt.tensors['adam.v.' + name])
