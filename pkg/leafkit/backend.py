# -*- coding: utf-8 -*-
# Copyright (c) 2023, The leafkit Developers
# All rights reserved.
#
# Redistribution and use in source and binary forms, with or without
# modification, are permitted under the terms of the BSD 3-clause license
# distributed with this package.
"""Convolutional classifier consuming [batch, 1, n_filters, frames] maps.

Each block is conv -> relu -> batch norm; the blocks are followed by a
global average pool, dropout and one linear layer::

    conv1   1 ->   8  5x5  stride 2  pad 2
    conv2   8 ->  16  3x3  stride 2  pad 1
    conv3  16 ->  32  3x3  stride 2  pad 1
    conv4  32 ->  64  3x3  stride 2  pad 1
    conv5  64 -> 128  3x3  stride 2  pad 1   (five-layer variant)
    fc     64 or 128 -> n_classes
"""
import logging
from collections import OrderedDict

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .errors import ShapeMismatch

__all__ = ['ConvBlock', 'Model', 'build_model', 'model_forward',
           'count_parameters']

log = logging.getLogger(__name__)

# leaky-relu slope assumed by the conv weight init
_INIT_SLOPE = 0.1


def _kaiming_uniform(rng, shape, fan_in, a=_INIT_SLOPE, dtype=np.float32):
    gain = np.sqrt(2.0 / (1.0 + a ** 2))
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class ConvBlock(object):

    def __init__(self, name, chan_in, chan_out, kernel, stride, padding, rng,
                 momentum=0.1, epsilon=1e-5, dtype=np.float32):
        self.name = name
        self.stride = stride
        self.padding = padding
        self.momentum = momentum
        self.epsilon = epsilon
        fan_in = chan_in * kernel * kernel
        self.weight = T.Tensor(
            _kaiming_uniform(rng, (chan_out, chan_in, kernel, kernel), fan_in,
                             dtype=dtype), requires_grad=True)
        self.bias = T.Tensor(np.zeros(chan_out, dtype=dtype),
                             requires_grad=True)
        self.gamma = T.Tensor(np.ones(chan_out, dtype=dtype),
                              requires_grad=True)
        self.beta = T.Tensor(np.zeros(chan_out, dtype=dtype),
                             requires_grad=True)
        self.stats = T.RunningStats(chan_out, dtype=dtype)

    def parameters(self):
        return OrderedDict([
            ('%s.weight' % self.name, self.weight),
            ('%s.bias' % self.name, self.bias),
            ('%s.gamma' % self.name, self.gamma),
            ('%s.beta' % self.name, self.beta),
        ])

    def __call__(self, x, mode):
        out = T.conv2d(x, self.weight, stride=self.stride,
                       padding=self.padding)
        out = out + self.bias.reshape((1, -1, 1, 1))
        out = T.relu(out)
        return T.batchnorm2d(out, self.gamma, self.beta, self.stats, mode=mode,
                             epsilon=self.epsilon, momentum=self.momentum)


class Model(object):
    """Blocks, pooling, dropout and the linear head, parameters as Tensors.

    Parameter and buffer names are prefixed ``backend.`` so they can share
    a checkpoint with the ``frontend.`` tensors.
    """

    def __init__(self, cfg, blocks, fc_weight, fc_bias):
        self.cfg = cfg
        self.blocks = blocks
        self.fc_weight = fc_weight
        self.fc_bias = fc_bias

    @property
    def n_classes(self):
        return self.cfg.n_classes

    def parameters(self):
        params = OrderedDict()
        for block in self.blocks:
            for name, tensor in block.parameters().items():
                params['backend.' + name] = tensor
        params['backend.fc.weight'] = self.fc_weight
        params['backend.fc.bias'] = self.fc_bias
        return params

    def buffers(self):
        """Running batch-norm statistics as arrays."""
        out = OrderedDict()
        for block in self.blocks:
            out['backend.%s.running_mean' % block.name] = block.stats.mean
            out['backend.%s.running_var' % block.name] = block.stats.var
        return out

    def stats_updates(self):
        return dict((block.name, block.stats.updates) for block in self.blocks)

    def load_buffers(self, buffers, updates=None):
        updates = updates or {}
        for block in self.blocks:
            mean = buffers['backend.%s.running_mean' % block.name]
            var = buffers['backend.%s.running_var' % block.name]
            if mean.shape != block.stats.mean.shape:
                raise ShapeMismatch('running stats of %s have shape %s, '
                                    'expected %s' % (block.name, mean.shape,
                                                     block.stats.mean.shape))
            block.stats.mean = np.array(mean, dtype=block.stats.mean.dtype)
            block.stats.var = np.array(var, dtype=block.stats.var.dtype)
            block.stats.updates = int(updates.get(block.name, 1))

    def zero_grad(self):
        for tensor in self.parameters().values():
            tensor.zero_grad()


def build_model(cfg=None, rng=None):
    """Builds the classifier; identical ``rng`` streams give identical
    weights."""
    cfg = cfg or ModelConfig()
    if rng is None:
        raise ValueError('build_model needs an explicit rng stream')
    plan = cfg.channel_plan
    if len(plan) != cfg.n_conv_layers:
        raise ShapeMismatch('channel plan %s does not have %d layers'
                            % (plan, cfg.n_conv_layers))
    blocks = []
    chan_in = 1
    for i, chan_out in enumerate(plan):
        kernel, padding = (5, 2) if i == 0 else (3, 1)
        blocks.append(ConvBlock('conv%d' % (i + 1), chan_in, chan_out, kernel,
                                2, padding, rng, momentum=cfg.bn_momentum,
                                epsilon=cfg.bn_epsilon))
        chan_in = chan_out
    bound = 1.0 / np.sqrt(chan_in)
    fc_weight = T.Tensor(rng.uniform(-bound, bound, size=(cfg.n_classes,
                                                          chan_in))
                         .astype(np.float32), requires_grad=True)
    fc_bias = T.Tensor(rng.uniform(-bound, bound, size=cfg.n_classes)
                       .astype(np.float32), requires_grad=True)
    model = Model(cfg, blocks, fc_weight, fc_bias)
    log.debug('built %d-layer model with %d parameters', cfg.n_conv_layers,
              count_parameters(model))
    return model


def model_forward(m, x, mode='train', rng=None):
    """Logits [batch, n_classes] for features [batch, 1, n_filters, frames].

    ``rng`` drives the dropout mask and is required in train mode when the
    dropout rate is non-zero.
    """
    x = T._wrap(x, m.fc_weight)
    if x.ndim != 4 or x.shape[1] != 1:
        raise ShapeMismatch('expected [batch, 1, filters, frames], got %s'
                            % (x.shape,))
    out = x
    for block in m.blocks:
        out = block(out, mode)
    out = T.adaptive_avg_pool_to_1x1(out)
    out = out.reshape((out.shape[0], out.shape[1]))
    out = T.dropout(out, m.cfg.dropout_rate, mode=mode, rng=rng)
    return T.linear(out, m.fc_weight, m.fc_bias)


def count_parameters(m, frontend=None):
    """Number of trainable scalars in ``m`` plus an optional frontend
    (``LeafParams``) or any mapping of tensors."""
    tensors = list(m.parameters().values()) if m is not None else []
    if frontend is not None:
        extra = frontend.parameters() if hasattr(frontend, 'parameters') \
            else frontend
        tensors.extend(extra.values())
    return int(sum(t.size for t in tensors if t.requires_grad))
