# -*- coding: utf-8 -*-
# Copyright (c) 2023, The leafkit Developers
# All rights reserved.
#
# Redistribution and use in source and binary forms, with or without
# modification, are permitted under the terms of the BSD 3-clause license
# distributed with this package.
"""Reverse-mode automatic differentiation over numpy arrays.

Only the operations needed by the two frontends and the classifier are
provided. Gradient checks run in float64, training runs in float32; the
dtype of a result follows its inputs.
"""
import logging
from collections import OrderedDict
from contextlib import contextmanager

import numpy as np
from scipy import signal

from .errors import LabelMismatch, ModeError, NumericError, ShapeMismatch

__all__ = ['Tensor', 'ComputationRecord', 'no_grad', 'is_grad_enabled',
           'add', 'multiply', 'divide', 'power', 'exp', 'log', 'sqrt', 'cos',
           'sin', 'matmul', 'concat', 'relu', 'conv1d', 'conv2d',
           'RunningStats', 'batchnorm2d', 'dropout', 'adaptive_avg_pool_to_1x1',
           'softmax_cross_entropy', 'ema', 'linear', 'AdamState', 'adam_step',
           'GradCheckReport', 'gradient_check']

logger = logging.getLogger(__name__)

_grad_enabled = [True]

# kernels at least this long go through FFT convolution
_FFT_MIN_KERNEL = 32


@contextmanager
def no_grad():
    """Disables graph recording inside the block."""
    previous = _grad_enabled[0]
    _grad_enabled[0] = False
    try:
        yield
    finally:
        _grad_enabled[0] = previous


def is_grad_enabled():
    return _grad_enabled[0]


def _as_array(values, dtype=None):
    arr = np.asarray(values, dtype=dtype)
    if dtype is None and arr.dtype.kind != 'f':
        arr = arr.astype(np.float64)
    return arr


class Tensor(object):
    """An array with an optional gradient and the op that produced it."""

    # make ``ndarray <op> Tensor`` defer to the Tensor operators
    __array_ufunc__ = None

    def __init__(self, values, requires_grad=False, dtype=None, name=None):
        self.values = _as_array(values, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None
        self._op = 'leaf'

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def size(self):
        return self.values.size

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.values

    def detach(self):
        return Tensor(self.values, dtype=self.values.dtype, name=self.name)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return 'Tensor(shape=%s, dtype=%s, op=%s, requires_grad=%s)' % (
            self.shape, self.dtype, self._op, self.requires_grad)

    def __len__(self):
        return self.shape[0]

    def backward(self, grad=None):
        """Accumulates d(self)/d(leaf) into ``leaf.grad`` for every reachable
        leaf that requires a gradient.

        ``grad`` seeds the output gradient and is required unless the
        tensor holds a single value.
        """
        if grad is None:
            if self.size != 1:
                raise ShapeMismatch('backward() without a seed needs a scalar, '
                                    'got shape %s' % (self.shape,))
            grad = np.ones_like(self.values)
        else:
            grad = np.asarray(grad, dtype=self.dtype)
            if grad.shape != self.shape:
                raise ShapeMismatch('seed gradient shape %s does not match %s'
                                    % (grad.shape, self.shape))
        pending = {id(self): grad}
        for node in reversed(ComputationRecord(self).nodes):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    if not np.all(np.isfinite(g)):
                        raise NumericError('non-finite gradient for %s'
                                           % (node.name or 'tensor'))
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg

    # operators
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, negative(other))

    def __rsub__(self, other):
        return add(other, negative(self))

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return negative(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __rpow__(self, base):
        return power(base, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log_(self)

    def sqrt(self):
        return sqrt(self)

    def cos(self):
        return cos(self)

    def sin(self):
        return sin(self)

    def relu(self):
        return relu(self)


class ComputationRecord(object):
    """Topologically ordered view of the graph that produced ``root``.

    Parents always precede their children in ``nodes``, so walking the
    list backwards visits every operation exactly once after all of its
    consumers.
    """

    def __init__(self, root):
        self.root = root
        self.nodes = self._order(root)

    @staticmethod
    def _order(root):
        order = []
        visited = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def operations(self):
        """Returns ``(op, input ids, output id)`` tuples in forward order."""
        return [(n._op, [id(p) for p in n._parents], id(n))
                for n in self.nodes if n._backward is not None]

    def __len__(self):
        return len(self.operations())


def _wrap(value, like=None):
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype) if dtype is not None
                  else value)


def _result(values, parents, backward, op):
    if not np.all(np.isfinite(values)):
        raise NumericError('non-finite values produced by %s' % op)
    out = Tensor(values, dtype=values.dtype)
    if _grad_enabled[0] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    return out


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch('%s: shapes %s and %s do not broadcast'
                            % (op, a.shape, b.shape))


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, _wrap(b, a)
    b = _wrap(b)
    return _wrap(a, b), b


# elementwise

def add(a, b):
    a, b = _pair(a, b)
    _broadcast_shape(a, b, 'add')

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _result(a.values + b.values, (a, b), backward, 'add')


def negative(a):
    a = _wrap(a)
    return _result(-a.values, (a,), lambda g: (-g,), 'neg')


def multiply(a, b):
    a, b = _pair(a, b)
    _broadcast_shape(a, b, 'multiply')

    def backward(g):
        return (_unbroadcast(g * b.values, a.shape),
                _unbroadcast(g * a.values, b.shape))
    return _result(a.values * b.values, (a, b), backward, 'mul')


def divide(a, b):
    a, b = _pair(a, b)
    _broadcast_shape(a, b, 'divide')
    if np.any(b.values == 0):
        raise NumericError('division by zero')
    out = a.values / b.values

    def backward(g):
        return (_unbroadcast(g / b.values, a.shape),
                _unbroadcast(-g * out / b.values, b.shape))
    return _result(out, (a, b), backward, 'div')


def power(base, exponent):
    """Elementwise ``base ** exponent``; the exponent may be a tensor, in
    which case the base must be positive wherever a gradient flows to it.
    """
    if not isinstance(exponent, Tensor):
        base = _wrap(base)
        k = float(exponent)
        out = base.values ** k
        if k < 0 and np.any(base.values == 0):
            raise NumericError('zero raised to a negative power')

        def backward_scalar(g):
            return (g * k * base.values ** (k - 1.0),)
        return _result(out, (base,), backward_scalar, 'pow')

    base, exponent = _pair(base, exponent)
    _broadcast_shape(base, exponent, 'power')
    if exponent.requires_grad and np.any(base.values <= 0):
        raise NumericError('power with a trainable exponent needs a '
                           'positive base')
    out = base.values ** exponent.values

    def backward(g):
        gb = g * exponent.values * base.values ** (exponent.values - 1.0)
        ge = None
        if exponent.requires_grad:
            ge = _unbroadcast(g * out * np.log(base.values), exponent.shape)
        return _unbroadcast(gb, base.shape), ge
    return _result(out, (base, exponent), backward, 'pow')


def exp(a):
    a = _wrap(a)
    out = np.exp(a.values)
    return _result(out, (a,), lambda g: (g * out,), 'exp')


def log_(a):
    a = _wrap(a)
    if np.any(a.values <= 0):
        raise NumericError('log of a non-positive value')
    return _result(np.log(a.values), (a,), lambda g: (g / a.values,), 'log')


log = log_


def sqrt(a):
    a = _wrap(a)
    if np.any(a.values < 0):
        raise NumericError('sqrt of a negative value')
    out = np.sqrt(a.values)
    return _result(out, (a,), lambda g: (g * 0.5 / out,), 'sqrt')


def cos(a):
    a = _wrap(a)
    return _result(np.cos(a.values), (a,),
                   lambda g: (-g * np.sin(a.values),), 'cos')


def sin(a):
    a = _wrap(a)
    return _result(np.sin(a.values), (a,),
                   lambda g: (g * np.cos(a.values),), 'sin')


def relu(a):
    a = _wrap(a)
    mask = a.values > 0
    return _result(a.values * mask, (a,), lambda g: (g * mask,), 'relu')


# reductions and shape

def tsum(a, axis=None, keepdims=False):
    a = _wrap(a)
    out = np.asarray(a.values.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _result(out, (a,), backward, 'sum')


def mean(a, axis=None, keepdims=False):
    a = _wrap(a)
    count = a.size if axis is None else int(np.prod(
        [a.shape[i] for i in np.atleast_1d(axis)]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape):
    a = _wrap(a)
    try:
        out = a.values.reshape(shape)
    except ValueError:
        raise ShapeMismatch('cannot reshape %s into %s' % (a.shape, shape))
    return _result(out, (a,), lambda g: (g.reshape(a.shape),), 'reshape')


def transpose(a, axes=None):
    a = _wrap(a)
    out = np.transpose(a.values, axes)
    inverse = None if axes is None else np.argsort(axes)
    return _result(out, (a,), lambda g: (np.transpose(g, inverse),),
                   'transpose')


def getitem(a, index):
    a = _wrap(a)
    out = np.array(a.values[index])

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(p, (slice, int, type(Ellipsis), type(None)))
                for p in parts)

    def backward(g):
        full = np.zeros_like(a.values)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)
    return _result(out, (a,), backward, 'getitem')


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    out = np.concatenate([t.values for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))
    return _result(out, tensors, backward, 'concat')


def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch('matmul needs at least 2-D operands')
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch('matmul inner dimensions differ: %s @ %s'
                            % (a.shape, b.shape))
    out = np.matmul(a.values, b.values)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.values, -1, -2))
        gb = np.matmul(np.swapaxes(a.values, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return _result(out, (a, b), backward, 'matmul')


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` for ``weight`` shaped [out, in]."""
    out = matmul(x, transpose(weight))
    if bias is not None:
        out = out + bias
    return out


# convolutions

def _padding_pair(padding):
    if isinstance(padding, (tuple, list)):
        left, right = padding
    else:
        left = right = padding
    if left < 0 or right < 0:
        raise ShapeMismatch('padding must be non-negative')
    return int(left), int(right)


def conv1d(x, kernels, stride=1, padding=0, groups=1):
    """Strided 1-D cross-correlation.

    Parameters
    ----------
    x : Tensor
        input shaped [batch, chan_in, time]
    kernels : Tensor
        [chan_out, chan_in / groups, klen]
    stride : int
    padding : int or (int, int)
        zero padding applied to both ends, or (left, right)
    groups : int
        channel groups; ``groups == chan_in`` gives a depthwise filter

    Returns
    -------
    Tensor shaped [batch, chan_out, floor((time + pads - klen) / stride) + 1]
    """
    x, kernels = _pair(x, kernels)
    if x.ndim != 3 or kernels.ndim != 3:
        raise ShapeMismatch('conv1d expects 3-D input and kernels')
    if stride < 1:
        raise ShapeMismatch('stride must be >= 1')
    batch, chan_in, length = x.shape
    chan_out, group_in, klen = kernels.shape
    if chan_in % groups or chan_out % groups or group_in != chan_in // groups:
        raise ShapeMismatch('channel counts %d -> %d do not fit %d groups'
                            % (chan_in, chan_out, groups))
    left, right = _padding_pair(padding)
    padded_len = length + left + right
    if klen > padded_len:
        raise ShapeMismatch('kernel of length %d longer than padded input %d'
                            % (klen, padded_len))
    frames = (padded_len - klen) // stride + 1
    xp = np.pad(x.values, ((0, 0), (0, 0), (left, right)))
    w = kernels.values

    if groups == 1 and stride == 1 and klen >= _FFT_MIN_KERNEL:
        out = signal.fftconvolve(xp[:, None, :, :], w[None, :, :, ::-1],
                                 mode='valid', axes=-1).sum(axis=2)

        def backward(g):
            gx = gw = None
            if x.requires_grad:
                gx = signal.fftconvolve(g[:, :, None, :], w[None, :, :, :],
                                        mode='full', axes=-1).sum(axis=1)
                gx = gx[:, :, left:left + length].astype(x.dtype)
            if kernels.requires_grad:
                gw = signal.fftconvolve(xp[:, None, :, :],
                                        g[:, :, None, ::-1],
                                        mode='valid', axes=-1).sum(axis=0)
                gw = gw.astype(kernels.dtype)
            return gx, gw
        return _result(out.astype(np.result_type(x.dtype, w.dtype)),
                       (x, kernels), backward, 'conv1d')

    group_out = chan_out // groups
    xg = xp.reshape(batch, groups, group_in, padded_len)
    wg = w.reshape(groups, group_out, group_in, klen)
    span = stride * (frames - 1) + 1
    out = np.zeros((batch, groups, group_out, frames),
                   dtype=np.result_type(xp.dtype, w.dtype))
    for k in range(klen):
        out += np.einsum('bgcf,goc->bgof', xg[..., k:k + span:stride],
                         wg[..., k])

    def backward_direct(g):
        gg = g.reshape(batch, groups, group_out, frames)
        gxp = np.zeros_like(xg) if x.requires_grad else None
        gw = np.zeros_like(wg) if kernels.requires_grad else None
        for k in range(klen):
            if gxp is not None:
                gxp[..., k:k + span:stride] += np.einsum('bgof,goc->bgcf', gg,
                                                         wg[..., k])
            if gw is not None:
                gw[..., k] = np.einsum('bgof,bgcf->goc', gg,
                                       xg[..., k:k + span:stride])
        gx = None
        if gxp is not None:
            gx = gxp.reshape(batch, chan_in,
                             padded_len)[:, :, left:left + length]
        return gx, None if gw is None else gw.reshape(w.shape)
    return _result(out.reshape(batch, chan_out, frames), (x, kernels),
                   backward_direct, 'conv1d')


def conv2d(x, kernels, stride=1, padding=0):
    """2-D cross-correlation of [batch, chan_in, h, w] with
    [chan_out, chan_in, kh, kw] kernels."""
    x, kernels = _pair(x, kernels)
    if x.ndim != 4 or kernels.ndim != 4:
        raise ShapeMismatch('conv2d expects 4-D input and kernels')
    sh, sw = (stride, stride) if np.isscalar(stride) else stride
    ph, pw = (padding, padding) if np.isscalar(padding) else padding
    if sh < 1 or sw < 1:
        raise ShapeMismatch('stride must be >= 1')
    batch, chan_in, height, width = x.shape
    chan_out, k_in, kh, kw = kernels.shape
    if k_in != chan_in:
        raise ShapeMismatch('kernels expect %d input channels, got %d'
                            % (k_in, chan_in))
    hp, wp = height + 2 * ph, width + 2 * pw
    if kh > hp or kw > wp:
        raise ShapeMismatch('kernel %dx%d larger than padded input %dx%d'
                            % (kh, kw, hp, wp))
    out_h = (hp - kh) // sh + 1
    out_w = (wp - kw) // sw + 1
    xp = np.pad(x.values, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    w = kernels.values
    span_h = sh * (out_h - 1) + 1
    span_w = sw * (out_w - 1) + 1
    out = np.zeros((chan_out, batch, out_h, out_w),
                   dtype=np.result_type(xp.dtype, w.dtype))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + span_h:sh, j:j + span_w:sw]
            out += np.tensordot(w[:, :, i, j], patch, axes=([1], [1]))

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w) if kernels.requires_grad else None
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + span_h:sh, j:j + span_w:sw] += np.transpose(
                    np.tensordot(w[:, :, i, j], g, axes=([0], [1])),
                    (1, 0, 2, 3))
                if gw is not None:
                    patch = xp[:, :, i:i + span_h:sh, j:j + span_w:sw]
                    gw[:, :, i, j] = np.tensordot(g, patch,
                                                  axes=([0, 2, 3], [0, 2, 3]))
        return gxp[:, :, ph:ph + height, pw:pw + width], gw
    return _result(np.ascontiguousarray(np.transpose(out, (1, 0, 2, 3))),
                   (x, kernels), backward, 'conv2d')


# normalisation and regularisation

class RunningStats(object):
    """Per-channel running mean/variance of a batch-norm layer."""

    def __init__(self, channels, dtype=np.float32, mean=None, var=None,
                 updates=0):
        self.mean = np.zeros(channels, dtype=dtype) if mean is None \
            else np.asarray(mean, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype) if var is None \
            else np.asarray(var, dtype=dtype)
        self.updates = int(updates)

    @property
    def initialized(self):
        return self.updates > 0

    def update(self, mean, var, momentum):
        self.mean = ((1.0 - momentum) * self.mean + momentum * mean).astype(
            self.mean.dtype)
        self.var = ((1.0 - momentum) * self.var + momentum * var).astype(
            self.var.dtype)
        self.updates += 1


def batchnorm2d(x, gamma, beta, running_stats, mode='train', epsilon=1e-5,
                momentum=0.1):
    """Batch normalisation over (batch, h, w) for each channel."""
    x = _wrap(x)
    gamma = _wrap(gamma, x)
    beta = _wrap(beta, x)
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeMismatch('gamma/beta need %d entries' % channels)
    axes = (0, 2, 3)
    shape = (1, channels, 1, 1)
    if mode == 'train':
        mu = x.values.mean(axis=axes)
        var = x.values.var(axis=axes)
        count = x.size // channels
        if _grad_enabled[0]:
            unbiased = var * count / max(count - 1, 1)
            running_stats.update(mu, unbiased, momentum)
    elif mode == 'eval':
        if not running_stats.initialized:
            raise ModeError('batch norm evaluated before any running '
                               'statistics update')
        mu = running_stats.mean.astype(x.dtype)
        var = running_stats.var.astype(x.dtype)
    else:
        raise ModeError('mode must be "train" or "eval", got %r' % mode)
    inv_std = 1.0 / np.sqrt(var + epsilon)
    xhat = (x.values - mu.reshape(shape)) * inv_std.reshape(shape)
    out = gamma.values.reshape(shape) * xhat + beta.values.reshape(shape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        dxhat = g * gamma.values.reshape(shape)
        if mode == 'train':
            n = x.size // channels
            gx = (inv_std.reshape(shape) / n) * (
                n * dxhat - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
        else:
            gx = dxhat * inv_std.reshape(shape)
        return gx, ggamma, gbeta
    return _result(out.astype(x.dtype), (x, gamma, beta), backward,
                   'batchnorm2d')


def dropout(x, rate, mode='train', rng=None):
    """Inverted dropout; identity in eval mode or for ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError('dropout rate must be in [0, 1), got %r' % rate)
    x = _wrap(x)
    if mode == 'eval' or rate == 0.0:
        return x
    if rng is None:
        raise ValueError('train-mode dropout needs an explicit rng stream')
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return _result(x.values * mask, (x,), lambda g: (g * mask,), 'dropout')


def adaptive_avg_pool_to_1x1(x):
    x = _wrap(x)
    if x.ndim != 4:
        raise ShapeMismatch('expected [batch, chan, h, w], got %s' % (x.shape,))
    return mean(x, axis=(2, 3), keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under
    ``softmax(logits)``."""
    logits = _wrap(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatch('logits %s do not match labels %s'
                            % (logits.shape, labels.shape))
    n_classes = logits.shape[1]
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise LabelMismatch('label out of range [0, %d)' % n_classes)
    z = logits.values - logits.values.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(len(labels))
    loss = np.mean(logsumexp - z[rows, labels])

    def backward(g):
        probs = np.exp(z - logsumexp[:, None])
        probs[rows, labels] -= 1.0
        return (g * probs / len(labels),)
    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), backward,
                   'softmax_cross_entropy')


def ema(x, smooth):
    """First-order smoother along the last axis, one coefficient per
    channel.

    ``M[t] = (1 - s) * M[t-1] + s * x[t]`` with ``M[0] = x[0]``; ``x`` is
    [..., channels, time] and ``smooth`` holds ``channels`` coefficients.
    """
    x = _wrap(x)
    smooth = _wrap(smooth, x)
    channels = x.shape[-2]
    if smooth.shape != (channels,):
        raise ShapeMismatch('need %d smoothing coefficients, got %s'
                            % (channels, smooth.shape))
    s = smooth.values
    out = np.empty_like(x.values)
    for c in range(channels):
        xc = x.values[..., c, :]
        zi = (1.0 - s[c]) * xc[..., :1]
        out[..., c, :], _ = signal.lfilter([s[c]], [1.0, s[c] - 1.0], xc,
                                           axis=-1, zi=zi)

    def backward(g):
        gx = np.empty_like(g)
        gs = np.zeros(channels, dtype=s.dtype) if smooth.requires_grad \
            else None
        for c in range(channels):
            adj = signal.lfilter([1.0], [1.0, s[c] - 1.0],
                                 g[..., c, ::-1], axis=-1)[..., ::-1]
            gx[..., c, :] = s[c] * adj
            gx[..., c, 0] = adj[..., 0]
            if gs is not None:
                innov = x.values[..., c, 1:] - out[..., c, :-1]
                gs[c] = np.sum(adj[..., 1:] * innov)
        return gx, gs
    return _result(out, (x, smooth), backward, 'ema')


# optimisation

class AdamState(object):
    """First/second moments keyed by parameter name, plus the step count."""

    def __init__(self):
        self.step = 0
        self.m = OrderedDict()
        self.v = OrderedDict()


def adam_step(params, grads, state, lr=1e-3, betas=(0.9, 0.999),
              epsilon=1e-8, l2_lambda=0.0):
    """One Adam update with coupled L2 regularisation.

    Parameters
    ----------
    params : mapping of name -> Tensor
        updated in place
    grads : mapping of name -> ndarray or None
        parameters with a ``None`` gradient are left untouched
    state : AdamState
    lr : float or mapping of name -> float
    l2_lambda : float
        added as ``l2_lambda * param`` to each gradient before the moment
        updates
    """
    beta1, beta2 = betas
    state.step += 1
    t = state.step
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        g = np.asarray(grad, dtype=param.dtype)
        if g.shape != param.shape:
            raise ShapeMismatch('gradient for %s has shape %s, expected %s'
                                % (name, g.shape, param.shape))
        if l2_lambda:
            g = g + l2_lambda * param.values
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(param.values)
            v = np.zeros_like(param.values)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        step_lr = lr[name] if isinstance(lr, dict) else lr
        param.values = (param.values - step_lr * m_hat
                        / (np.sqrt(v_hat) + epsilon)).astype(param.dtype)


# gradient checking

class GradCheckReport(object):

    def __init__(self, max_rel_err, max_abs_err, n_checked, tolerance, worst):
        self.max_rel_err = max_rel_err
        self.max_abs_err = max_abs_err
        self.n_checked = n_checked
        self.tolerance = tolerance
        self.worst = worst

    @property
    def passed(self):
        return self.max_rel_err < self.tolerance

    def __repr__(self):
        return ('GradCheckReport(max_rel_err=%.3g, max_abs_err=%.3g, '
                'n_checked=%d, passed=%s)' % (self.max_rel_err,
                                              self.max_abs_err,
                                              self.n_checked, self.passed))


def gradient_check(fn, inputs, tolerance=1e-4, step=1e-5, max_checks=None,
                   rng=None, floor=1e-2):
    """Compares analytic gradients of ``fn(*inputs)`` with central finite
    differences.

    ``fn`` must return a scalar tensor and be deterministic. Inputs are
    promoted to float64; the step for element ``x`` is ``step * (|x| + 1)``.
    When ``max_checks`` is given, that many elements per input are
    sampled with ``rng``.
    """
    inputs = [Tensor(np.array(t.values if isinstance(t, Tensor) else t,
                              dtype=np.float64), requires_grad=True)
              for t in inputs]
    out = fn(*inputs)
    if out.size != 1:
        raise ShapeMismatch('gradient_check needs a scalar function')
    out.backward()
    max_rel = 0.0
    max_abs = 0.0
    worst = None
    checked = 0
    for which, tensor in enumerate(inputs):
        analytic = tensor.grad if tensor.grad is not None \
            else np.zeros_like(tensor.values)
        flat = tensor.values.reshape(-1)
        positions = np.arange(flat.size)
        if max_checks is not None and flat.size > max_checks:
            rng = rng if rng is not None else np.random.default_rng(0)
            positions = rng.choice(flat.size, size=max_checks, replace=False)
        for pos in positions:
            original = flat[pos]
            h = step * (abs(original) + 1.0)
            with no_grad():
                flat[pos] = original + h
                up = float(fn(*inputs).values)
                flat[pos] = original - h
                down = float(fn(*inputs).values)
            flat[pos] = original
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError('non-finite value during finite '
                                   'differencing')
            numeric = (up - down) / (2.0 * h)
            exact = analytic.reshape(-1)[pos]
            abs_err = abs(exact - numeric)
            rel_err = abs_err / max(abs(exact), abs(numeric), floor)
            checked += 1
            max_abs = max(max_abs, abs_err)
            if rel_err > max_rel:
                max_rel = rel_err
                worst = (which, int(pos))
    report = GradCheckReport(max_rel, max_abs, checked, tolerance, worst)
    logger.debug('%r', report)
    return report
