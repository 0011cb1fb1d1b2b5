# -*- coding: utf-8 -*-
# Copyright (c) 2023, The leafkit Developers
# All rights reserved.
#
# Redistribution and use in source and binary forms, with or without
# modification, are permitted under the terms of the BSD 3-clause license
# distributed with this package.
"""Training loop with validation, early stopping and checkpoints.

One epoch shuffles the training clips, runs the batches through optional
online augmentation, the frontend and the classifier, takes an Adam step
and validates. A checkpoint is written whenever the validation loss
strictly decreases; after ``patience`` epochs without such a decrease the
run stops and the best state is restored.

Files written to the output directory::

    init.ckpt     state before the first step
    best.ckpt     state with the lowest validation loss
    last.ckpt     state after the latest epoch (for resuming)
    epochs.csv    epoch,train_loss,val_loss,val_acc,seconds
"""
import csv
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .augment import augment_batch, load_ir_bank
from .backend import build_model, count_parameters, model_forward
from .checkpoint import capture, load_checkpoint, restore, save_checkpoint
from .config import RunConfig
from .dataset import ChunkLoader
from .dsp import Waveform
from .errors import DataError, LabelMismatch, NumericError
from .frontend import (clamp_params, leaf_features, leaf_init, mel_frontend,
                       set_ablation)
from .rng import make_stream, restore_stream, stream_state

__all__ = ['EpochLog', 'EarlyStopping', 'ExampleSet', 'TrainResult',
           'build_frontend', 'compute_features', 'predict', 'validate',
           'fit', 'train', 'read_epoch_log', 'load_trained']

log = logging.getLogger(__name__)

EPOCH_FIELDS = ('epoch', 'train_loss', 'val_loss', 'val_acc', 'seconds')


@dataclass
class EpochLog(object):
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    wall_time: float = 0.0

    def as_row(self):
        return ['%d' % self.epoch, '%.8f' % self.train_loss,
                '%.8f' % self.val_loss, '%.6f' % self.val_accuracy,
                '%.3f' % self.wall_time]


def read_epoch_log(path):
    """Parses an ``epochs.csv`` file back into EpochLog records."""
    with open(path, 'r', newline='') as handle:
        rows = list(csv.DictReader(handle))
    return [EpochLog(int(r['epoch']), float(r['train_loss']),
                     float(r['val_loss']), float(r['val_acc']),
                     float(r['seconds'])) for r in rows]


def _write_epoch_log(path, logs):
    with open(path, 'w', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(EPOCH_FIELDS)
        for entry in logs:
            writer.writerow(entry.as_row())


class EarlyStopping(object):
    """Stops after ``patience`` consecutive epochs without a strictly lower
    validation loss."""

    def __init__(self, patience=8, best_loss=None, best_epoch=None,
                 bad_epochs=0):
        self.patience = patience
        self.best_loss = best_loss
        self.best_epoch = best_epoch
        self.bad_epochs = bad_epochs

    def step(self, epoch, val_loss):
        """Records one epoch; returns True when it improved on the best."""
        if self.best_loss is None or val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self):
        return self.bad_epochs >= self.patience

    def state(self):
        return dict(best_loss=self.best_loss, best_epoch=self.best_epoch,
                    bad_epochs=self.bad_epochs)


class ExampleSet(object):
    """Labelled clips, held in memory or rendered from a manifest on demand.

    ``keys`` name the source of every clip (the recording id for manifest
    sets) and drive file-level scoring.
    """

    def __init__(self, labels, keys, samples=None, pairs=None, loader=None):
        self.labels = np.asarray(labels, dtype=np.int64)
        self.keys = list(keys)
        self.samples = samples
        self.pairs = pairs
        self.loader = loader

    @classmethod
    def from_arrays(cls, samples, labels, keys=None):
        samples = np.asarray(samples, dtype=np.float32)
        if samples.ndim != 2 or len(samples) != len(labels):
            raise DataError('expected [clips, samples] and one label per clip')
        keys = keys if keys is not None else [str(i) for i in
                                              range(len(samples))]
        return cls(labels, keys, samples=samples)

    @classmethod
    def from_manifest(cls, manifest, split_name, n_samples, labels=None):
        """Every chunk of ``split_name``; ``labels`` fixes the class order
        (defaults to the manifest's)."""
        labels = list(labels if labels is not None else manifest.labels)
        index = dict((label, i) for i, label in enumerate(labels))
        pairs = manifest.chunks(split_name)
        missing = sorted(set(e.label for e, _ in pairs) - set(index))
        if missing:
            raise LabelMismatch('labels %s are not in the label set'
                                % ', '.join(missing))
        return cls([index[e.label] for e, _ in pairs],
                   [e.id for e, _ in pairs], pairs=pairs,
                   loader=ChunkLoader(manifest, n_samples))

    def __len__(self):
        return len(self.labels)

    def clips(self, indices):
        """float32 [len(indices), n_samples]"""
        if self.samples is not None:
            return self.samples[np.asarray(indices, dtype=np.int64)]
        return np.stack([self.loader.load(*self.pairs[i]) for i in indices])


@dataclass
class TrainResult(object):
    best: object
    logs: list = field(default_factory=list)
    model: object = None
    frontend: object = None
    stopped_early: bool = False


def build_frontend(run_cfg):
    """Mel-initialised LEAF parameters with the ablation flags of
    ``run_cfg.train.frontend``; None for the mel frontend."""
    if not run_cfg.train.is_leaf:
        return None
    fcfg = run_cfg.frontend
    params = leaf_init(fcfg.n_filters, fcfg.f_min, fcfg.f_max, fcfg)
    return set_ablation(params, run_cfg.train.ablation)


def compute_features(clips, frontend, cfg, workers=1):
    """Features of a batch as float32 [batch, 1, filters, frames], without
    a graph."""
    def one(x):
        if frontend is None:
            return mel_frontend(Waveform(x, cfg.sample_rate), cfg).values
        return leaf_features(x, frontend, cfg.hop).values[0]

    if frontend is not None:
        frontend.validate()
    with T.no_grad():
        if workers > 1 and len(clips) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                feats = list(pool.map(one, list(clips)))
        else:
            feats = [one(x) for x in clips]
    return np.stack(feats)[:, None].astype(np.float32)


def _batches(n, batch_size, order=None):
    order = np.arange(n) if order is None else order
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def predict(model, frontend, examples, cfg, batch_size=14, workers=1):
    """Eval-mode logits [len(examples), n_classes]."""
    if len(examples) == 0:
        raise DataError('cannot predict on an empty set')
    out = []
    with T.no_grad():
        for idx in _batches(len(examples), batch_size):
            feats = compute_features(examples.clips(idx), frontend, cfg,
                                     workers)
            out.append(model_forward(model, feats, mode='eval').values)
    return np.concatenate(out, axis=0)


def validate(model, frontend, examples, cfg, batch_size=14, workers=1):
    """Mean cross-entropy and chunk accuracy over ``examples``; no
    augmentation, no parameter or statistics change."""
    if len(examples) == 0:
        raise DataError('empty validation set')
    logits = predict(model, frontend, examples, cfg, batch_size, workers)
    with T.no_grad():
        loss = T.softmax_cross_entropy(T.Tensor(logits.astype(np.float64)),
                                       examples.labels)
    accuracy = float(np.mean(np.argmax(logits, axis=1) == examples.labels))
    return float(loss.values), accuracy


def _learning_rates(run_cfg, params):
    lr = run_cfg.train.lr
    if run_cfg.train.frontend_lr is None:
        return lr
    return dict((name, run_cfg.train.frontend_lr
                 if name.startswith('frontend.') else lr) for name in params)


def _train_step(model, frontend, clips, labels, run_cfg, adam, rng, workers,
                where):
    """Forward, backward and one optimiser step on one batch; returns the
    batch loss."""
    fcfg = run_cfg.frontend
    feats = compute_features(clips, frontend, fcfg, workers)
    trainable = frontend.parameters() if frontend is not None else {}
    x = T.Tensor(feats, requires_grad=bool(trainable))
    model.zero_grad()
    if frontend is not None:
        frontend.zero_grad()
    try:
        logits = model_forward(model, x, mode='train', rng=rng)
        loss = T.softmax_cross_entropy(logits, labels)
        loss.backward()
    except NumericError as exc:
        raise NumericError('%s: %s' % (where, exc))
    if not np.isfinite(loss.values):
        raise NumericError('%s: non-finite loss' % where)

    if trainable:
        # frontend graph is rebuilt one example at a time
        for i, clip in enumerate(clips):
            out = leaf_features(clip, frontend, fcfg.hop)
            out.backward(x.grad[i, 0][None].astype(out.dtype))

    params = model.parameters()
    params.update(trainable)
    grads = dict((name, t.grad) for name, t in params.items())
    T.adam_step(params, grads, adam, lr=_learning_rates(run_cfg, params),
                betas=run_cfg.train.betas, l2_lambda=run_cfg.train.l2_lambda)
    if frontend is not None:
        clamp_params(frontend)
    return float(loss.values)


def _rng_state(seed, epoch):
    # shuffle stream of the epoch a resumed run starts with
    return {'seed': int(seed),
            'shuffle': stream_state(make_stream(seed, 'shuffle', epoch + 1))}


def _snapshot(model, frontend, adam, run_cfg, labels, epoch, stopper, seed,
              last=None):
    meta = {'early_stopping': stopper.state()}
    if last is not None:
        meta.update(val_loss=last.val_loss, val_accuracy=last.val_accuracy)
    return capture(model, frontend, adam, config=run_cfg.to_dict(),
                   labels=list(labels), epoch=epoch,
                   best_val_loss=stopper.best_loss,
                   rng_state=_rng_state(seed, epoch), meta=meta)


def fit(run_cfg, train_set, val_set, labels, out_dir=None, seed=0,
        resume=None, ir_bank=()):
    """Trains a model from scratch or from ``resume`` (a ``last.ckpt``).

    Parameters
    ----------
    run_cfg : RunConfig
        ``model.n_classes`` is replaced by ``len(labels)``
    train_set, val_set : ExampleSet
    labels : list of str
    out_dir : str or None
        where checkpoints and ``epochs.csv`` go; nothing is written if None
    seed : int
    resume : Checkpoint or None
    ir_bank : list of Waveform
        impulse responses for online augmentation

    Returns
    -------
    TrainResult with the best checkpoint, the epoch logs and the model and
    frontend holding the best state
    """
    if len(train_set) == 0:
        raise DataError('empty training split')
    if len(val_set) == 0:
        raise DataError('empty validation split')
    run_cfg = run_cfg.override('model', n_classes=len(labels))
    run_cfg = run_cfg.override('train', seed=int(seed))
    tcfg = run_cfg.train
    workers = 1 if tcfg.deterministic else tcfg.workers

    model = build_model(run_cfg.model, make_stream(seed, 'init'))
    frontend = build_frontend(run_cfg)
    adam = T.AdamState()
    stopper = EarlyStopping(tcfg.patience)
    logs = []
    best = None
    first_epoch = 1
    resume_rng = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, 'epochs.csv') if out_dir else None

    if resume is not None:
        if list(resume.labels) != list(labels):
            raise LabelMismatch('checkpoint labels differ from the run labels')
        restore(resume, model, frontend, adam)
        stopper = EarlyStopping(tcfg.patience,
                                **resume.meta.get('early_stopping', {}))
        first_epoch = resume.epoch + 1
        state = resume.rng_state or {}
        if state.get('seed', seed) != seed:
            log.warning('resuming a seed %s run with seed %s', state['seed'],
                        seed)
        elif 'shuffle' in state:
            resume_rng = restore_stream(state['shuffle'])
        best_path = os.path.join(out_dir, 'best.ckpt') if out_dir else None
        if best_path and os.path.exists(best_path):
            best = load_checkpoint(best_path)
        if csv_path and os.path.exists(csv_path):
            logs = [e for e in read_epoch_log(csv_path)
                    if e.epoch <= resume.epoch]
        log.info('resuming at epoch %d', first_epoch)
    elif out_dir is not None:
        save_checkpoint(_snapshot(model, frontend, adam, run_cfg, labels, 0,
                                  stopper, seed),
                        os.path.join(out_dir, 'init.ckpt'))

    log.info('training %s frontend, %d trainable parameters, %d train and '
             '%d validation clips', tcfg.frontend,
             count_parameters(model, frontend), len(train_set), len(val_set))
    augmenting = run_cfg.augment.mode == 'online'
    stopped = stopper.should_stop
    for epoch in range(first_epoch, tcfg.max_epochs + 1):
        if stopped:
            break
        started = time.time()
        if epoch == first_epoch and resume_rng is not None:
            shuffler = resume_rng
        else:
            shuffler = make_stream(seed, 'shuffle', epoch)
        order = shuffler.permutation(len(train_set))
        losses, weights = [], []
        for b, idx in enumerate(_batches(len(train_set), tcfg.batch_size,
                                         order)):
            clips = train_set.clips(idx)
            if augmenting:
                batch = [Waveform(c, run_cfg.frontend.sample_rate)
                         for c in clips]
                batch = augment_batch(batch, run_cfg.augment,
                                      make_stream(seed, 'augment', epoch, b),
                                      ir_bank)
                clips = np.stack([w.samples for w in batch]).astype(np.float32)
            loss = _train_step(model, frontend, clips, train_set.labels[idx],
                               run_cfg, adam,
                               make_stream(seed, 'dropout', epoch, b),
                               workers, 'epoch %d batch %d' % (epoch, b))
            losses.append(loss)
            weights.append(len(idx))
        train_loss = float(np.average(losses, weights=weights))
        val_loss, val_acc = validate(model, frontend, val_set,
                                     run_cfg.frontend, tcfg.batch_size,
                                     workers)
        if not np.isfinite(val_loss):
            raise NumericError('epoch %d: non-finite validation loss' % epoch)
        elapsed = time.time() - started
        entry = EpochLog(epoch, train_loss, val_loss, val_acc,
                         0.0 if tcfg.deterministic else elapsed)
        logs.append(entry)
        log.info('epoch %d: train loss %.4f, val loss %.4f, val acc %.4f '
                 '(%.1f s)', epoch, train_loss, val_loss, val_acc, elapsed)

        improved = stopper.step(epoch, val_loss)
        snapshot = _snapshot(model, frontend, adam, run_cfg, labels, epoch,
                             stopper, seed, entry)
        if improved:
            best = snapshot
            if out_dir is not None:
                save_checkpoint(best, os.path.join(out_dir, 'best.ckpt'))
        if out_dir is not None:
            save_checkpoint(snapshot, os.path.join(out_dir, 'last.ckpt'))
            _write_epoch_log(csv_path, logs)
        stopped = stopper.should_stop
        if stopped:
            log.info('early stop after epoch %d, best epoch %d (val loss '
                     '%.4f)', epoch, stopper.best_epoch, stopper.best_loss)

    if best is not None:
        restore(best, model, frontend)
    return TrainResult(best=best, logs=logs, model=model, frontend=frontend,
                       stopped_early=stopped)


def train(run_cfg, manifest, data_root=None, out_dir=None, seed=0,
          resume=None):
    """Trains on the ``train`` split of ``manifest`` and validates on
    ``val``; returns ``(best Checkpoint, list of EpochLog)``."""
    if data_root is not None:
        manifest = manifest.copy()
        manifest.root = data_root
    n_samples = run_cfg.frontend.n_samples
    train_set = ExampleSet.from_manifest(manifest, 'train', n_samples)
    val_set = ExampleSet.from_manifest(manifest, 'val', n_samples)
    bank = ()
    if run_cfg.augment.mode == 'online' and run_cfg.augment.ir_dir:
        bank = load_ir_bank(run_cfg.augment.ir_dir)
    result = fit(run_cfg, train_set, val_set, manifest.labels, out_dir, seed,
                 resume, bank)
    return result.best, result.logs


def load_trained(ckpt):
    """Rebuilds ``(model, frontend, run_cfg)`` from a checkpoint; the
    frontend is None for mel runs."""
    run_cfg = RunConfig.from_dict(ckpt.config)
    model = build_model(run_cfg.model, make_stream(0, 'init'))
    frontend = build_frontend(run_cfg)
    restore(ckpt, model, frontend)
    return model, frontend, run_cfg
