# -*- coding: utf-8 -*-
# Copyright (c) 2023, The leafkit Developers
# All rights reserved.
#
# Redistribution and use in source and binary forms, with or without
# modification, are permitted under the terms of the BSD 3-clause license
# distributed with this package.
"""Typed run configuration and the YAML file that carries it.

A run file has up to five sections::

    frontend: {n_filters: 64, clip_seconds: 5.0}
    model:    {n_conv_layers: 5, dropout_rate: 0.23}
    augment:  {mode: online}
    train:    {batch_size: 14, patience: 8, seed: 3}
    ingest:   {scheme: pattern, min_files_per_species: 10}

Anything left out takes the defaults below; unknown sections or keys are
rejected, all of them listed in one error.
"""
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from .dsp import FramingConfig
from .errors import ConfigError

__all__ = ['FrontendConfig', 'ModelConfig', 'AugmentConfig', 'TrainConfig',
           'IngestConfig', 'RunConfig', 'FRONTENDS', 'load_config',
           'resolve_seed', 'REFERENCE_PARAMETER_COUNT']

log = logging.getLogger(__name__)

FRONTENDS = ('mel', 'leaf', 'leafFB', 'leafPCEN')

# trainable parameters reported for the reference 4-layer LEAF model
REFERENCE_PARAMETER_COUNT = 28319


def _check(condition, message):
    if not condition:
        raise ConfigError(message)


@dataclass
class FrontendConfig(object):
    sample_rate: int = 44100
    n_filters: int = 64
    hop: int = 147
    window_len: int = 294
    fft_size: int = 512
    f_min: float = 0.0
    f_max: float = 22050.0
    clip_seconds: float = 5.0
    log_floor: float = 1e-6
    pcen_alpha: float = 0.96
    pcen_delta: float = 2.0
    pcen_root: float = 0.5
    pcen_smooth: float = 0.04
    pcen_floor: float = 1e-6
    pool_init: float = 0.4

    def __post_init__(self):
        _check(self.n_filters >= 2, 'frontend.n_filters must be >= 2')
        _check(self.hop >= 1, 'frontend.hop must be >= 1')
        _check(self.window_len == 2 * self.hop,
               'frontend.window_len must be twice frontend.hop')
        _check(self.fft_size >= self.window_len,
               'frontend.fft_size must be >= frontend.window_len')
        _check(0 <= self.f_min < self.f_max <= self.sample_rate / 2.0,
               'need 0 <= frontend.f_min < frontend.f_max <= Nyquist')
        _check(self.clip_seconds > 0, 'frontend.clip_seconds must be > 0')
        _check(0 < self.pool_init <= 1, 'frontend.pool_init must lie in (0, 1]')
        _check(0 < self.pcen_smooth < 1,
               'frontend.pcen_smooth must lie in (0, 1)')

    @property
    def n_samples(self):
        """Samples per clip; 220500 for 5 s at 44.1 kHz."""
        return int(round(self.clip_seconds * self.sample_rate))

    @property
    def n_frames(self):
        """Frames per clip; 1500 for the defaults."""
        return -(-self.n_samples // self.hop)

    @property
    def kernel_len(self):
        return self.window_len

    @property
    def framing(self):
        return FramingConfig(window_len=self.window_len, hop=self.hop,
                             centered=True)


@dataclass
class ModelConfig(object):
    n_conv_layers: int = 4
    dropout_rate: float = 0.4
    n_classes: int = 32
    bn_momentum: float = 0.1
    bn_epsilon: float = 1e-5

    def __post_init__(self):
        _check(self.n_conv_layers in (4, 5), 'model.n_conv_layers must be 4 or 5')
        _check(0.0 <= self.dropout_rate < 1.0,
               'model.dropout_rate must lie in [0, 1)')
        _check(self.n_classes >= 2, 'model.n_classes must be >= 2')

    @property
    def channel_plan(self):
        plan = [8, 16, 32, 64, 128]
        return plan[:self.n_conv_layers]


@dataclass
class AugmentConfig(object):
    """Augmentation settings; ``mode`` is ``none``, ``online`` or
    ``offline``. The defaults are the online (per-batch) values."""
    mode: str = 'none'
    noise_prob: float = 0.9
    snr_range_db: tuple = (25.0, 40.0)
    decay_range: tuple = (-2.0, 1.5)
    ir_prob: float = 0.7
    ir_dir: str = None
    mix_range: tuple = (0.0, 1.0)
    mask_prob: float = 0.0
    mask_bw_range: tuple = (0.06, 0.22)
    offline_generations: int = 10
    seed: int = None

    def __post_init__(self):
        for name in ('snr_range_db', 'decay_range', 'mix_range',
                     'mask_bw_range'):
            value = tuple(float(v) for v in getattr(self, name))
            _check(len(value) == 2, 'augment.%s needs [low, high]' % name)
            setattr(self, name, value)
        _check(self.mode in ('none', 'online', 'offline'),
               'augment.mode must be none, online or offline')
        for name in ('noise_prob', 'ir_prob', 'mask_prob'):
            _check(0.0 <= getattr(self, name) <= 1.0,
                   'augment.%s must lie in [0, 1]' % name)
        _check(self.snr_range_db[0] < self.snr_range_db[1],
               'augment.snr_range_db low must be below high')
        _check(self.decay_range[0] < self.decay_range[1],
               'augment.decay_range low must be below high')
        _check(0.0 <= self.mix_range[0] <= self.mix_range[1] <= 1.0,
               'augment.mix_range must lie within [0, 1]')
        _check(0.01 <= self.mask_bw_range[0] <= self.mask_bw_range[1] < 1.0,
               'augment.mask_bw_range must lie within [0.01, 1)')
        _check(self.offline_generations >= 1,
               'augment.offline_generations must be >= 1')

    @classmethod
    def preset(cls, mode, **overrides):
        """Defaults for the offline (expanded file set) or online
        (per-batch) pipelines."""
        if mode == 'offline':
            values = dict(mode='offline', noise_prob=1.0,
                          snr_range_db=(25.0, 80.0), mask_prob=0.5)
        elif mode == 'online':
            values = dict(mode='online')
        else:
            values = dict(mode=mode)
        values.update(overrides)
        return cls(**values)


@dataclass
class TrainConfig(object):
    batch_size: int = 14
    max_epochs: int = 200
    patience: int = 8
    lr: float = 1e-3
    frontend_lr: float = None
    betas: tuple = (0.9, 0.999)
    l2_lambda: float = 1e-3
    frontend: str = 'leaf'
    seed: int = None
    deterministic: bool = False
    workers: int = 1

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        _check(self.batch_size >= 1, 'train.batch_size must be >= 1')
        _check(self.patience >= 1, 'train.patience must be >= 1')
        _check(self.max_epochs >= 1, 'train.max_epochs must be >= 1')
        _check(self.lr > 0, 'train.lr must be positive')
        _check(self.l2_lambda >= 0, 'train.l2_lambda must be >= 0')
        _check(self.frontend in FRONTENDS,
               'train.frontend must be one of %s' % ', '.join(FRONTENDS))
        _check(self.workers >= 1, 'train.workers must be >= 1')

    @property
    def is_leaf(self):
        return self.frontend != 'mel'

    @property
    def ablation(self):
        return 'full' if self.frontend == 'leaf' else self.frontend


@dataclass
class IngestConfig(object):
    scheme: str = 'pattern'
    min_files_per_species: int = 1
    trim_last_seconds: float = None
    group_regex: str = None
    workers: int = 4

    def __post_init__(self):
        _check(self.scheme in ('pattern', 'stratified'),
               'ingest.scheme must be pattern or stratified')
        _check(self.min_files_per_species >= 1,
               'ingest.min_files_per_species must be >= 1')
        _check(self.trim_last_seconds is None or self.trim_last_seconds > 0,
               'ingest.trim_last_seconds must be positive')
        _check(self.workers >= 1, 'ingest.workers must be >= 1')


_SECTIONS = (('frontend', FrontendConfig), ('model', ModelConfig),
             ('augment', AugmentConfig), ('train', TrainConfig),
             ('ingest', IngestConfig))


@dataclass
class RunConfig(object):
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)

    @classmethod
    def from_dict(cls, data):
        """Builds a RunConfig from nested plain dicts.

        Raises
        ------
        ConfigError
            on unknown sections or keys (all are listed) and on invalid
            values
        """
        data = data or {}
        if not isinstance(data, dict):
            raise ConfigError('run configuration must be a mapping')
        known = dict(_SECTIONS)
        unknown = ['%s' % k for k in data if k not in known]
        for name, kind in _SECTIONS:
            section = data.get(name) or {}
            if not isinstance(section, dict):
                raise ConfigError('section %r must be a mapping' % name)
            names = set(f.name for f in fields(kind))
            unknown.extend('%s.%s' % (name, k) for k in section
                           if k not in names)
        if unknown:
            raise ConfigError('unknown configuration keys: %s'
                              % ', '.join(sorted(unknown)))
        try:
            sections = dict((name, kind(**(data.get(name) or {})))
                            for name, kind in _SECTIONS)
        except TypeError as exc:
            raise ConfigError(str(exc))
        return cls(**sections)

    def to_dict(self):
        out = {}
        for name, _ in _SECTIONS:
            section = asdict(getattr(self, name))
            out[name] = dict((k, list(v) if isinstance(v, tuple) else v)
                             for k, v in section.items())
        return out

    def override(self, section, **values):
        """Returns a copy with ``values`` replaced in ``section``; ``None``
        values are ignored so unset command line flags keep file values."""
        values = dict((k, v) for k, v in values.items() if v is not None)
        if not values:
            return self
        try:
            updated = replace(getattr(self, section), **values)
        except TypeError as exc:
            raise ConfigError(str(exc))
        return replace(self, **{section: updated})


def load_config(path=None):
    """Reads a YAML run file; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    try:
        with open(path, 'r') as handle:
            data = yaml.safe_load(handle)
    except (IOError, OSError) as exc:
        raise ConfigError('cannot read config %s: %s' % (path, exc))
    except yaml.YAMLError as exc:
        raise ConfigError('config %s is not valid YAML: %s' % (path, exc))
    cfg = RunConfig.from_dict(data)
    log.info('loaded run configuration from %s', path)
    return cfg


def resolve_seed(flag_seed=None, cfg=None, environ=None):
    """Seed precedence: command line, then ``train.seed``, then the
    ``LEAFKIT_SEED`` environment variable, then 0."""
    if flag_seed is not None:
        return int(flag_seed)
    if cfg is not None and cfg.train.seed is not None:
        return int(cfg.train.seed)
    environ = os.environ if environ is None else environ
    value = environ.get('LEAFKIT_SEED')
    if value not in (None, ''):
        try:
            return int(value)
        except ValueError:
            raise ConfigError('LEAFKIT_SEED must be an integer, got %r'
                              % value)
    return 0
