# -*- coding: utf-8 -*-
# Copyright (c) 2023, The leafkit Developers
"""Named, counter-based random streams.

Every stochastic step receives its own generator, addressed by a path such
as ``(seed, "augment", epoch, index)``. Streams with the same path are
identical no matter how many threads draw from their siblings.
"""
import hashlib

import numpy as np

__all__ = ['make_stream', 'stream_state', 'restore_stream', 'derive_key']


def _path_key(part):
    if isinstance(part, (int, np.integer)):
        return int(part)
    digest = hashlib.sha256(str(part).encode('utf-8')).digest()
    return int.from_bytes(digest[:4], 'little')


def make_stream(seed, *path):
    """Returns a ``numpy.random.Generator`` for ``seed`` and stream ``path``.

    Parameters
    ----------
    seed : int
        run seed
    path : int or str
        stream name components; strings are hashed to 32-bit keys
    """
    seq = np.random.SeedSequence(int(seed),
                                 spawn_key=tuple(_path_key(p) for p in path))
    return np.random.Generator(np.random.Philox(seq))


def derive_key(rng):
    """Draws a 63-bit key from ``rng`` for keying child streams."""
    return int(rng.integers(0, 2 ** 63 - 1))


def stream_state(rng):
    """Returns the generator state as a JSON-safe dict."""
    state = rng.bit_generator.state
    return _to_builtin(state)


def restore_stream(state):
    """Rebuilds a Philox generator from :func:`stream_state` output."""
    bitgen = np.random.Philox()
    restored = dict(state)
    restored['state'] = {k: np.asarray(v, dtype=np.uint64)
                         for k, v in state['state'].items()}
    restored['buffer'] = np.asarray(state['buffer'], dtype=np.uint64)
    bitgen.state = restored
    return np.random.Generator(bitgen)


def _to_builtin(value):
    if isinstance(value, dict):
        return {k: _to_builtin(v) for k, v in value.items()}
    if isinstance(value, np.ndarray):
        return [int(v) for v in value.tolist()]
    if isinstance(value, np.integer):
        return int(value)
    return value
