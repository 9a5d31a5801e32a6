"""Deterministic random streams.

Every consumer of randomness asks for a generator keyed by the master seed
plus a path of tags, e.g. ``stream(seed, "local", round, client_id)``.
String tags are folded to integers with CRC-32, then the whole key is fed to
``numpy.random.SeedSequence``.  Streams therefore never depend on the order
in which other streams were consumed, which keeps parallel client training
bit-reproducible.
"""
from __future__ import annotations

import zlib

import numpy as np


def _tag(value) -> int:
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    if isinstance(value, (int, np.integer)):
        if value < 0:
            raise ValueError(f"negative stream tag {value}")
        return int(value)
    return zlib.crc32(str(value).encode("utf-8"))


def derive_seed(seed: int, *tags) -> int:
    """Return a 63-bit integer seed derived from ``seed`` and ``tags``."""
    ss = np.random.SeedSequence([_tag(seed), *(_tag(t) for t in tags)])
    return int(ss.generate_state(2, dtype=np.uint32).view(np.uint64)[0] >> np.uint64(1))


def stream(seed: int, *tags) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([_tag(seed), *(_tag(t) for t in tags)]))
