"""Seeded random streams.

Every random quantity in the package is drawn from a Philox generator (a
counter-based 64-bit bit generator shipped with numpy).  A stream is keyed by
the user seed *and* a purpose label, so masks, Rademacher signs, weight
initialisation and minibatch order never share state: changing how many
numbers one consumer draws cannot shift another consumer's draws.
"""

from __future__ import annotations

import zlib

import numpy as np

from .errors import ValidationError

_U64 = (1 << 64) - 1


def stream(seed: int, purpose: str) -> np.random.Generator:
    """Independent generator for ``(seed, purpose)``."""
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool):
        raise ValidationError(f"seed must be an integer, got {seed!r}")
    seed = int(seed)
    if seed < 0 or seed > _U64:
        raise ValidationError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    tag = zlib.crc32(purpose.encode("utf-8"))
    ss = np.random.SeedSequence([seed & 0xFFFFFFFF, seed >> 32, tag])
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, purpose: str) -> int:
    """A 63-bit seed derived from ``(seed, purpose)`` for handing to sub-runs."""
    return int(stream(seed, purpose).integers(0, 2 ** 63))
