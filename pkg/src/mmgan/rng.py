"""Named deterministic random substreams derived from one master seed."""

from __future__ import annotations

import zlib

import numpy as np


def _as_entropy(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def substream(*parts):
    """A fresh Generator keyed by (seed, tag, ...) parts.

    Strings hash via crc32, so stream identities are stable across runs
    and platforms. Equal parts always give an identical stream.
    """
    entropy = [_as_entropy(p) for p in parts]
    return np.random.default_rng(np.random.SeedSequence(entropy))
