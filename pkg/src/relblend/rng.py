"""Counter-based random streams shared by sampling, noise, and initialization.

All randomness in this package is drawn from Philox4x64-10 (Salmon et al.,
"Parallel random numbers: as easy as 1, 2, 3", as implemented by
``numpy.random.Philox``). Philox is a pure counter-based generator: the
stream is a stateless function of ``(key, counter)``, so every draw is
reproducible from integers alone and bit-identical across platforms.

Streams are keyed as ``key = (seed, purpose_tag)`` and
``counter = (c0, c1, c2, c3)``. Purpose tags keep independent uses of the
same seed (mask sampling, coordinate noise, parameter init, shuffling)
from colliding. Test vectors for the raw stream live in
``tests/test_blend.py``.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# Purpose tags. Values are arbitrary but frozen: changing them changes
# every sampled mask, noise draw, and initial parameter in existing runs.
TAG_PARAM_INIT = 1
TAG_BLEND_MASK = 2
TAG_COORD_NOISE = 3
TAG_SHUFFLE = 4
TAG_SPLIT = 5
TAG_JOINT = 6


def keyed_stream(seed: int, tag: int, *counter: int) -> np.random.Generator:
    """Generator over the Philox stream keyed by (seed, tag) at a fixed counter.

    Up to four counter words are accepted; missing words are zero. Each
    distinct (seed, tag, counter) names an independent stream of 2^64
    blocks, far more than any draw here consumes.
    """
    if len(counter) > 4:
        raise ValueError(f"at most 4 counter words, got {len(counter)}")
    words = [c & _MASK64 for c in counter] + [0] * (4 - len(counter))
    bitgen = np.random.Philox(counter=words, key=[seed & _MASK64, tag & _MASK64])
    return np.random.Generator(bitgen)


def permutation(n: int, seed: int, tag: int, *counter: int) -> np.ndarray:
    """Deterministic permutation of range(n) from the keyed stream."""
    return keyed_stream(seed, tag, *counter).permutation(n)
