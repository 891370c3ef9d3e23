"""Counter-based random streams keyed by (seed, purpose, index)."""

from __future__ import annotations

import hashlib

import numpy as np

RNG_ID = "numpy-philox4x64-10/seedsequence-v1"


def _tag_word(tag: str) -> int:
    return int.from_bytes(hashlib.sha256(tag.encode("utf-8")).digest()[:4], "little")


def substream(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    """Independent generator for one purpose and one item.

    Streams depend only on their key, so patches can be processed in any
    order or in parallel without changing the output.
    """
    seq = np.random.SeedSequence([int(seed) & (2**64 - 1), _tag_word(tag), int(index)])
    return np.random.Generator(np.random.Philox(seq))
