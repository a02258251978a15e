"""Deterministic random substreams.

Every Monte Carlo routine in the package derives its generator from an explicit
integer seed plus a tuple of integer keys (grid index, chunk index, ...), so the
draws for one unit of work do not depend on how many other units ran before it.
"""

from __future__ import annotations

import numpy as np


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based Philox generator keyed by ``(seed, *keys)``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])
    return np.random.Generator(np.random.Philox(ss))


def chunked_sizes(total: int, chunk: int) -> list[int]:
    """Split ``total`` draws into fixed-size chunks (last one may be short)."""
    full, rest = divmod(int(total), int(chunk))
    return [chunk] * full + ([rest] if rest else [])
