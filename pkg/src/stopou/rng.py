"""Counter-based normal streams.

Path ``i`` of stream ``(seed, stream_id)`` always consumes the same Philox
counter block, so any partition of paths across workers or chunks produces
bit-identical draws. Normals come from the inverse CDF (one uniform per
normal) so the counter layout never depends on rejection steps.
"""

from __future__ import annotations

import numpy as np
from numpy.random import Philox, SeedSequence
from scipy.special import ndtri

_TWO_M53 = 2.0**-53


def stream_key(seed: int, stream_id: int) -> np.ndarray:
    """128-bit Philox key derived from (seed, stream_id)."""
    if seed < 0 or stream_id < 0:
        raise ValueError("seed and stream_id must be non-negative")
    return SeedSequence([int(seed), int(stream_id), 0x5EED]).generate_state(2, np.uint64)


def _words_per_path(per_path: int) -> int:
    return 4 * ((per_path + 3) // 4)


def uniforms(seed: int, stream_id: int, start: int, stop: int, per_path: int) -> np.ndarray:
    """Open-interval uniforms for paths ``start..stop-1``; shape (stop-start, per_path)."""
    if stop < start:
        raise ValueError("stop < start")
    wpp = _words_per_path(per_path)
    counter = np.zeros(4, dtype=np.uint64)
    counter[0] = np.uint64(start * (wpp // 4))
    gen = Philox(key=stream_key(seed, stream_id), counter=counter)
    raw = gen.random_raw((stop - start) * wpp).reshape(stop - start, wpp)[:, :per_path]
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53


def normals(seed: int, stream_id: int, start: int, stop: int, per_path: int) -> np.ndarray:
    """Standard normals for paths ``start..stop-1``; shape (stop-start, per_path)."""
    return ndtri(uniforms(seed, stream_id, start, stop, per_path))


def blocks(m: int, block: int):
    """Fixed path blocks ``[(0, b), (b, 2b), ...]`` covering ``range(m)``."""
    return [(i, min(i + block, m)) for i in range(0, m, block)]
