"""Counter-based random streams.

Draws are organised in fixed-size blocks; block ``b`` of stream ``s`` under
seed ``seed`` always comes from ``default_rng([seed, s, b])``. Any slice
``[start, stop)`` of a stream is therefore reproducible on its own, which is
what makes batch sampling independent of how the work is chunked.
"""

import numpy as np

from .errors import InputError

BLOCK = 1024

DATA_STREAM = 1
NOISE_STREAM = 2


def _check_seed(seed):
    if int(seed) != seed or seed < 0:
        raise InputError(f"seed must be a non-negative integer, got {seed!r}")
    return int(seed)


def _blocks(seed, stream, start, stop, draw):
    seed = _check_seed(seed)
    if stop <= start:
        raise InputError("empty draw range")
    first, last = start // BLOCK, (stop - 1) // BLOCK
    parts = [draw(np.random.default_rng([seed, stream, b])) for b in range(first, last + 1)]
    return parts, first * BLOCK


def normals(seed, stream, start, stop, dim):
    """Standard normal rows ``start .. stop-1`` of a stream, shape ``(stop - start, dim)``."""
    parts, offset = _blocks(seed, stream, start, stop, lambda g: g.standard_normal((BLOCK, dim)))
    full = np.concatenate(parts, axis=0)
    return full[start - offset:stop - offset]


def uniforms_and_normals(seed, stream, start, stop, dim):
    """One uniform and one normal row per index, both drawn from the same block generator."""

    def draw(g):
        u = g.random(BLOCK)
        z = g.standard_normal((BLOCK, dim))
        return u, z

    parts, offset = _blocks(seed, stream, start, stop, draw)
    u = np.concatenate([p[0] for p in parts])
    z = np.concatenate([p[1] for p in parts], axis=0)
    sl = slice(start - offset, stop - offset)
    return u[sl], z[sl]
