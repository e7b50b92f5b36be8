"""Counter-based random numbers (Philox4x32-10), vectorised over counters.

Every random draw in the package is a pure function of a 64-bit seed and a
128-bit counter, so streams can be regenerated for any (step, copy, cell)
without replaying earlier draws, and parallel schedules cannot change them.
"""
from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

# stream tags, stored in the high half of the fourth counter word
TAG_NOISE = 1
TAG_NOISE_INDEPENDENT = 2
TAG_INITIAL = 3
TAG_INITIAL_INDEPENDENT = 4
TAG_SEED = 5
TAG_MISC = 6


def philox4x32(c0, c1, c2, c3, seed: int, rounds: int = 10):
    """Philox4x32 block function.

    Counter words are broadcast together; the result is four uint32 arrays.
    """
    c0, c1, c2, c3 = np.broadcast_arrays(
        *(np.asarray(c, dtype=np.uint64) & _MASK32 for c in (c0, c1, c2, c3))
    )
    x0, x1, x2, x3 = (c.copy() for c in (c0, c1, c2, c3))
    k0 = int(seed) & 0xFFFFFFFF
    k1 = (int(seed) >> 32) & 0xFFFFFFFF
    for r in range(rounds):
        if r:
            k0 = (k0 + _W0) & 0xFFFFFFFF
            k1 = (k1 + _W1) & 0xFFFFFFFF
        p0 = _M0 * x0
        p1 = _M1 * x2
        hi0 = p0 >> _SHIFT32
        lo0 = p0 & _MASK32
        hi1 = p1 >> _SHIFT32
        lo1 = p1 & _MASK32
        x0 = hi1 ^ x1 ^ np.uint64(k0)
        x1 = lo1
        x2 = hi0 ^ x3 ^ np.uint64(k1)
        x3 = lo0
    return (x0.astype(np.uint32), x1.astype(np.uint32),
            x2.astype(np.uint32), x3.astype(np.uint32))


def _uniform53(hi, lo):
    a = hi.astype(np.uint64) >> np.uint64(5)
    b = lo.astype(np.uint64) >> np.uint64(6)
    # (a * 2^26 + b + 0.5) / 2^53 lies strictly inside (0, 1)
    return ((a * np.uint64(67108864) + b).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def normal_pairs(c0, c1, c2, c3, seed: int):
    """Two independent standard normals per counter (Box-Muller).

    Returns an array of shape ``broadcast(c0..c3).shape + (2,)``.
    """
    x0, x1, x2, x3 = philox4x32(c0, c1, c2, c3, seed)
    u1 = _uniform53(x0, x1)
    u2 = _uniform53(x2, x3)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)


def normals(c0, c1, c2, tag: int, n: int, seed: int):
    """``n`` standard normals per (c0, c1, c2) triple for stream ``tag``.

    The fourth counter word carries ``tag << 16 | block`` so that distinct
    tags never share counters.
    """
    n_blocks = (n + 1) // 2
    c0, c1, c2 = np.broadcast_arrays(np.asarray(c0), np.asarray(c1), np.asarray(c2))
    blocks = np.arange(n_blocks, dtype=np.uint64) | np.uint64(tag << 16)
    z = normal_pairs(c0[..., None], c1[..., None], c2[..., None], blocks, seed)
    return z.reshape(c0.shape + (2 * n_blocks,))[..., :n]


def derive_seed(seed: int, *labels: int) -> int:
    """Child 64-bit seed from a parent seed and up to three integer labels."""
    if len(labels) > 3:
        raise ValueError("at most three labels")
    words = list(labels) + [0] * (3 - len(labels))
    x0, x1, _, _ = philox4x32(words[0], words[1], words[2], TAG_SEED << 16, seed)
    return (int(x0) << 32) | int(x1)
