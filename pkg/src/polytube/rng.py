"""Counter-based random numbers keyed by lattice site.

Disorder fields need a deterministic map (seed, n, x) -> variate so that the
same site receives the same noise no matter how many sites are materialised,
in which order, or on how many threads.  Sequential generators cannot give
that; a counter-based generator can.  We run Philox-4x64 with 10 rounds (the
same algorithm behind ``numpy.random.Philox``) with the site coordinates
packed into the counter block, vectorised over numpy arrays.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_MASK32 = np.uint64(0xFFFFFFFF)
# Philox-4x64 round multipliers and Weyl key increments (Salmon et al. 2011).
_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)


def _mulhilo(a: np.uint64, b):
    """Full 64x64 -> 128 bit product as (hi, lo) uint64 words."""
    b = np.asarray(b, dtype=np.uint64)
    ah, al = a >> np.uint64(32), a & _MASK32
    bh, bl = b >> np.uint64(32), b & _MASK32
    t = al * bl
    u = ah * bl + (t >> np.uint64(32))
    v = al * bh + (u & _MASK32)
    hi = ah * bh + (u >> np.uint64(32)) + (v >> np.uint64(32))
    return hi, a * b


def philox4x64(c0, c1, c2, c3, key0: int, key1: int, rounds: int = 10):
    """Apply the Philox-4x64 bijection to a block of counters.

    All four counter arguments broadcast against each other; returns the four
    output words as uint64 arrays.
    """
    x0, x1, x2, x3 = np.broadcast_arrays(
        np.asarray(c0, dtype=np.uint64),
        np.asarray(c1, dtype=np.uint64),
        np.asarray(c2, dtype=np.uint64),
        np.asarray(c3, dtype=np.uint64),
    )
    x0, x1, x2, x3 = (np.array(x, dtype=np.uint64) for x in (x0, x1, x2, x3))
    w0, w1 = int(_W0), int(_W1)
    for r in range(rounds):
        k0 = np.uint64((key0 + r * w0) & 0xFFFFFFFFFFFFFFFF)
        k1 = np.uint64((key1 + r * w1) & 0xFFFFFFFFFFFFFFFF)
        hi0, lo0 = _mulhilo(_M0, x0)
        hi1, lo1 = _mulhilo(_M1, x2)
        x0, x1, x2, x3 = hi1 ^ x1 ^ k0, lo1, hi0 ^ x3 ^ k1, lo0
    return x0, x1, x2, x3


def splitmix64(x: int) -> int:
    """One step of the SplitMix64 mix; used to derive subordinate keys."""
    z = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def derive_seed(seed: int, *labels: int) -> int:
    """Deterministically derive an independent 64-bit stream seed.

    Chains SplitMix64 over the master seed and the integer labels (replica
    index, grid-cell index, ...).  Order-sensitive by construction.
    """
    s = splitmix64(seed & 0xFFFFFFFFFFFFFFFF)
    for lab in labels:
        s = splitmix64(s ^ ((lab & 0xFFFFFFFFFFFFFFFF) * 0x9E3779B97F4A7C15 & 0xFFFFFFFFFFFFFFFF))
    return s


def _site_words(seed: int, n, coords):
    """Philox output word for sites (n, x).  coords is a list of int arrays."""
    if len(coords) > 3:
        raise ValueError("at most three spatial coordinates supported")
    c = [np.asarray(n, dtype=np.int64).astype(np.uint64)]
    for axis in coords:
        c.append(np.asarray(axis, dtype=np.int64).astype(np.uint64))
    while len(c) < 4:
        c.append(np.uint64(0))
    key0 = seed & 0xFFFFFFFFFFFFFFFF
    key1 = splitmix64(key0)
    y0, _, _, _ = philox4x64(c[0], c[1], c[2], c[3], key0, key1)
    return y0


def site_uniforms(seed: int, n, coords):
    """Uniform(0,1) variates attached to lattice sites (n, x).

    ``n`` and each entry of ``coords`` broadcast together.  The value depends
    only on (seed, n, x), never on evaluation order.
    """
    w = _site_words(seed, n, coords)
    # 53 high bits -> open interval (0, 1)
    return (w >> np.uint64(11)).astype(np.float64) * 2.0**-53 + 2.0**-54


def site_normals(seed: int, n, coords):
    """Standard Gaussian variates attached to lattice sites, via inverse CDF."""
    return ndtri(site_uniforms(seed, n, coords))


def site_signs(seed: int, n, coords):
    """Rademacher (+/-1 fair coin) variates attached to lattice sites."""
    w = _site_words(seed, n, coords)
    return np.where((w >> np.uint64(63)).astype(np.int64) == 1, 1.0, -1.0)
