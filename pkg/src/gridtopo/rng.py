"""Counter-based deterministic random streams.

All simulation randomness in this package flows through a single keyed
64-bit hash so that any draw is a pure function of ``(seed, stream, index)``.
That makes per-node marginals invariant to the node set, lets samples be
generated in any order (or in parallel), and keeps fixtures reproducible
across platforms and implementations.

The hash is the SplitMix64 finalizer

    z += 0x9E3779B97F4A7C15
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z = z ^ (z >> 31)

applied as a chain: ``h = f(seed); h = f(h ^ stream); h = f(h ^ index)``.
All arithmetic is modulo 2**64.

Uniform doubles use the top 53 bits: ``u = (h >> 11) * 2**-53`` in [0, 1).
Gaussians use the Box-Muller transform on two consecutive counter values
``(2k, 2k+1)``: with ``u1 = ((h1 >> 11) + 1) * 2**-53`` in (0, 1] and
``u2 = (h2 >> 11) * 2**-53``,

    z = sqrt(-2 ln u1) * cos(2 pi u2).
"""

from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TWO53 = float(2**53)


def _finalize(z: np.ndarray) -> np.ndarray:
    # wraparound modulo 2**64 is the point; silence the scalar overflow warning
    with np.errstate(over="ignore"):
        z = z + _GAMMA
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
        return z ^ (z >> _S31)


def _as_u64(value) -> np.uint64:
    return np.uint64(int(value) & 0xFFFFFFFFFFFFFFFF)


def hash64(seed, stream, index) -> int:
    """Keyed 64-bit hash of (seed, stream, index); also used to derive seeds."""
    h = _finalize(np.asarray(_as_u64(seed)))
    h = _finalize(h ^ _as_u64(stream))
    h = _finalize(h ^ _as_u64(index))
    return int(h)


def uniform01(seed, stream, indices) -> np.ndarray:
    """Uniform [0, 1) doubles at the given counter indices of one stream."""
    idx = np.asarray(indices, dtype=np.uint64)
    h = _finalize(np.asarray(_as_u64(seed)))
    h = _finalize(h ^ _as_u64(stream))
    h = _finalize(h ^ idx)
    return (h >> _S11).astype(np.float64) / _TWO53


def standard_normal(seed, stream, indices) -> np.ndarray:
    """Box-Muller gaussians; draw k consumes counter values 2k and 2k+1."""
    idx = np.asarray(indices, dtype=np.uint64)
    two = np.uint64(2)
    one = np.uint64(1)
    u1 = _counter_values(seed, stream, idx * two)
    u2 = _counter_values(seed, stream, idx * two + one)
    # shift u1 into (0, 1] so the log is finite
    u1 = ((u1 >> _S11).astype(np.float64) + 1.0) / _TWO53
    u2 = (u2 >> _S11).astype(np.float64) / _TWO53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def _counter_values(seed, stream, idx: np.ndarray) -> np.ndarray:
    h = _finalize(np.asarray(_as_u64(seed)))
    h = _finalize(h ^ _as_u64(stream))
    return _finalize(h ^ idx)
