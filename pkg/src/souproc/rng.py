"""Counter-based random numbers.

Every random draw is a pure function of a 64-bit key and a few integer
counters, so a particle's Brownian increments and the branching event
sequence can be regenerated in any order, on any worker, and shared
between coupled systems without passing generator state around.

The mixing function is the SplitMix64 finalizer.  Keys for replicates
are ``(seed_base + replicate_index) mod 2**64``.
"""
from __future__ import annotations

import numpy as np
from numba import njit, uint64

MASK64 = (1 << 64) - 1

_M1 = uint64(0xBF58476D1CE4E5B9)
_M2 = uint64(0x94D049BB133111EB)
_GOLDEN = uint64(0x9E3779B97F4A7C15)
_K_STEP = uint64(0xD1B54A32D192ED03)
_K_COORD = uint64(0xABC98388FB8FAC03)
_K_NODE = uint64(0x8CB92BA72F3D8DD7)
_S30 = uint64(30)
_S27 = uint64(27)
_S31 = uint64(31)
_S11 = uint64(11)
_TWO_M53 = 1.0 / 9007199254740992.0


@njit(cache=True, nogil=True)
def mix64(z):
    z = uint64(z)
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def hash3(key, a, b, c):
    """64-bit hash of a key and three counters."""
    h = mix64(uint64(key) + _GOLDEN)
    h = mix64(h ^ (uint64(a) * _K_STEP))
    h = mix64(h ^ (uint64(b) * _K_COORD))
    return mix64(h ^ (uint64(c) * _K_NODE))


@njit(cache=True, nogil=True)
def to_unit(h):
    """Map 64 random bits to a double in the open interval (0, 1)."""
    return ((h >> _S11) + 0.5) * _TWO_M53


@njit(cache=True, nogil=True)
def uniform(key, a, b, c):
    return to_unit(hash3(key, a, b, c))


# Acklam's rational approximation of the standard normal quantile
# (relative error below 1.2e-9 over (0, 1)).
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


@njit(cache=True, nogil=True)
def norm_ppf(p):
    """Standard normal quantile for p in (0, 1)."""
    if p < _P_LOW:
        q = np.sqrt(-2.0 * np.log(p))
        return ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
                / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    if p > 1.0 - _P_LOW:
        q = np.sqrt(-2.0 * np.log1p(-p))
        return -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
                 / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    q = p - 0.5
    r = q * q
    return ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
            / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))


@njit(cache=True, nogil=True)
def normal(key, a, b, c):
    """Standard normal by inversion of one 53-bit uniform."""
    return norm_ppf(to_unit(hash3(key, a, b, c)))


@njit(cache=True, nogil=True)
def cell_normal(key, cell, coord, level):
    """Normal for a grid cell refined ``level`` times by Levy midpoint splits.

    Cells at level ``L`` have width ``h_root / 2**L``.  The normal of a
    parent cell equals the normalized sum of its two children, so runs at
    step ``h`` and ``h/2`` see the same Brownian path on the coarse cells.
    """
    root = cell >> level
    node = uint64(1)
    val = normal(key, root, coord, node)
    inv_sqrt2 = 0.7071067811865476
    for depth in range(level - 1, -1, -1):
        bit = (cell >> depth) & 1
        eta = normal(key, root, coord, node + uint64(1) + _GOLDEN)
        if bit == 0:
            val = (val + eta) * inv_sqrt2
            node = node * uint64(2)
        else:
            val = (val - eta) * inv_sqrt2
            node = node * uint64(2) + uint64(1)
    return val


@njit(cache=True, nogil=True)
def child_key(parent_key, event_counter, which):
    return hash3(parent_key, event_counter, which, 0x5EED)


def replicate_seed(seed_base: int, index: int) -> int:
    """Seed of replicate ``index``: ``(seed_base + index) mod 2**64``."""
    return (int(seed_base) + int(index)) & MASK64


def particle_keys(seed: int, count: int) -> np.ndarray:
    """Initial stream keys for ``count`` founding particles."""
    out = np.empty(count, dtype=np.uint64)
    _fill_keys(np.uint64(seed), out)
    return out


@njit(cache=True, nogil=True)
def _fill_keys(seed, out):
    for i in range(out.shape[0]):
        out[i] = hash3(seed, i, 0x0F0F, 0x1111)
