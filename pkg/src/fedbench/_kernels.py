"""Payload block kernels.

The splitmix64 counter mixer is the hot loop of corpus generation and of
synthetic serving. It is compiled with numba when available; setting
``FEDBENCH_NUMBA=0`` (or lacking numba) selects the vectorized numpy path.
Both paths produce identical blocks.
"""

import os

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MUL1 = np.uint64(0xBF58476D1CE4E5B9)
MUL2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_ONE = np.uint64(1)


def _numba_requested():
    return os.environ.get("FEDBENCH_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


def fill_blocks_numpy(seed, first_block, out):
    """Write blocks ``first_block .. first_block+len(out)`` into ``out`` (uint64)."""
    n = out.shape[0]
    if n == 0:
        return out
    with np.errstate(over="ignore"):
        z = np.arange(n, dtype=np.uint64)
        z += np.uint64(first_block) + _ONE
        z *= GOLDEN
        z += np.uint64(seed)
        z ^= z >> _S30
        z *= MUL1
        z ^= z >> _S27
        z *= MUL2
        z ^= z >> _S31
    out[:] = z
    return out


try:
    if not _numba_requested():
        raise ImportError("numba disabled by FEDBENCH_NUMBA")
    from numba import njit

    @njit(cache=True, nogil=True)
    def _fill_blocks_jit(seed, first_block, out):
        k = first_block + _ONE
        for i in range(out.shape[0]):
            z = seed + k * GOLDEN
            z ^= z >> _S30
            z *= MUL1
            z ^= z >> _S27
            z *= MUL2
            z ^= z >> _S31
            out[i] = z
            k += _ONE
        return out

    def fill_blocks_numba(seed, first_block, out):
        return _fill_blocks_jit(np.uint64(seed), np.uint64(first_block), out)

    fill_blocks = fill_blocks_numba
    BACKEND = "numba"
except ImportError:
    fill_blocks_numba = None
    fill_blocks = fill_blocks_numpy
    BACKEND = "numpy"
