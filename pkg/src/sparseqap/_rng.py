"""SplitMix64, the single random source shared by both search engines.

Both engines draw in the same order: one Fisher-Yates shuffle (high to low)
for a random start, then exactly one tenure draw per committed move.
``below(bound)`` consumes exactly one 64-bit output, so the number of raw
draws is fixed and independent of the values drawn.
"""
import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S32 = np.uint64(32)


@njit(cache=True)
def next_u64(state):
    s = state[0] + _GOLDEN
    state[0] = s
    z = (s ^ (s >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@njit(cache=True)
def below(state, bound):
    # multiply-shift on the high 32 bits; bound must be < 2**32
    x = next_u64(state) >> _S32
    return np.int64((x * np.uint64(bound)) >> _S32)


@njit(cache=True)
def shuffle_inplace(state, arr):
    for i in range(arr.shape[0] - 1, 0, -1):
        j = below(state, i + 1)
        tmp = arr[i]
        arr[i] = arr[j]
        arr[j] = tmp


def new_state(seed: int) -> np.ndarray:
    return np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)


class SplitMix64:
    """Thin Python handle over the jitted generator state."""

    def __init__(self, seed: int = 0):
        self.state = new_state(seed)

    def next_u64(self) -> int:
        return int(next_u64(self.state))

    def below(self, bound: int) -> int:
        if not 0 < bound < 2**32:
            raise ValueError("bound must be in (0, 2**32)")
        return int(below(self.state, bound))

    def permutation(self, n: int) -> np.ndarray:
        arr = np.arange(n, dtype=np.int64)
        shuffle_inplace(self.state, arr)
        return arr
