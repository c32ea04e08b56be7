"""Counter-based random streams.

Every random number is a pure function of (seed, key path, counter), mixed
through the SplitMix64 finalizer. There is no generator state to share, so any
parallel schedule reproduces the same bits.
"""

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field

GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
MIX_MULT_1 = np.uint64(0xBF58476D1CE4E5B9)
MIX_MULT_2 = np.uint64(0x94D049BB133111EB)

_MASK_64 = (1 << 64) - 1
_SHIFT_11 = np.uint64(11)
_SHIFT_27 = np.uint64(27)
_SHIFT_30 = np.uint64(30)
_SHIFT_31 = np.uint64(31)
_TWO_POW_MINUS_53 = 2.0**-53


def to_u64(value: int) -> np.uint64:
    """Wrap an arbitrary Python int into the uint64 ring."""
    return np.uint64(value & _MASK_64)


def mix64(z: NDArray[np.uint64]) -> NDArray[np.uint64]:
    """SplitMix64 avalanche finalizer, elementwise."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _SHIFT_30)) * MIX_MULT_1
        z = (z ^ (z >> _SHIFT_27)) * MIX_MULT_2
        return z ^ (z >> _SHIFT_31)


def _advance(state: NDArray[np.uint64], index: NDArray[np.uint64]) -> NDArray[np.uint64]:
    with np.errstate(over="ignore"):
        return mix64(state + GOLDEN_GAMMA * (index + np.uint64(1)))


def derive_key(seed: int, *indices: int) -> np.uint64:
    """Fold a key path into a single 64-bit stream key."""
    state = np.atleast_1d(to_u64(seed))
    for idx in indices:
        state = _advance(state, np.atleast_1d(to_u64(idx)))
    return np.uint64(state[0])


def extend_keys(keys: NDArray[np.uint64], index: int) -> NDArray[np.uint64]:
    """Child ``index`` of every key in ``keys``."""
    keys = np.atleast_1d(np.asarray(keys, dtype=np.uint64))
    return _advance(keys, np.atleast_1d(to_u64(index)))


def counter_bits(keys: NDArray[np.uint64], n: int) -> NDArray[np.uint64]:
    """Raw 64-bit words for counters 0..n-1 of every key, shape (len(keys), n)."""
    keys = np.atleast_1d(np.asarray(keys, dtype=np.uint64))
    counters = np.arange(n, dtype=np.uint64)
    return _advance(keys[:, None], counters[None, :])


def bits_to_uniform(bits: NDArray[np.uint64]) -> NDArray[np.float64]:
    """Map 64-bit words to doubles strictly inside (0, 1)."""
    mantissa = (bits >> _SHIFT_11).astype(np.float64)
    return (mantissa + 0.5) * _TWO_POW_MINUS_53


def uniforms_for_keys(keys: NDArray[np.uint64], n: int) -> NDArray[np.float64]:
    return bits_to_uniform(counter_bits(keys, n))


def normals_for_keys(keys: NDArray[np.uint64], n: int) -> NDArray[np.float64]:
    """Standard normals via Box-Muller, two uniforms per coordinate."""
    u = uniforms_for_keys(keys, 2 * n)
    u1 = u[:, 0::2]
    u2 = u[:, 1::2]
    radius: NDArray[np.float64] = np.sqrt(-2.0 * np.log(u1))
    return radius * np.cos(2.0 * np.pi * u2)


class RngStream(BaseModel):
    """An addressable random stream: a seed plus a path of integer keys.

    ``child`` extends the path; draws never mutate the stream, so the same
    stream always yields the same numbers.
    """

    model_config = ConfigDict(frozen=True)

    seed: int
    path: tuple[int, ...] = Field(default_factory=tuple)

    @property
    def key(self) -> np.uint64:
        return derive_key(self.seed, *self.path)

    def child(self, *indices: int) -> "RngStream":
        return RngStream(seed=self.seed, path=(*self.path, *indices))

    def uniforms(self, n: int) -> NDArray[np.float64]:
        return uniforms_for_keys(np.atleast_1d(self.key), n)[0]

    def normals(self, n: int) -> NDArray[np.float64]:
        return normals_for_keys(np.atleast_1d(self.key), n)[0]

    def child_keys(self, count: int) -> NDArray[np.uint64]:
        """Keys of children 0..count-1, computed in one vectorised pass."""
        parent = np.atleast_1d(self.key)
        return _advance(parent, np.arange(count, dtype=np.uint64))

    def batch_uniforms(self, count: int, n: int) -> NDArray[np.float64]:
        """Row i equals ``self.child(i).uniforms(n)``."""
        return uniforms_for_keys(self.child_keys(count), n)

    def batch_normals(self, count: int, n: int) -> NDArray[np.float64]:
        """Row i equals ``self.child(i).normals(n)``."""
        return normals_for_keys(self.child_keys(count), n)
