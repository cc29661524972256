"""Seeded, addressable random streams.

Two generators are pinned as part of the reproducibility contract:

* Python-level draws use numpy's ``Philox`` (a counter-based generator),
  keyed through ``SeedSequence(seed, spawn_key=path)``.
* Compiled walk kernels use SplitMix64 in counter mode: draw ``i`` of the
  stream with key ``k`` is ``mix(k + (i + 1) * GOLDEN)``.  Kernel keys are
  derived from the same ``SeedSequence`` tree.

Streams are addressed by a path of non-negative integers rather than
spawned sequentially, so a sub-stream (``stream.child(t, j)``) is the same
no matter which worker asks for it or in what order.  That is what makes
results independent of the worker count.
"""

from __future__ import annotations

import numpy as np
from numba import njit

GOLDEN = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """Pure-Python SplitMix64 finalizer (reference for the compiled one)."""
    z = x & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def counter_draw(key: int, counter: int) -> int:
    """Draw number ``counter`` (0-based) of the kernel stream ``key``."""
    return splitmix64((key + (counter + 1) * GOLDEN) & _MASK64)


@njit(cache=True, nogil=True, inline="always")
def _draw(key, ctr):
    z = np.uint64(key) + (np.uint64(ctr) + np.uint64(1)) * np.uint64(GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True, inline="always")
def _below(key, ctr, n):
    # multiply-shift on the top 32 bits; bias is below n / 2**32
    hi = _draw(key, ctr) >> np.uint64(32)
    return np.int64((hi * np.uint64(n)) >> np.uint64(32))


@njit(cache=True, nogil=True, inline="always")
def _uniform(key, ctr):
    return np.float64(_draw(key, ctr) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


class RandomStream:
    """A reproducible random stream identified by ``(seed, path)``."""

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        if seed is None:
            raise ValueError("seed is mandatory")
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        self._gen = None

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, path={self.path})"

    def _seq(self, extra=()):
        return np.random.SeedSequence(self.seed, spawn_key=self.path + tuple(extra))

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            self._gen = np.random.Generator(np.random.Philox(self._seq()))
        return self._gen

    def child(self, *ids: int) -> "RandomStream":
        return RandomStream(self.seed, self.path + tuple(int(i) for i in ids))

    def kernel_key(self, *ids: int) -> int:
        """64-bit key for a compiled SplitMix64 counter stream."""
        return int(self._seq(ids).generate_state(1, np.uint64)[0])

    # thin conveniences used by pure-Python code paths
    def random(self, size=None):
        return self.generator.random(size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def state(self) -> dict:
        """JSON-serializable description (the stream is fully addressable)."""
        return {"generator": "philox+splitmix64", "seed": self.seed, "path": list(self.path)}

    @classmethod
    def from_state(cls, state: dict) -> "RandomStream":
        return cls(state["seed"], tuple(state.get("path", ())))


def as_stream(rng) -> RandomStream:
    if isinstance(rng, RandomStream):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RandomStream(int(rng))
    raise TypeError(f"expected RandomStream or int seed, got {type(rng).__name__}")
