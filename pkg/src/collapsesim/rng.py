"""Deterministic, platform-independent random streams.

A stream is identified by ``(base_seed, stream_index)``.  The pair is folded
into one 64-bit key with two rounds of the SplitMix64 finalizer::

    key = mix64(mix64(base_seed) ^ stream_index)

and the key seeds numpy's counter-based ``Philox`` bit generator.  Philox
output depends only on its key and counter, so the same pair reproduces the
same draws on every platform.  Trajectories further split their own seed into
numbered substreams (``derive_stream(seed, CLOCK)`` and so on) so that, for
instance, the Poisson clock is not perturbed by how many draws a jump needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

MASK64 = (1 << 64) - 1

# substream indices used inside a single trajectory
CLOCK = 0
MARKS = 1
NOISE = 2
BOOTSTRAP = 0xB0075


def mix64(value: int) -> int:
    """SplitMix64 finalizer: a bijective 64-bit avalanche mix."""
    z = (value + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class RngStream:
    base_seed: int
    stream_index: int

    @property
    def key(self) -> int:
        return mix64(mix64(self.base_seed & MASK64) ^ (self.stream_index & MASK64))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.key))


def derive_stream(base_seed: int, index: int) -> RngStream:
    if index < 0:
        raise DomainError(f"stream index must be non-negative, got {index}")
    return RngStream(int(base_seed) & MASK64, int(index))


def substream(seed: int, index: int) -> np.random.Generator:
    """Generator for substream ``index`` of a trajectory seed."""
    return derive_stream(seed, index).generator()
