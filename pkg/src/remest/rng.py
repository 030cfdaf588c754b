"""Deterministic random numbers for the simulators.

The generator is SplitMix64 (Steele, Lea & Flood's 64-bit mixer), fixed
permanently so committed fixtures never drift:

* state advances by the golden-ratio increment 0x9E3779B97F4A7C15;
* each output is the finalizer x ^= x>>30; x *= 0xBF58476D1CE4E5B9;
  x ^= x>>27; x *= 0x94D049BB133111EB; x ^= x>>31;
* uniforms take the top 53 bits, ``(out >> 11) * 2**-53``;
* normals use the Marsaglia polar method (pairwise, with one cached).

Substreams: stream k of run seed s is an independent SplitMix64 whose initial
state is the (k+1)-th output of a SplitMix64 seeded with s.  The simulators
reserve stream 0 for the channel, stream 1 for process noise and stream 2
for measurement noise, so smart and conventional runs of the same seed see
identical channel realizations.

The compiled simulation kernel re-implements exactly this arithmetic in C;
this module is the reference implementation and the sampling API.
"""

from __future__ import annotations

import math

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

CHANNEL_STREAM = 0
PROCESS_STREAM = 1
MEASUREMENT_STREAM = 2


def _mix(x: int) -> int:
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK
    x ^= x >> 31
    return x


class SplitMix64:
    """SplitMix64 stream with uniform and Gaussian draws."""

    __slots__ = ("state", "_cached")

    def __init__(self, seed: int):
        self.state = seed & _MASK
        self._cached = None

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK
        return _mix(self.state)

    def uniform(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0 ** -53

    def gauss(self) -> float:
        """Standard normal via the polar method."""
        if self._cached is not None:
            g, self._cached = self._cached, None
            return g
        while True:
            u = 2.0 * self.uniform() - 1.0
            v = 2.0 * self.uniform() - 1.0
            s = u * u + v * v
            if 0.0 < s < 1.0:
                f = math.sqrt(-2.0 * math.log(s) / s)
                self._cached = v * f
                return u * f


def substream(seed: int, k: int) -> SplitMix64:
    """Independent substream k of a 64-bit run seed."""
    if k < 0:
        raise ValueError("substream index must be nonnegative")
    root = SplitMix64(seed)
    state = 0
    for _ in range(k + 1):
        state = root.next_u64()
    return SplitMix64(state)
