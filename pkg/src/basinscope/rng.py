"""Deterministic PRNG streams with Gaussian and uniform-in-ball sampling.

SplitMix64 expands a user seed into xoshiro256++ state; the stream id keeps
independent uses (data, init, batch order, noise, sampling) on separate,
non-overlapping sequences. Everything is integer arithmetic mod 2^64, so a
given (seed, stream_id) pair produces the same sequence on every platform.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import DomainError

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(x: int) -> int:
    """SplitMix64 finalizer: a well-dispersed 64-bit hash of ``x``."""
    z = x & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def derive_stream_id(*parts: int) -> int:
    """Fold integer parts into one stream id (order-sensitive)."""
    sid = 0
    for part in parts:
        sid = mix64((sid + _GOLDEN) ^ (part & _MASK64))
    return sid


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class RngStream:
    """xoshiro256++ stream identified by (seed, stream_id).

    ``position`` counts raw 64-bit draws, so a stream serialized as
    (seed, stream_id, position) resumes the identical sequence.
    """

    __slots__ = ("seed", "stream_id", "position", "_s")

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = seed & _MASK64
        self.stream_id = stream_id & _MASK64
        self.position = 0
        state = (self.seed ^ mix64(self.stream_id)) & _MASK64
        s = []
        for _ in range(4):
            state = (state + _GOLDEN) & _MASK64
            s.append(mix64(state))
        if not any(s):
            s[0] = 1
        self._s = s

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s0 + s3) & _MASK64, 23) + s0) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        self.position += 1
        return result

    def _raw_block(self, n: int) -> np.ndarray:
        """n raw 64-bit outputs as uint64 (tight loop for bulk draws)."""
        s0, s1, s2, s3 = self._s
        out = np.empty(n, dtype=np.uint64)
        mask = _MASK64
        for i in range(n):
            r = (s0 + s3) & mask
            out[i] = (((r << 23) | (r >> 41)) + s0) & mask
            t = (s1 << 17) & mask
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) | (s3 >> 19)) & mask
        self._s = [s0, s1, s2, s3]
        self.position += n
        return out

    def uniform(self, n: int | None = None):
        """Uniform doubles in [0, 1) using the top 53 bits per draw."""
        if n is None:
            return (self.next_u64() >> 11) * 2.0**-53
        block = self._raw_block(n)
        return (block >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def randint_below(self, bound: int) -> int:
        """Unbiased integer in [0, bound) via rejection sampling."""
        if bound <= 0:
            raise DomainError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % bound

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n): swap a[i], a[j<=i] for i = n-1..1."""
        a = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.randint_below(i + 1)
            a[i], a[j] = a[j], a[i]
        return a

    def state(self) -> tuple[int, int, int]:
        return (self.seed, self.stream_id, self.position)

    @classmethod
    def restore(cls, seed: int, stream_id: int, position: int) -> "RngStream":
        """Rebuild a stream and fast-forward to ``position`` raw draws."""
        rng = cls(seed, stream_id)
        chunk = 1 << 14
        remaining = position
        while remaining > 0:
            k = min(chunk, remaining)
            rng._raw_block(k)
            remaining -= k
        return rng

    def split(self, *parts: int) -> "RngStream":
        """Child stream keyed off this stream's id plus extra parts."""
        return RngStream(self.seed, derive_stream_id(self.stream_id, *parts))


def gaussian(rng: RngStream, n: int, std: float) -> np.ndarray:
    """i.i.d. N(0, std^2) samples via Box-Muller on the deterministic stream.

    Consumes exactly 2*ceil(n/2) raw draws so replay does not depend on n's
    parity history.
    """
    if std < 0:
        raise DomainError("std must be non-negative")
    pairs = (n + 1) // 2
    u = rng._raw_block(2 * pairs)
    # u1 in (0, 1] to keep log finite; u2 in [0, 1)
    u1 = ((u[:pairs] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
    u2 = (u[pairs:] >> np.uint64(11)).astype(np.float64) * 2.0**-53
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * math.pi * u2
    z = np.empty(2 * pairs, dtype=np.float64)
    z[0::2] = r * np.cos(theta)
    z[1::2] = r * np.sin(theta)
    return std * z[:n]


def uniform_in_ball(rng: RngStream, center: Sequence[float] | np.ndarray, radius: float) -> np.ndarray:
    """Uniform sample from the closed n-ball around ``center``.

    Gaussian direction normalized to the sphere, then scaled by
    radius * U^(1/n) so the radial CDF is r^n.
    """
    if radius < 0:
        raise DomainError("radius must be non-negative")
    center = np.asarray(center, dtype=np.float64)
    n = center.size
    if radius == 0:
        return center.copy()
    while True:
        direction = gaussian(rng, n, 1.0)
        norm = math.sqrt(float(np.dot(direction, direction)))
        if norm > 0:
            break
    r = radius * rng.uniform() ** (1.0 / n)
    return center + direction * (r / norm)
