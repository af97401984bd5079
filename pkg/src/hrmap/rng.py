"""xoshiro256** seeded through splitmix64.

Every random draw in the simulator goes through this generator so a scenario
replays bit-identically from its seed. Derived floats use fixed recipes:

* ``uniform``: top 53 bits scaled by 2**-53, giving [0, 1).
* ``normal``: Box-Muller, cosine branch only (one normal per two uniforms).
* ``normals``: Box-Muller using both branches (cosine then sine per pair).
* ``poisson``: Knuth multiplication (only used with small rates).
"""

from __future__ import annotations

import math
from typing import Iterable

MASK64 = (1 << 64) - 1
_TWO_PI = 2.0 * math.pi
_INV_2_53 = 1.0 / (1 << 53)


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def mix_seed(*parts: int) -> int:
    """Fold several integers into one 64-bit seed (order sensitive)."""
    acc = 0x6A09E667F3BCC908
    for part in parts:
        acc, out = splitmix64((acc ^ (int(part) & MASK64)) & MASK64)
        acc = out
    return acc


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    __slots__ = ("_s",)

    def __init__(self, seed: int):
        sm = int(seed) & MASK64
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        if not any(s):
            s[0] = 1
        self._s = s

    @classmethod
    def derive(cls, *parts: int) -> "Xoshiro256":
        """Independent stream keyed by a tuple of integers."""
        return cls(mix_seed(*parts))

    @property
    def state(self) -> tuple[int, int, int, int]:
        return tuple(self._s)  # type: ignore[return-value]

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        u = (self.next_u64() >> 11) * _INV_2_53
        return low + (high - low) * u

    def normal(self, mean: float = 0.0, sigma: float = 1.0) -> float:
        u1 = 1.0 - (self.next_u64() >> 11) * _INV_2_53  # (0, 1]
        u2 = (self.next_u64() >> 11) * _INV_2_53
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(_TWO_PI * u2)
        return mean + sigma * z

    def integer(self, n: int) -> int:
        """Uniform integer in [0, n) by multiply-shift (bias < 2**-32 for small n)."""
        if n <= 0:
            raise ValueError("n must be positive")
        return ((self.next_u64() >> 32) * n) >> 32

    def poisson(self, lam: float) -> int:
        if lam < 0:
            raise ValueError("rate must be non-negative")
        if lam == 0:
            return 0
        limit = math.exp(-lam)
        k = 0
        p = self.uniform()
        while p > limit:
            k += 1
            p *= self.uniform()
        return k

    def normals(self, n: int, sigma: float = 1.0) -> list[float]:
        """``n`` normals; pairs come from one Box-Muller draw (cos, then sin)."""
        s0, s1, s2, s3 = self._s
        out = []
        cos, sin, log, sqrt = math.cos, math.sin, math.log, math.sqrt
        while len(out) < n:
            u = []
            for _ in range(2):
                r = (((((s1 * 5) & MASK64) << 7 | ((s1 * 5) & MASK64) >> 57) & MASK64) * 9) & MASK64
                t = (s1 << 17) & MASK64
                s2 ^= s0
                s3 ^= s1
                s1 ^= s2
                s0 ^= s3
                s2 ^= t
                s3 = ((s3 << 45) | (s3 >> 19)) & MASK64
                u.append((r >> 11) * _INV_2_53)
            rad = sqrt(-2.0 * log(1.0 - u[0])) * sigma
            ang = _TWO_PI * u[1]
            out.append(rad * cos(ang))
            out.append(rad * sin(ang))
        self._s = [s0, s1, s2, s3]
        return out[:n]

    def choice(self, items: Iterable):
        seq = list(items)
        return seq[self.integer(len(seq))]
