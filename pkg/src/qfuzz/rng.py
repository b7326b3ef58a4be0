"""Counter-based pseudorandom stream.

Draw ``n`` of a stream is ``splitmix64(seed + n * GOLDEN)``, so the whole
sequence is a pure function of ``(seed, counter)`` and can be reproduced
bit-exactly on any platform (or in any language with 64-bit integers).
"""

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x):
    x &= MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(seed, stream):
    """Independent seed for a named sub-stream (e.g. engine vs. policy)."""
    h = seed & MASK64
    for ch in str(stream).encode():
        h = splitmix64(h ^ ch)
    return h


class RngStream:
    """Seedable stream; all mutator randomness flows through one of these."""

    __slots__ = ("seed", "counter")

    def __init__(self, seed, counter=0):
        self.seed = seed & MASK64
        self.counter = counter & MASK64

    def __repr__(self):
        return f"RngStream(seed={self.seed:#x}, counter={self.counter})"

    def next_u64(self):
        self.counter = (self.counter + 1) & MASK64
        x = (self.seed + self.counter * GOLDEN) & MASK64
        x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
        return x ^ (x >> 31)

    def below(self, n):
        """Uniform integer in ``[0, n)`` via 64x64 multiply-high."""
        if n <= 0:
            raise ValueError("below() needs n > 0")
        return (self.next_u64() * n) >> 64

    def between(self, lo, hi):
        """Uniform integer in ``[lo, hi]`` inclusive."""
        return lo + self.below(hi - lo + 1)

    def random(self):
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def byte(self):
        return self.next_u64() & 0xFF

    def fork(self, stream):
        return RngStream(derive_seed(self.seed, stream))

    def state(self):
        return self.seed, self.counter
