"""Counter-based random streams.

Every uniform drawn anywhere in the package comes from a pure function
word(key, i) of a 64-bit stream key and a 64-bit draw counter, so any
draw can be produced at random access.  This is what makes worker
parallelism deterministic: worker w of a run with seed s owns the
stream key derived from (s, w) and a private counter starting at 0,
and no ordering between workers matters.

The word function is the splitmix64 output function evaluated at state
key + (i+1)*GOLDEN, i.e. the i-th output of a splitmix64 generator
seeded with `key`.  Uniforms are mapped to the open interval (0, 1):
((word >> 11) + 0.5) * 2^-53 is never 0.0 and never 1.0, so log(u) is
always finite and no boundary re-draw is ever triggered.

The same constants are re-implemented in the numpy batch kernels and in
the compiled core; changing them is a format break for reproducibility.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
STREAM_SALT = 0xA24BAED4963EE407


def mix64(z: int) -> int:
    """Finalizer of splitmix64 (Stafford mix 13). Bijective on 64 bits."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream_key(seed: int, stream: int) -> int:
    """Mix a user seed and a stream index (worker number) into a key."""
    return mix64(mix64(seed & MASK64) ^ ((stream * STREAM_SALT) & MASK64))


def word_at(key: int, counter: int) -> int:
    """The counter-th 64-bit word of the stream."""
    return mix64((key + ((counter + 1) * GOLDEN)) & MASK64)


def uniform_from_word(w: int) -> float:
    # centered 52-bit grid: every value of (k + 0.5) * 2^-52 for
    # k < 2^52 is exactly representable, so the result lies in the open
    # interval (0, 1) with no rounding to either endpoint.  (One more
    # bit would round the top value to exactly 1.0.)
    return ((w >> 12) + 0.5) * 2.0**-52


class RandomStream:
    """One worker's stream: key fixed by (seed, stream), counter advances.

    jump_to(c) gives random access, used by chunked drivers to restart a
    stream mid-run without replaying draws.
    """

    __slots__ = ("key", "counter", "seed", "stream")

    def __init__(self, seed: int, stream: int = 0, counter: int = 0):
        self.seed = seed & MASK64
        self.stream = stream
        self.key = stream_key(seed, stream)
        self.counter = counter

    def uniform(self) -> float:
        u = uniform_from_word(word_at(self.key, self.counter))
        self.counter += 1
        return u

    def uniforms(self, k: int) -> list[float]:
        return [self.uniform() for _ in range(k)]

    def jump_to(self, counter: int) -> None:
        self.counter = counter

    def __repr__(self):
        return (f"RandomStream(seed={self.seed}, stream={self.stream}, "
                f"counter={self.counter})")
