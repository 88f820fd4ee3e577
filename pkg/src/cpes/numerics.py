"""Deterministic numeric kernels: cosine, softmax, cross-entropy, and a
counter-based 64-bit RNG whose streams are identical on every platform.

All math runs in float64 regardless of how embeddings are stored on disk,
so accumulation order never shows up in test tolerances.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionMismatch, EmptyInput, IndexOutOfRange

DEGENERATE_NORM = 1e-12

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_SPLIT_SALT = 0x5851F42D4C957F2D


def _mix64(z: int) -> int:
    """splitmix64 finalizer: bijective avalanche mix of a 64-bit word."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class Rng64:
    """Weyl-sequence generator with a splitmix64 output function.

    The state advances by a fixed odd constant, so a block of n outputs can
    be produced vectorized from a counter range without changing the stream.
    """

    __slots__ = ("state",)

    def __init__(self, state: int):
        self.state = state & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK64
        return _mix64(self.state)

    def _raw_block(self, n: int) -> np.ndarray:
        # Vectorized equivalent of n next_u64() calls.
        counters = np.uint64(self.state) + np.uint64(_GOLDEN) * np.arange(
            1, n + 1, dtype=np.uint64
        )
        self.state = (self.state + n * _GOLDEN) & _MASK64
        z = counters
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))

    def uniform(self) -> float:
        # 53-bit mantissa in [0, 1)
        return (self.next_u64() >> 11) * 2.0**-53

    def uniforms(self, n: int) -> np.ndarray:
        return (self._raw_block(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normals(self, n: int) -> np.ndarray:
        """n standard normals via Box-Muller; consumes 2*ceil(n/2) raw draws."""
        pairs = (n + 1) // 2
        # shift into (0, 1] so log() is always finite
        u = ((self._raw_block(2 * pairs) >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u[:pairs]))
        theta = 2.0 * math.pi * u[pairs:]
        out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
        return out[:n]

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n) without modulo bias (rejection sampling)."""
        if n <= 0:
            raise EmptyInput("randint needs n >= 1")
        limit = _MASK64 + 1 - (_MASK64 + 1) % n
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def sample_without_replacement(self, n: int, k: int) -> list[int]:
        """k distinct indices from [0, n), partial Fisher-Yates order."""
        idx = list(range(n))
        for i in range(k):
            j = i + self.randint(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:k]


def rng_split(seed: int, index: int) -> Rng64:
    """Derive an independent child generator from (seed, index).

    Pure function of its arguments: distinct pairs give distinct streams and
    creation order is irrelevant, so parallel consumers stay reproducible.
    """
    return Rng64(_mix64(_mix64(seed) ^ _mix64(index ^ _SPLIT_SALT)))


def derive_seed(seed: int, index: int) -> int:
    """A plain 64-bit child seed, for namespacing independent RNG streams."""
    return rng_split(seed, index).state


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; 0 for near-zero-norm inputs.

    The degenerate-vector policy ranks an (unrealistic) zero patch as
    uninformative instead of erroring.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatch(f"cosine: shapes {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu < DEGENERATE_NORM or nv < DEGENERATE_NORM:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def softmax(scores: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax; entries positive and summing to 1."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise EmptyInput("softmax of empty score vector")
    e = np.exp(scores - np.max(scores))
    return e / np.sum(e)


def cross_entropy(probs: np.ndarray, target: int) -> float:
    """-ln(probs[target]) with the argument clamped at 1e-300."""
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= target < probs.size:
        raise IndexOutOfRange(f"target {target} for {probs.size} classes")
    return -math.log(max(float(probs[target]), 1e-300))
