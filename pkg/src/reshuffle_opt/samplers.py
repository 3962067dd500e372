"""Seeded randomness: per-trial streams, permutations, and ball draws.

Permutations are reported 1-based (component indices run 1..n everywhere in
the public API); callers that want array indices subtract one.
"""

import hashlib

import numpy as np

from .errors import ConfigurationError


class RngStream:
    """A reproducible random stream identified by (seed, stream_id).

    Built on the counter-based Philox generator, so distinct stream ids give
    statistically independent sequences without coordination between trial
    workers, and the same pair always replays the same draws.
    """

    def __init__(self, seed, stream_id=0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.Philox(seq))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def sample_permutation(rng, n):
    """Draw a uniform permutation of {1..n} (Fisher-Yates shuffle)."""
    if n < 1:
        raise ConfigurationError("permutation size must be at least 1")
    return rng.generator.permutation(n).astype(np.int64) + 1


def sample_permutations(rng, n, count):
    """Draw `count` independent uniform permutations of {1..n}, one per row."""
    if n < 1:
        raise ConfigurationError("permutation size must be at least 1")
    if count < 0:
        raise ConfigurationError("count must be nonnegative")
    rows = np.tile(np.arange(1, n + 1, dtype=np.int64), (count, 1))
    rng.generator.permuted(rows, axis=1, out=rows)
    return rows


def sample_with_replacement(rng, n, count):
    """Draw `count` i.i.d. uniform indices from {1..n}."""
    if n < 1:
        raise ConfigurationError("index range must be at least 1")
    if count < 0:
        raise ConfigurationError("count must be nonnegative")
    return rng.generator.integers(1, n + 1, size=count, dtype=np.int64)


def sample_ball(rng, d, radius):
    """Draw one point uniformly from the closed ball of the given radius.

    Gaussian direction scaled by radius * U^(1/d): the exact uniform law in
    every dimension.
    """
    if d < 1:
        raise ConfigurationError("dimension must be at least 1")
    if radius < 0:
        raise ConfigurationError("radius must be nonnegative")
    direction = rng.generator.standard_normal(d)
    norm = np.linalg.norm(direction)
    while norm == 0.0:  # essentially impossible, kept so the law stays exact
        direction = rng.generator.standard_normal(d)
        norm = np.linalg.norm(direction)
    u = rng.generator.uniform()
    return direction * (radius * u ** (1.0 / d) / norm)


def permutation_digest(indices):
    """64-bit hex digest of an index sequence, stable across platforms."""
    data = np.ascontiguousarray(indices, dtype=">u4").tobytes()
    return hashlib.blake2b(data, digest_size=8).hexdigest()
