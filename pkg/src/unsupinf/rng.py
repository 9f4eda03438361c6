"""Reproducible random streams.

Every random draw in the package comes from a Philox-4x64 counter-based
generator (``numpy.random.Philox``).  A stream is named by a tuple
``(base_seed, tag, index, ...)``; the tuple is hashed with BLAKE2b into the
128-bit Philox key, so streams for different samples, checkpoints or steps
are independent and never depend on evaluation order or thread schedule.

Uniform doubles use the generator's 53-bit mantissa construction and normal
deviates use the Box-Muller transform on top of them.
"""

import hashlib

import numpy as np

__all__ = ["derive_key", "stream", "uniform", "standard_normal", "shuffled_order"]


def derive_key(*parts) -> int:
    """Hash a tuple of ints/strings into a 128-bit integer key."""
    h = hashlib.blake2b(digest_size=16)
    for p in parts:
        if isinstance(p, (bool, np.bool_)):
            p = int(p)
        if isinstance(p, (int, np.integer)):
            token = b"i" + str(int(p)).encode()
        elif isinstance(p, str):
            token = b"s" + p.encode("utf-8")
        else:
            raise TypeError(f"stream key parts must be int or str, got {type(p).__name__}")
        h.update(len(token).to_bytes(4, "little"))
        h.update(token)
    return int.from_bytes(h.digest(), "little")


def stream(*parts) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=derive_key(*parts)))


def uniform(gen, size):
    """Uniform doubles in [0, 1)."""
    return gen.random(size)


def standard_normal(gen, size):
    """Standard normal deviates by Box-Muller, filled in C order."""
    shape = (size,) if np.isscalar(size) else tuple(size)
    n = int(np.prod(shape, dtype=np.int64))
    pairs = (n + 1) // 2
    u1 = 1.0 - gen.random(pairs)  # (0, 1]
    u2 = gen.random(pairs)
    r = np.sqrt(-2.0 * np.log(u1))
    t = 2.0 * np.pi * u2
    out = np.empty(2 * pairs)
    out[0::2] = r * np.cos(t)
    out[1::2] = r * np.sin(t)
    return out[:n].reshape(shape)


def shuffled_order(gen, n):
    """A permutation of range(n) obtained by sorting uniform keys."""
    return np.argsort(gen.random(n), kind="stable")
