"""Named random streams.

Every stochastic component draws from ``stream(seed, label, ...)``: a Philox
(counter-based, 64-bit) generator keyed by a hash of the master seed and the
labels. Adding a new stream never perturbs the draws of existing ones.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(seed: int, *labels) -> int:
    text = "/".join([str(int(seed))] + [str(x) for x in labels])
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=16).digest(), "little")


def stream(seed: int, *labels) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *labels)))


def complex_normal(rng: np.random.Generator, shape, var=1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian with (broadcastable) variance ``var``."""
    z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return np.sqrt(np.asarray(var) / 2.0) * z
