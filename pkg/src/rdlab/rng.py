"""Seeded randomness: every draw comes from a counter-based Philox stream
keyed by (seed, stream name), so ensemble members are reproducible in any
execution order."""

import hashlib

import numpy as np

from .fields import BoxDomain, Field, l2_norm


def generator(seed: int, stream: str = "") -> np.random.Generator:
    digest = hashlib.blake2b(stream.encode(), digest_size=8).digest()
    key = [int(seed) & (2**64 - 1), int.from_bytes(digest, "little")]
    return np.random.Generator(np.random.Philox(key=key))


def random_field(domain: BoxDomain, rng: np.random.Generator, l2: float | None = None,
                 decay: float = 1.0, modes: int | None = None) -> Field:
    """Gaussian sine coefficients damped like |k|^-decay, optionally
    restricted to the first `modes` per axis and rescaled to L2 norm `l2`."""
    ks = domain.mode_numbers()
    weight = np.sqrt(sum(k.astype(float) ** 2 for k in ks)) ** (-decay)
    if modes is not None:
        weight = weight * np.all([k <= modes for k in ks], axis=0)
    u = Field(domain, rng.standard_normal(domain.shape) * weight)
    if l2 is not None:
        norm = l2_norm(u)
        u = u * (l2 / norm) if norm > 0 else u
    return u


def log_uniform(rng: np.random.Generator, lo: float, hi: float, size=None):
    return np.exp(rng.uniform(np.log(lo), np.log(hi), size))
