"""Reproducible random streams.

Measurement atoms come from counter-based Philox streams keyed by
``(seed, atom_index)``, so atom ``i`` does not depend on how many atoms
were drawn before it. Normal variates use the Box-Muller transform on
53-bit uniforms rather than numpy's ziggurat sampler.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def atom_stream(seed: int, index: int) -> np.random.Generator:
    """Philox generator for one measurement atom."""
    key = np.array([seed & _MASK64, index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def box_muller(gen: np.random.Generator, size: int) -> np.ndarray:
    """``size`` standard normals from pairs of uniforms."""
    half = (size + 1) // 2
    u1 = 1.0 - gen.random(half)  # (0, 1]
    u2 = gen.random(half)
    rad = np.sqrt(-2.0 * np.log(u1))
    ang = 2.0 * np.pi * u2
    out = np.empty(2 * half)
    out[0::2] = rad * np.cos(ang)
    out[1::2] = rad * np.sin(ang)
    return out[:size]


def atom_normals(seed: int, index: int, size: int) -> np.ndarray:
    return box_muller(atom_stream(seed, index), size)


def stream(seed: int, *tags: int) -> np.random.Generator:
    """General-purpose generator for non-atom randomness (signals, noise, probes).

    Tags separate purposes; the key space is disjoint from :func:`atom_stream`
    because the seed is routed through a SeedSequence.
    """
    ss = np.random.SeedSequence([seed & _MASK64, *[t & _MASK64 for t in tags]])
    return np.random.Generator(np.random.Philox(ss))


# stream tags used across the package
TAG_SIGNAL = 1
TAG_NOISE = 2
TAG_SHARPNESS = 3
TAG_LIPSCHITZ = 4
TAG_RIP = 5
TAG_SUPPORT = 6
