"""Deterministic 64-bit seed derivation.

Every random stream in the pipeline (hyperplanes, weight init, shuffles,
synthetic data) is seeded through the same bit-exact mixing scheme so that
results reproduce across runs and platforms:

* ``splitmix64(x)``: one step of the splitmix64 generator with state ``x``,
  i.e. ``x += 0x9E3779B97F4A7C15; z = x; z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
  z ^= z >> 27; z *= 0x94D049BB133111EB; return z ^ (z >> 31)`` with all
  arithmetic mod 2**64.
* ``fnv1a64(s)``: FNV-1a over the UTF-8 bytes of ``s`` (offset basis
  0xCBF29CE484222325, prime 0x100000001B3), used to turn modality names and
  other strings into 64-bit words.
* ``mix64(*words)``: fold the words left to right, ``h = splitmix64(h ^ w)``
  starting from ``h = 0``.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def splitmix64(x: int) -> int:
    """One splitmix64 step from state ``x`` (matches the reference stream)."""
    z = (x + _GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def fnv1a64(s: str) -> int:
    h = _FNV_OFFSET
    for byte in s.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def mix64(*words: int) -> int:
    h = 0
    for w in words:
        h = splitmix64(h ^ (w & _MASK64))
    return h


def rng_for(*words: int) -> np.random.Generator:
    """PCG64 generator seeded with ``mix64(*words)``."""
    return np.random.Generator(np.random.PCG64(mix64(*words)))
