"""Shared helpers: seeded random streams and error types."""
from __future__ import annotations

import zlib

import numpy as np


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class DataError(ValueError):
    """Malformed, missing or inconsistent dataset input."""


class NumericalError(ArithmeticError):
    """A loss or gradient became non-finite."""


def make_rng(seed: int, *purpose: object) -> np.random.Generator:
    """Return a Philox stream keyed by ``seed`` and a purpose path.

    Philox is counter based, so streams are portable across platforms and
    independent for distinct purposes, e.g. ``make_rng(3, "train", 2)``.
    """
    words = [int(seed) & 0xFFFFFFFF]
    for part in purpose:
        words.append(zlib.crc32(str(part).encode("utf-8")))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))
