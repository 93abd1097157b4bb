"""Labelled random streams derived from one experiment seed."""

from __future__ import annotations

import zlib

import numpy as np

LABELS = ("data", "init", "train", "eval")


def stream(seed: int, label: str, *extra: int) -> np.random.Generator:
    """Independent generator for ``(seed, label, *extra)``.

    Streams with different labels never share state, so e.g. adding
    evaluation calls cannot shift the training sequence.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    key = [int(seed), zlib.crc32(label.encode("utf-8")), *(int(e) for e in extra)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


def child_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))
