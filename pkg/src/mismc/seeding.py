"""Deterministic derivation of independent random streams."""

from __future__ import annotations

from typing import Sequence

import numpy as np


def seed_stream(master_seed: int, path: Sequence[int] = ()) -> np.random.Generator:
    """Generator keyed by ``(master_seed, *path)``.

    ``path`` is a tuple such as ``(alpha_x, alpha_t, replicate)``; identical
    inputs give identical streams and distinct paths give independent ones.
    The empty path is the master stream itself.
    """
    seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.PCG64(seq))
