"""Counter-based random streams keyed by (master_seed, *indices).

Every stream is a Philox generator whose key comes from a SeedSequence with
the indices as spawn key, so a stream depends only on its coordinates and
never on how work was scheduled.
"""

from __future__ import annotations

import numpy as np


def stream(master_seed: int, *indices: int) -> np.random.Generator:
    seq = np.random.SeedSequence(int(master_seed) & (2**64 - 1), spawn_key=tuple(int(i) for i in indices))
    return np.random.Generator(np.random.Philox(seq))


def resample_stream(master_seed: int, user_index: int, resample_index: int) -> np.random.Generator:
    return stream(master_seed, 0, user_index, resample_index)


def user_stream(master_seed: int, user_index: int) -> np.random.Generator:
    """Stream used by the synthetic generator for one user."""
    return stream(master_seed, 1, user_index)


def action_tape(gen: np.random.Generator, T: int) -> np.ndarray:
    """The T uniforms a resample consumes, one per decision time."""
    return gen.random(T)
