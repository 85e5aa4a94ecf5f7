"""Per-path random substreams.

Every path owns independent Philox streams keyed by ``(seed, path_index,
purpose, *extra)``. A path's draws therefore never depend on how many other
paths are simulated, in which order, or by which worker.
"""

from __future__ import annotations

import numpy as np

FACTORS = 0
DEFAULT_TIME = 1
INNER = 2
REFERENCE_TIME = 3


def substream(seed: int, path_index: int, purpose: int, *extra: int) -> np.random.Generator:
    if seed < 0 or path_index < 0:
        raise ValueError("seed and path_index must be non-negative")
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(path_index), int(purpose), *map(int, extra)))
    return np.random.Generator(np.random.Philox(ss))


def factor_normals(seed: int, path_indices, n_steps: int, n_factors: int = 3) -> np.ndarray:
    """Standard normals of shape ``(len(path_indices), n_steps, n_factors)``."""
    idx = np.atleast_1d(np.asarray(path_indices, dtype=np.int64))
    out = np.empty((idx.size, n_steps, n_factors))
    for row, p in enumerate(idx):
        out[row] = substream(seed, p, FACTORS).standard_normal((n_steps, n_factors))
    return out


def uniforms(seed: int, path_indices, purpose: int, k: int) -> np.ndarray:
    """``k`` U(0,1) draws per path, shape ``(len(path_indices), k)``."""
    idx = np.atleast_1d(np.asarray(path_indices, dtype=np.int64))
    out = np.empty((idx.size, k))
    for row, p in enumerate(idx):
        out[row] = substream(seed, p, purpose).random(k)
    return out
