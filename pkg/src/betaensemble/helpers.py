from typing import Any

import numpy as np


def random_stream(seed: int, *key: int) -> np.random.Generator:
    """
    Counter-based random stream for the task identified by ``key``. Streams with
    distinct keys are independent and each is reproducible in isolation.

    :param seed: Experiment seed.
    :param key: Task indices, e.g. ``(degree_index, beta_index, chain)``.
    """
    sequence = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(sequence))


def jsonable(value: Any) -> Any:
    """Convert numpy scalars and arrays (recursively) into plain Python values."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    return value
