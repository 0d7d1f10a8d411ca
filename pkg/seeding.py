import hashlib
from typing import Union

import numpy as np

_MASK_63 = (1 << 63) - 1


def derive_seed(master: int, *parts: object) -> int:
    """Derive a deterministic child seed from a master seed and a task label.

    The label parts are joined with "|" and hashed with SHA-256; the first 8 bytes of
    the digest are XOR-ed with the master seed. The same (master, parts) always yields
    the same seed, across processes and platforms.

    Args:
        master: the master seed of the run.
        parts: labels identifying the task, e.g. ("gridworld-1", "bc", 3).

    Returns:
        Non-negative integer seed below 2**63.
    """
    joined = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(joined.encode("utf-8")).digest()
    return (int(master) ^ int.from_bytes(digest[:8], "big")) & _MASK_63


def make_rng(rng: Union[np.random.Generator, int, None]):
    """Return (generator, seed) for a generator, an integer seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng, None
    if rng is None:
        return np.random.default_rng(), None
    return np.random.default_rng(int(rng)), int(rng)
