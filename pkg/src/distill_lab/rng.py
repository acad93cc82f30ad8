"""Named counter-based random streams.

Every random draw in the library comes from a Philox generator whose key is
a hash of (base seed, seed index, purpose tag, ...). Adding runs, variants or
purposes therefore never shifts the numbers any existing run sees.
"""

import hashlib

import numpy as np


def _key(*parts) -> int:
    text = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(text).digest()[:16], "little")


def stream(base_seed: int, *tags) -> np.random.Generator:
    """Independent generator for ``(base_seed, *tags)``.

    Args:
        base_seed: Experiment-level seed from the config.
        *tags: Any printable identifiers, e.g. seed index and purpose.

    Returns:
        A fresh ``numpy.random.Generator`` backed by Philox.
    """
    return np.random.Generator(np.random.Philox(key=_key(int(base_seed), *tags)))


def prior_seed(base_seed: int, seed_index: int, dim: int) -> np.ndarray:
    """The fixed prior draw for a seed index; shared by every variant."""
    return stream(base_seed, int(seed_index), "eps_star").standard_normal(dim)
