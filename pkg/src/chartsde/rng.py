"""Named, reproducible random streams.

Every source of randomness in a run is derived from one master seed plus a
short string label, so changing how one stage consumes randomness can never
perturb another stage.  Streams for weight init, batching, the landmark
candidate pool, and simulation noise all go through :func:`stream`.
"""

from __future__ import annotations

import numpy as np


def _label_entropy(label: str) -> list[int]:
    return list(label.encode("utf-8"))


def seed_sequence(master_seed: int, label: str) -> np.random.SeedSequence:
    """SeedSequence for (master_seed, label); stable across processes."""
    return np.random.SeedSequence([int(master_seed)] + _label_entropy(label))


def stream(master_seed: int, label: str) -> np.random.Generator:
    """A PCG64 generator owned by the named stream."""
    return np.random.default_rng(seed_sequence(master_seed, label))


def derived_key(master_seed: int, label: str) -> int:
    """A single uint64 derived from (seed, label), e.g. a Philox key word."""
    return int(seed_sequence(master_seed, label).generate_state(1, np.uint64)[0])
