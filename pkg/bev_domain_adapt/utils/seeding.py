"""Seed derivation: every random stream is a child of one master seed."""
import numpy as np

# Stream keys keep independent consumers of the same frame seed apart.
STREAM_GENERATION = 0
STREAM_RASTER = 1
STREAM_MODEL_INIT = 2
STREAM_SCHEDULE = 3


def derive_seed(master_seed: int, *keys: int) -> int:
    """Deterministic 63-bit child seed of ``master_seed`` for the given key path."""
    sequence = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in keys))
    return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def make_rng(master_seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in keys)))
