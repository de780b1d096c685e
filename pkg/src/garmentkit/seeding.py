"""Deterministic seed derivation.

Every stochastic stage of the pipeline draws from its own child stream of a
per-sample root, so samples can be regenerated in isolation and inserting a
new stage never shifts the draws of existing ones.
"""

from __future__ import annotations

import numpy as np

# Fixed child index per pipeline stage. Append only; reordering changes
# every downstream stream.
STAGE_TEMPLATE = 0
STAGE_PHYSICS = 1
STAGE_DROP = 2
STAGE_CAMERA = 3
STAGE_SCENE = 4


def sample_seed_sequence(run_seed: int, sample_index: int) -> np.random.SeedSequence:
    """Root SeedSequence for one sample, a pure function of (run_seed, index)."""
    return np.random.SeedSequence(entropy=(int(run_seed), int(sample_index)))


def stage_rng(root: np.random.SeedSequence, stage: int, extra: int | None = None) -> np.random.Generator:
    """Generator for one pipeline stage of one sample.

    Args:
        root: per-sample root from :func:`sample_seed_sequence`.
        stage: one of the STAGE_* constants.
        extra: optional sub-index (e.g. fold stage for per-frame cameras).
    """
    key = (stage,) if extra is None else (stage, extra)
    child = np.random.SeedSequence(entropy=root.entropy, spawn_key=key)
    return np.random.default_rng(child)


def rng_from_seed(seed: int) -> np.random.Generator:
    """Plain generator for standalone API calls that take an integer seed."""
    return np.random.default_rng(int(seed))
