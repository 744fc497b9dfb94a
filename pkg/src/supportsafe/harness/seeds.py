"""Per-cell random streams derived from one root seed."""

import zlib

import numpy as np


def cell_key(*parts):
    return zlib.crc32("|".join(str(p) for p in parts).encode("utf-8"))


def cell_seed(root, experiment, task, method, condition, seed_index):
    """SeedSequence keyed on (experiment, task, method, condition, seed index)."""
    return np.random.SeedSequence(int(root), spawn_key=(cell_key(experiment, task, method, condition), int(seed_index)))


def cell_rng(root, experiment, task, method, condition, seed_index):
    return np.random.default_rng(cell_seed(root, experiment, task, method, condition, seed_index))
