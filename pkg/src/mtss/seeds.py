"""Deterministic RNG streams derived from one experiment seed.

Every consumer gets its own fixed stream tag so that e.g. dropout draws never
depend on whether polarity sampling ran first, and so single-task and MTL
runs see identical per-task initializations and batch orders.
"""

import numpy as np

POL_SAMPLE = 1
SPLIT = 2
GLOVE_OOV = 3
INIT = 4
DROPOUT = 5
BATCH = 6
SUBSET = 7
SYNTH = 8

TASK_IDS = {"pol": 0, "subj": 1}


def derive_rng(*parts):
    """np.random.Generator seeded by an integer path (stable across runs)."""
    return np.random.default_rng([int(p) & 0xFFFFFFFF for p in parts])


def name_tag(name):
    """Stable small integer for a parameter name (crc32, not hash())."""
    import zlib
    return zlib.crc32(name.encode("utf-8"))
