"""Named, independent random substreams.

One root seed drives every stage of a run. Each stage pulls its own
substream by name, so adding or reordering stages never perturbs the
draws of the others.
"""

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator for the (seed, name) substream; stable across runs."""
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])
