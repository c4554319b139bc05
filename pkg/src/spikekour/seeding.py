"""Named random substreams derived from one root seed."""

import zlib

import numpy as np


def substream(root, *names):
    """Generator for (root, name, ...); e.g. substream(7, "env", 3)."""
    key = [zlib.crc32(str(n).encode()) for n in names]
    return np.random.default_rng(np.random.SeedSequence(int(root), spawn_key=key))


def subseed(root, *names):
    return int(substream(root, *names).integers(0, 2**31 - 1))
