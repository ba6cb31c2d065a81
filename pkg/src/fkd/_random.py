"""Named random substreams derived from a single run seed."""
import zlib

import numpy as np


def substream(seed, name):
    """Return a Generator for stream ``name`` that depends only on ``(seed, name)``.

    Streams with different names never share state, so drawing more numbers
    for initialization cannot shift what the split or the generator sees.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, key]))
