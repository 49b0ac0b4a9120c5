"""Named, independent random substreams derived from one master seed."""
from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, *names: str | int) -> int:
    """Derive a 64-bit seed for the component identified by ``names``."""
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for name in names:
        key.append(zlib.crc32(name.encode()) if isinstance(name, str) else int(name))
    state = np.random.SeedSequence(key).generate_state(1, np.uint64)
    return int(state[0])
