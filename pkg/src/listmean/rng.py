"""Seed-stable random streams.

Every random draw in the package flows through a Philox counter-based
generator keyed by ``(seed, stream tags)``.  The key derivation is fixed so
that any implementation can reproduce a stream:

* form the ASCII string ``"{seed}|{tag0}/{tag1}/..."``,
* take the first 16 bytes of its SHA-256 digest,
* interpret them as a little-endian 128-bit integer Philox key
  (counter starts at zero).

Tags are short strings or integers naming the consumer, e.g.
``stream(7, "filter")`` or ``stream(7, "center", 2, "search")``.
"""

from __future__ import annotations

import hashlib

import numpy as np


def philox_key(seed: int, *tags) -> int:
    """128-bit Philox key derived from a root seed and stream tags."""
    label = f"{int(seed)}|" + "/".join(str(t) for t in tags)
    digest = hashlib.sha256(label.encode("ascii")).digest()
    return int.from_bytes(digest[:16], "little")

def stream(seed: int, *tags) -> np.random.Generator:
    """Independent, reproducible generator for ``(seed, *tags)``."""
    return np.random.Generator(np.random.Philox(key=philox_key(seed, *tags)))
