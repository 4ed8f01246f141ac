"""Counter-based random streams.

Every source of randomness in the project draws from a stream addressed by a
key path such as ``(seed, epoch, batch, sample, "chain-y")``.  Streams with
different paths are statistically independent and any stream can be recreated
from its path alone, so batch order, resume points and parallel execution do
not change what a given sample sees.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream", "stream_key"]


def stream_key(*path) -> bytes:
    """Serialize a key path (ints / strings) into a stable byte string."""
    parts = []
    for item in path:
        if isinstance(item, (bool, np.bool_)):
            raise TypeError("booleans are ambiguous in stream paths; use ints")
        if isinstance(item, (int, np.integer)):
            parts.append(b"i" + str(int(item)).encode("ascii"))
        elif isinstance(item, str):
            parts.append(b"s" + item.encode("utf-8"))
        else:
            raise TypeError(f"unsupported stream path element: {item!r}")
    return b"/".join(parts)


def stream(*path) -> np.random.Generator:
    """Return the deterministic random generator addressed by ``path``.

    The path is hashed to a 128-bit Philox key, so the generator depends only
    on the path values, never on call order.
    """
    digest = hashlib.sha256(stream_key(*path)).digest()
    key = np.frombuffer(digest[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
