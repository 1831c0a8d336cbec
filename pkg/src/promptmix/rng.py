"""Deterministic, platform-stable derivation of independent rng streams."""
from __future__ import annotations

import hashlib
import random


def derive_rng(*parts: object) -> random.Random:
    """Build a Random seeded from a hash of the given parts.

    Streams derived from distinct part tuples are independent; the same parts
    always yield the same stream, regardless of process, thread, or platform.
    """
    material = "\x1f".join(repr(p) for p in parts)
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:16], "big"))
