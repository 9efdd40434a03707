"""64-bit hashing shared by every stage.

All fingerprints, feature buckets and shingles use XXH64 (the published
xxHash 64-bit function) over UTF-8 bytes. The seed is passed straight
through as the XXH64 seed, so any conforming XXH64 implementation
reproduces the same values. Test vectors live in ``tests/test_hashing.py``.
"""

from __future__ import annotations

import xxhash

MASK64 = (1 << 64) - 1


def hash64(data: str | bytes, seed: int = 0) -> int:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return xxhash.xxh64_intdigest(data, seed & MASK64)


def line_fingerprint(line: str) -> int:
    """Fingerprint of a line after lowercase + trim normalization."""
    return xxhash.xxh64_intdigest(line.strip().lower().encode("utf-8"))
