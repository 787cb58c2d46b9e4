"""Stable seed derivation.

Every random stream in the package is seeded from a master seed plus a
label and a few integer indices, hashed with SHA-256. The mapping never
depends on global state, process id, thread id or wall-clock time.
"""

from __future__ import annotations

import hashlib


def derive_seed(master: int, name: str, *indices: int) -> int:
    """Return a 63-bit seed for the stream ``(master, name, *indices)``."""
    key = ":".join([str(int(master)), name, *(str(int(i)) for i in indices)])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF
