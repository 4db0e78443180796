"""One master seed fans out to every randomized stage via sha256."""

from __future__ import annotations

import hashlib


def derive_seed(master: int, label: str) -> int:
    """Stable 64-bit sub-seed for (master, label); documented contract."""
    digest = hashlib.sha256(f"{master}/{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
