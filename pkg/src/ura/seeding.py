"""Deterministic seed derivation.

Every pipeline stage draws its seed from one root seed through a
documented hash chain: child = first 8 bytes (little-endian) of
SHA-256("<root>:<label>"). One root seed in a manifest therefore
reproduces the whole run.
"""

import hashlib


def derive_seed(root_seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{root_seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")
