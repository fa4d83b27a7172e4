"""Small shared helpers: deterministic seeding and canonical JSON."""

from __future__ import annotations

import hashlib
import json


def derive_seed(*parts) -> int:
    """Derive a reproducible 63-bit seed from a mix of ints and strings.

    Python's builtin hash() is salted per process, so all seed derivation in
    the code base goes through this helper instead.
    """
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "big") & (2**63 - 1)


def canonical_json(obj) -> str:
    """Stable JSON rendering used for hashing and on-disk artifacts."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def short_digest(obj, length: int = 10) -> str:
    """Short stable identifier for a JSON-serializable object."""
    payload = canonical_json(obj).encode("utf-8")
    return hashlib.blake2b(payload, digest_size=16).hexdigest()[:length]
