"""Deterministic replica seeding: master seed + stable hash of the task name
and replica index.  Independent experiments sharing a master seed draw
non-colliding streams, and reruns are bit-reproducible."""

from __future__ import annotations

import hashlib

__all__ = ["replica_seed"]


def replica_seed(master_seed, name, index):
    payload = f"{int(master_seed)}:{name}:{int(index)}".encode()
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:8], "little")
