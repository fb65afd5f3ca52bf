"""Labelled seed derivation.

One master seed fans out into independent streams by hashing it together with
a label path, e.g. ``derive_seed(master, "sample", round)``. The hash is
stable across processes and platforms (no reliance on ``hash()``).
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *labels: object) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master)).encode())
    for label in labels:
        h.update(b"\x1f")
        h.update(repr(label).encode())
    return int.from_bytes(h.digest(), "little")


def make_rng(master: int, *labels: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *labels))
