"""Deterministic seed derivation.

Every random component in the toolkit draws from a child seed derived by
hashing the master seed together with a component label, so a single
top-level seed pins the whole run and independent components never share
a stream.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *labels: object) -> int:
    """Derive a child seed from ``master`` and a sequence of labels.

    The derivation is SHA-256 over ``"master:label1:label2:..."``, truncated
    to 63 bits, so it is stable across platforms and Python versions.
    """
    text = ":".join([str(int(master)), *(str(label) for label in labels)])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def generator(master: int, *labels: object) -> np.random.Generator:
    """A PCG64 generator seeded with ``derive_seed(master, *labels)``."""
    return np.random.default_rng(derive_seed(master, *labels))
