"""Deterministic random streams.

All randomness in the library flows through one counter-based generator
(Philox).  Child streams are keyed by ``hash(seed, label, index)`` so that
parallel replicates draw from independent, reproducible streams regardless
of scheduling order.  Bit-reproducibility is guaranteed within this
implementation only.
"""

import hashlib

import numpy as np


def stream_key(seed: int, label: str, index: int = 0) -> np.ndarray:
    """Return the 128-bit Philox key for stream (seed, label, index)."""
    raw = f"{int(seed)}|{label}|{int(index)}".encode()
    digest = hashlib.blake2b(raw, digest_size=16).digest()
    return np.frombuffer(digest, dtype=np.uint64)


def child_rng(seed: int, label: str, index: int = 0) -> np.random.Generator:
    """A Generator on the Philox stream keyed by (seed, label, index)."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, label, index)))


def child_seed(seed: int, label: str, index: int = 0) -> int:
    """Derive a 63-bit integer sub-seed, for nesting labelled streams."""
    return int(stream_key(seed, label, index)[0] >> 1)
