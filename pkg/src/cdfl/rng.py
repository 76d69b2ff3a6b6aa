"""Named, independent random streams.

Every consumer draws from its own stream keyed by (seed, purpose, *keys), so
adding a consumer never shifts the numbers another one sees. This is what
keeps e.g. FedAvg and a reduced CDFL run on identical batch orders.
"""
from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, purpose: str, *keys: int) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(purpose.encode())]
    entropy.extend(int(k) & 0xFFFFFFFFFFFFFFFF for k in keys)
    return np.random.default_rng(np.random.SeedSequence(entropy))
