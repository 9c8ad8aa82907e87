# dgnn/utils/seeding.py
import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes, start: int = FNV_OFFSET) -> int:
    """64-bit FNV-1a. Stable across processes and platforms, unlike hash()."""
    h = start
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def derive_seed(seed: int, *keys) -> int:
    """Child seed for a named component, e.g. derive_seed(0, "split", "random")."""
    h = fnv1a64(int(seed).to_bytes(8, "little", signed=True))
    for key in keys:
        h = fnv1a64(b"/" + str(key).encode("utf-8"), start=h)
    return h


def rng(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))
