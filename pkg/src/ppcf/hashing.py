"""Seeded 64-bit hashing used by every structure in the package.

blake2b is keyed with the seed so different seeds give independent hash
families. Nothing here is meant to be cryptographically meaningful.
"""
from hashlib import blake2b

MASK64 = (1 << 64) - 1


def _key(seed: int) -> bytes:
    return (seed & MASK64).to_bytes(8, "little")


def hash64(data: bytes, seed: int = 0) -> int:
    return int.from_bytes(blake2b(data, digest_size=8, key=_key(seed)).digest(), "little")


def hash_pair(data: bytes, seed: int = 0) -> tuple[int, int]:
    """Two independent 64-bit hashes of ``data`` from one 128-bit digest."""
    d = blake2b(data, digest_size=16, key=_key(seed)).digest()
    return int.from_bytes(d[:8], "little"), int.from_bytes(d[8:], "little")


def double_hash_positions(data: bytes, k: int, modulus: int, seed: int = 0) -> list[int]:
    """k positions ``(g1 + i*g2) mod modulus`` (Kirsch-Mitzenmacher double hashing)."""
    g1, g2 = hash_pair(data, seed)
    return [(g1 + i * g2) % modulus for i in range(k)]


def int_hash(value: int, seed: int = 0) -> int:
    return hash64(value.to_bytes(8, "little"), seed)
