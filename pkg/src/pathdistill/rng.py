"""Named random streams derived from one run seed."""

import hashlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``(seed, name)``; adding a stream never shifts another."""
    digest = hashlib.sha256(f"{int(seed)}:{name}".encode()).digest()
    entropy = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.PCG64(entropy))


def get_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def set_state(rng: np.random.Generator, state: dict) -> None:
    rng.bit_generator.state = state
