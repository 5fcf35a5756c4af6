"""Namespaced seeds and per-sample counter-based random streams.

Every sample i of a simulation owns a Philox stream keyed by
(seed, namespace, i), so the numbers a sample sees never depend on how
samples are grouped into chunks or spread over workers.
"""

import hashlib

import numpy as np

BANK_NAMESPACE = "bank"
REFERENCE_NAMESPACE = "reference"

_NAMESPACE_IDS = {BANK_NAMESPACE: 1, REFERENCE_NAMESPACE: 2}


def derive_seed(seed: int, namespace: str) -> int:
    """Derive a 64-bit sub-seed: first 8 bytes (little-endian) of
    BLAKE2b("<seed>:<namespace>")."""
    digest = hashlib.blake2b(f"{seed}:{namespace}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def sample_generator(seed: int, namespace: str, index: int) -> np.random.Generator:
    """Independent generator for sample `index` within a namespace."""
    ns = _NAMESPACE_IDS.get(namespace)
    if ns is None:
        raise ValueError(f"unknown random stream namespace: {namespace}")
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(ns, index))
    return np.random.Generator(np.random.Philox(seq))


def sample_generators(seed: int, namespace: str, start: int, stop: int) -> list[np.random.Generator]:
    return [sample_generator(seed, namespace, i) for i in range(start, stop)]


def draw_block(generators: list[np.random.Generator], n_steps: int, d: int) -> np.ndarray:
    """Next (n_steps, d) standard normals of every stream, stacked to (len, n_steps, d)."""
    return np.stack([g.standard_normal((n_steps, d)) for g in generators])
