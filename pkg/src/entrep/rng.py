"""Seed threading and random test objects.

Every random quantity is drawn from a generator derived from
``(seed, label, index)``, so a sample's stream depends only on its index and
never on how the work is split across workers.
"""

from __future__ import annotations

import zlib

import numpy as np
from scipy.stats import unitary_group

from .linalg import dagger


def label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def stream(seed: int, label: str, *index: int) -> np.random.Generator:
    """Independent generator for ``(seed, label, *index)``."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, label_key(label), *map(int, index)])


def random_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary."""
    if d == 1:
        return np.exp(2j * np.pi * rng.random()).reshape(1, 1)
    return unitary_group.rvs(d, random_state=rng)


def random_hermitian(d: int, rng: np.random.Generator) -> np.ndarray:
    G = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return 0.5 * (G + dagger(G))


def random_psd(d: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    r = d if rank is None else rank
    G = rng.normal(size=(d, r)) + 1j * rng.normal(size=(d, r))
    return G @ dagger(G)


def random_density(d: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    P = random_psd(d, rng, rank)
    return P / np.trace(P).real


def random_projective_measurement(d: int, n: int, rng: np.random.Generator, ranks=None) -> np.ndarray:
    """Random complete projective measurement with `n` outcomes, shape (n, d, d).

    Basis vectors of a Haar unitary are dealt to outcomes; with ``ranks``
    unspecified, each vector goes to a uniformly random outcome, so some
    outcomes may be the zero projector.
    """
    U = random_unitary(d, rng)
    if ranks is None:
        owner = rng.integers(n, size=d)
    else:
        if sum(ranks) != d:
            raise ValueError("ranks must sum to d")
        owner = np.repeat(np.arange(n), ranks)
    out = np.zeros((n, d, d), dtype=complex)
    for a in range(n):
        B = U[:, owner == a]
        out[a] = B @ dagger(B)
    return out


def random_unit_vectors(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    X = rng.normal(size=(n, k)) + 1j * rng.normal(size=(n, k))
    return X / np.linalg.norm(X, axis=0)
