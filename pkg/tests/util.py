"""Shared random-instance generators for the test suite.

Everything takes an explicit numpy Generator so tests stay reproducible.
"""

from __future__ import annotations

import numpy as np

from tomoplan.linalg import DensityMatrix, ObservableSpec


def random_unitary(rng: np.random.Generator, d: int) -> np.ndarray:
    z = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    q, r = np.linalg.qr(z)
    # Fix the QR phase ambiguity so the result is Haar distributed.
    ph = np.diag(r).copy()
    ph /= np.abs(ph)
    return q * ph


def random_hermitian(rng: np.random.Generator, d: int) -> np.ndarray:
    z = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return 0.5 * (z + z.conj().T)


def random_traceless_hermitian(rng: np.random.Generator, d: int) -> np.ndarray:
    h = random_hermitian(rng, d)
    return h - np.trace(h) / d * np.eye(d)


def random_density(rng: np.random.Generator, d: int, min_eig: float = 0.02) -> DensityMatrix:
    """Random interior state: Haar frame, simplex spectrum floored at min_eig."""
    p = rng.dirichlet(np.ones(d))
    p = min_eig + (1.0 - d * min_eig) * p
    v = random_unitary(rng, d)
    return DensityMatrix((v * p) @ v.conj().T)


def random_observable(rng: np.random.Generator, d: int) -> ObservableSpec:
    """Non-degenerate observable in a Haar-random frame, labels d-1 ... 0."""
    v = random_unitary(rng, d)
    projs = tuple(np.outer(v[:, k], v[:, k].conj()) for k in range(d))
    labels = tuple(float(d - 1 - k) for k in range(d))
    return ObservableSpec(projs, labels)
