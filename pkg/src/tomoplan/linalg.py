"""Operator primitives: states, observables, hermitian bases, serialization.

Conventions used throughout the package:

* The real inner product on hermitian operators carries a factor two,
  ``(x|y) = 2 Tr(x^dag y)``, so that for a qubit the halved Pauli matrices
  ``sigma_r / 2`` form an orthonormal set and hermitian-basis coordinates of
  a state coincide with its Bloch components.
* Observables are ideal von Neumann measurements: a complete family of
  mutually orthogonal projectors with distinct real outcome labels.
* Matrices serialize to JSON as ``{"dim": d, "re": [...], "im": [...]}``
  with row-major coefficient lists.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    DimMismatchError,
    NotHermitianError,
    OutOfBallError,
    SchemaError,
)

# Validation tolerances (absolute, on matrix entries / eigenvalues).
ATOL_HERM = 1e-10
ATOL_TRACE = 1e-10
ATOL_PSD = 1e-10
# States with min eigenvalue below this floor count as non-invertible.
EPS_FLOOR = 1e-8

PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
PAULI_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
PAULI_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
PAULIS = (PAULI_X, PAULI_Y, PAULI_Z)


def _as_complex(m) -> np.ndarray:
    a = np.asarray(m, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimMismatchError(f"expected a square matrix, got shape {a.shape}")
    return a


def herm_defect(m: np.ndarray) -> float:
    """Largest entry-wise deviation from hermiticity."""
    return float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0


def hs_inner(x, y) -> complex:
    """Inner product ``(x|y) = 2 Tr(x^dag y)``.

    The factor two makes the halved Paulis orthonormal in dimension two and
    is assumed by every quadratic form in this package.
    """
    x = _as_complex(x)
    y = _as_complex(y)
    if x.shape != y.shape:
        raise DimMismatchError(f"hs_inner: shapes {x.shape} vs {y.shape}")
    return complex(2.0 * np.trace(x.conj().T @ y))


def hs_norm(x) -> float:
    """Norm induced by :func:`hs_inner`."""
    return float(np.sqrt(max(hs_inner(x, x).real, 0.0)))


@dataclass(frozen=True)
class DensityMatrix:
    """A state: hermitian, unit trace, positive semidefinite.

    Validation happens on construction; tolerances are the module-level
    ``ATOL_*`` constants.  ``invertible`` is True iff the smallest eigenvalue
    clears ``EPS_FLOOR``, which the Gaussian machinery requires of reference
    states.
    """

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = _as_complex(self.matrix)
        if herm_defect(m) > ATOL_HERM:
            raise NotHermitianError(
                f"state deviates from hermiticity by {herm_defect(m):.3e}"
            )
        tr = np.trace(m).real
        if abs(tr - 1.0) > ATOL_TRACE:
            raise SchemaError(f"state trace {tr!r} differs from 1")
        w = np.linalg.eigvalsh(m)
        if w[0] < -ATOL_PSD:
            raise SchemaError(f"state has negative eigenvalue {w[0]:.3e}")
        m = 0.5 * (m + m.conj().T)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues in descending order."""
        w = np.linalg.eigvalsh(self.matrix)[::-1].copy()
        w.setflags(write=False)
        return w

    @property
    def invertible(self) -> bool:
        return bool(self.eigenvalues[-1] >= EPS_FLOOR)

    def purity(self) -> float:
        return float(np.sum(self.eigenvalues**2))


@dataclass(frozen=True)
class ObservableSpec:
    """An ideal von Neumann measurement.

    ``projectors`` are mutually orthogonal, idempotent, and sum to the
    identity; ``labels`` are the distinct real outcome values in matching
    order.
    """

    projectors: tuple
    labels: tuple

    def __post_init__(self) -> None:
        projs = tuple(_as_complex(p) for p in self.projectors)
        labels = tuple(float(x) for x in self.labels)
        if len(projs) != len(labels) or not projs:
            raise SchemaError("projector and label counts differ or are empty")
        if len(set(labels)) != len(labels):
            raise SchemaError(f"outcome labels not distinct: {labels}")
        d = projs[0].shape[0]
        total = np.zeros((d, d), dtype=complex)
        for p in projs:
            if p.shape[0] != d:
                raise DimMismatchError("projectors of mixed dimension")
            if herm_defect(p) > ATOL_HERM:
                raise NotHermitianError("projector not hermitian")
            if np.max(np.abs(p @ p - p)) > 1e-9:
                raise SchemaError("projector not idempotent")
            total += p
        for i in range(len(projs)):
            for j in range(i + 1, len(projs)):
                if np.max(np.abs(projs[i] @ projs[j])) > 1e-9:
                    raise SchemaError(f"projectors {i} and {j} not orthogonal")
        if np.max(np.abs(total - np.eye(d))) > 1e-9:
            raise SchemaError("projectors do not resolve the identity")
        frozen = []
        for p in projs:
            q = p.copy()
            q.setflags(write=False)
            frozen.append(q)
        object.__setattr__(self, "projectors", tuple(frozen))
        object.__setattr__(self, "labels", labels)

    @property
    def dim(self) -> int:
        return self.projectors[0].shape[0]

    @property
    def n_outcomes(self) -> int:
        return len(self.projectors)

    def matrix(self) -> np.ndarray:
        """The hermitian operator ``sum_a a P_a``."""
        d = self.dim
        out = np.zeros((d, d), dtype=complex)
        for a, p in zip(self.labels, self.projectors):
            out += a * p
        return out


def spectral_decompose(h, tol: float = 1e-9) -> ObservableSpec:
    """Spectral projectors and eigenvalues of a hermitian matrix.

    Eigenvalues within ``tol`` (relative to the operator norm) of each other
    merge into one outcome whose label is the cluster mean; the zero matrix
    yields the single outcome 0 with projector 1.  Outcomes are ordered by
    descending label.
    """
    h = _as_complex(h)
    scale = float(np.max(np.abs(h))) if h.size else 0.0
    if herm_defect(h) > tol * max(scale, 1.0):
        raise NotHermitianError(
            f"matrix deviates from hermiticity by {herm_defect(h):.3e}"
        )
    w, v = np.linalg.eigh(0.5 * (h + h.conj().T))
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    thr = tol * scale
    projectors, labels = [], []
    start = 0
    for i in range(1, len(w) + 1):
        if i == len(w) or (w[i - 1] - w[i]) > thr:
            block = v[:, start:i]
            projectors.append(block @ block.conj().T)
            labels.append(float(np.mean(w[start:i])))
            start = i
    return ObservableSpec(tuple(projectors), tuple(labels))


def outcome_probs(rho: DensityMatrix, obs: ObservableSpec) -> np.ndarray:
    """Outcome probabilities ``Tr(rho P_a)``, clamped to ``[0, 1]``."""
    if rho.dim != obs.dim:
        raise DimMismatchError(f"state dim {rho.dim} vs observable dim {obs.dim}")
    p = np.array([np.trace(rho.matrix @ q).real for q in obs.projectors])
    return np.clip(p, 0.0, 1.0)


@dataclass(frozen=True)
class HermitianBasis:
    """Orthonormal hermitian basis with a fixed, documented ordering.

    ``elements`` holds the ``d^2 - 1`` traceless elements first -- diagonal
    (generalized Gell-Mann) ones, then real off-diagonal, then imaginary
    off-diagonal, each group in lexicographic ``(I, J)`` order -- and the
    normalized identity last.  Orthonormal with respect to :func:`hs_inner`.
    """

    dim: int
    elements: tuple = field(repr=False)

    @property
    def traceless(self) -> tuple:
        return self.elements[:-1]


def hermitian_basis(d: int) -> HermitianBasis:
    """Build the orthonormal hermitian basis for dimension ``d >= 2``."""
    if d < 2:
        raise SchemaError(f"hermitian_basis needs dim >= 2, got {d}")
    els = []
    # Diagonal, generalized Gell-Mann: diag(1,...,1,-k,0,...)/sqrt(2k(k+1)).
    for k in range(1, d):
        v = np.zeros(d)
        v[:k] = 1.0
        v[k] = -float(k)
        els.append(np.diag(v.astype(complex)) / np.sqrt(2.0 * k * (k + 1)))
    # Real off-diagonal: (e_IJ + e_JI)/2.
    for i in range(d):
        for j in range(i + 1, d):
            m = np.zeros((d, d), dtype=complex)
            m[i, j] = m[j, i] = 0.5
            els.append(m)
    # Imaginary off-diagonal: -i(e_IJ - e_JI)/2  (gives sigma_y/2 at d=2).
    for i in range(d):
        for j in range(i + 1, d):
            m = np.zeros((d, d), dtype=complex)
            m[i, j] = -0.5j
            m[j, i] = 0.5j
            els.append(m)
    els.append(np.eye(d, dtype=complex) / np.sqrt(2.0 * d))
    for m in els:
        m.setflags(write=False)
    return HermitianBasis(dim=d, elements=tuple(els))


def bloch_state(a) -> DensityMatrix:
    """Qubit state ``(1 + a . sigma)/2`` from a Bloch vector inside the ball."""
    a = np.asarray(a, dtype=float)
    if a.shape != (3,):
        raise DimMismatchError(f"Bloch vector must have 3 components, got {a.shape}")
    r = float(np.linalg.norm(a))
    if r > 1.0 + 1e-12:
        raise OutOfBallError(f"Bloch vector norm {r!r} exceeds 1")
    m = 0.5 * (np.eye(2, dtype=complex) + a[0] * PAULI_X + a[1] * PAULI_Y + a[2] * PAULI_Z)
    # Round-trip safety: clip the tiny negative eigenvalue at |a| == 1.
    if r > 1.0:
        m = m / np.trace(m).real
        w, v = np.linalg.eigh(m)
        w = np.clip(w, 0.0, None)
        m = (v * w) @ v.conj().T
        m = m / np.trace(m).real
    return DensityMatrix(m)


def bloch_vector(rho: DensityMatrix) -> np.ndarray:
    """Bloch components ``Tr(rho sigma_r)`` of a qubit state."""
    if rho.dim != 2:
        raise DimMismatchError(f"bloch_vector needs a qubit, got dim {rho.dim}")
    return np.array([np.trace(rho.matrix @ s).real for s in PAULIS])


def spin_observable(axis) -> ObservableSpec:
    """Qubit observable ``c . sigma`` along a unit axis, outcomes +1/-1."""
    c = np.asarray(axis, dtype=float)
    if c.shape != (3,):
        raise DimMismatchError(f"axis must have 3 components, got {c.shape}")
    r = float(np.linalg.norm(c))
    if abs(r - 1.0) > 1e-9:
        raise SchemaError(f"axis must be a unit vector, |c| = {r!r}")
    s = c[0] * PAULI_X + c[1] * PAULI_Y + c[2] * PAULI_Z
    eye = np.eye(2, dtype=complex)
    return ObservableSpec((0.5 * (eye + s), 0.5 * (eye - s)), (1.0, -1.0))


def matrix_to_json(m) -> dict:
    """Serialize a square complex matrix to ``{dim, re, im}``."""
    a = _as_complex(m)
    return {
        "dim": int(a.shape[0]),
        "re": [float(x) for x in a.real.ravel()],
        "im": [float(x) for x in a.imag.ravel()],
    }


def matrix_from_json(payload: dict) -> np.ndarray:
    """Inverse of :func:`matrix_to_json`, with format validation."""
    if not isinstance(payload, dict):
        raise SchemaError("matrix payload must be an object")
    try:
        d = int(payload["dim"])
        re = np.asarray(payload["re"], dtype=float)
        im = np.asarray(payload["im"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"matrix payload missing/invalid field: {exc}") from exc
    if d < 1 or re.shape != (d * d,) or im.shape != (d * d,):
        raise SchemaError(
            f"matrix payload length mismatch: dim {d}, re {re.shape}, im {im.shape}"
        )
    return (re + 1j * im).reshape(d, d)


def tracial_state(d: int) -> DensityMatrix:
    """Maximally mixed state in dimension ``d``."""
    return DensityMatrix(np.eye(d, dtype=complex) / d)


def diagonal_state(probs) -> DensityMatrix:
    """Diagonal state from a probability vector."""
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size < 2:
        raise SchemaError("diagonal state needs at least two probabilities")
    return DensityMatrix(np.diag(p.astype(complex)))
