"""Posterior bookkeeping: quadratic outcome divergence, knowledge operator, measures.

A measurement record with outcomes ``a_j`` of observables ``A_j`` updates a
flat prior to ``p(rho) ~ prod_j w_{a_j}(rho, A_j)``.  Near its peak ``tau``
the log posterior is the quadratic form built from per-observable
divergences

    q(rho, A, tau) = sum_a (w_a(rho) - w_a(tau))^2 / w_a(tau),

and the expected strategy with weights ``n_beta`` accumulates the knowledge
operator ``M = sum_beta n_beta Q(., B_beta)`` acting on traceless hermitian
operators.  The three knowledge measures (inverse-volume, mean squared
distance, Shannon information) are all functions of the real symmetric
matrix of ``M`` in an orthonormal hermitian basis; the convention is fixed
so that ``Tr(M^-1)`` equals the posterior expectation of the squared
coordinate vector (for a qubit: of ``|a - u|^2`` in Bloch coordinates).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadSplitError,
    DimMismatchError,
    EmptyEnsembleError,
    SchemaError,
    SingularMError,
    TauNotInteriorError,
)
from .linalg import (
    ATOL_HERM,
    EPS_FLOOR,
    DensityMatrix,
    ObservableSpec,
    hermitian_basis,
    outcome_probs,
)

# Relative eigenvalue cutoffs.
SINGULAR_REL = 1e-12
RANK_REL = 1e-9


@dataclass(frozen=True)
class StrategyConfig:
    """Weighted list of observables: ``items`` of (observable, weight > 0)."""

    items: tuple
    n: float = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        items = tuple((obs, float(w)) for obs, w in self.items)
        if not items:
            raise SchemaError("strategy needs at least one observable")
        d = items[0][0].dim
        for obs, w in items:
            if obs.dim != d:
                raise DimMismatchError("strategy mixes observable dimensions")
            if w <= 0.0:
                raise SchemaError(f"strategy weight must be positive, got {w}")
        total = sum(w for _, w in items)
        n = total if self.n is None else float(self.n)
        if abs(n - total) > 1e-9 * max(1.0, abs(n)):
            raise SchemaError(f"weights sum to {total!r}, declared n = {n!r}")
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "n", n)

    @property
    def dim(self) -> int:
        return self.items[0][0].dim

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.items])


@dataclass(frozen=True)
class MeasurementRecord:
    """Ordered outcome stream plus the registry resolving observable ids."""

    entries: tuple  # of (observable_id: str, outcome_label: float)
    registry: dict  # observable_id -> ObservableSpec
    seed: int | None = None

    def __post_init__(self) -> None:
        entries = tuple((str(i), float(a)) for i, a in self.entries)
        for obs_id, label in entries:
            obs = self.registry.get(obs_id)
            if obs is None:
                raise SchemaError(f"record references unknown observable {obs_id!r}")
            if all(abs(label - x) > 1e-12 for x in obs.labels):
                raise SchemaError(
                    f"outcome {label!r} not among labels of observable {obs_id!r}"
                )
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return len(self.entries)

    def counts(self) -> dict:
        """Collapse the stream to ``{(observable_id, label): count}``."""
        acc: dict = {}
        for key in self.entries:
            acc[key] = acc.get(key, 0) + 1
        return acc

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for obs_id, label in self.entries:
                fh.write(json.dumps({"observable": obs_id, "outcome": label}) + "\n")

    @staticmethod
    def from_jsonl(path, registry: dict, seed: int | None = None) -> "MeasurementRecord":
        entries = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                    entries.append((row["observable"], float(row["outcome"])))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise SchemaError(f"bad record line {line!r}: {exc}") from exc
        return MeasurementRecord(tuple(entries), registry, seed)


def log_posterior(rho: DensityMatrix, record: MeasurementRecord) -> float:
    """Log posterior of ``rho`` given the record, up to an additive constant.

    Returns ``-inf`` when any observed outcome has zero (or negative)
    probability under ``rho``.
    """
    total = 0.0
    for (obs_id, label), cnt in record.counts().items():
        obs = record.registry[obs_id]
        if rho.dim != obs.dim:
            raise DimMismatchError("state and recorded observable dims differ")
        idx = min(range(len(obs.labels)), key=lambda k: abs(obs.labels[k] - label))
        w = float(np.trace(rho.matrix @ obs.projectors[idx]).real)
        if w <= 0.0:
            return float("-inf")
        total += cnt * math.log(w)
    return total


def q_form(rho: DensityMatrix, obs: ObservableSpec, tau: DensityMatrix) -> float:
    """Quadratic divergence of outcome statistics of ``rho`` from ``tau``."""
    if rho.dim != tau.dim or rho.dim != obs.dim:
        raise DimMismatchError("q_form operands of mixed dimension")
    w_tau = outcome_probs(tau, obs)
    if np.min(w_tau) < EPS_FLOOR:
        raise TauNotInteriorError(
            f"reference outcome probability {np.min(w_tau):.3e} below floor"
        )
    w_rho = np.array(
        [np.trace(rho.matrix @ p).real for p in obs.projectors]
    )
    return float(np.sum((w_rho - w_tau) ** 2 / w_tau))


def _eigenframe(tau: DensityMatrix) -> np.ndarray:
    """Deterministic eigenbasis of ``tau``: descending eigenvalues, fixed phases."""
    w, v = np.linalg.eigh(tau.matrix)
    v = v[:, ::-1]
    for k in range(v.shape[1]):
        i = int(np.argmax(np.abs(v[:, k])))
        ph = v[i, k]
        v[:, k] *= np.conj(ph) / abs(ph)
    return v


@dataclass(frozen=True)
class KnowledgeOperator:
    """Knowledge operator of a strategy at a reference state.

    ``matrix`` is the real symmetric ``(d^2-1) x (d^2-1)`` representation in
    the standard hermitian basis (lab frame).  ``component_table`` is the
    ``d^2 x d^2`` complex superoperator table in the declared tau-eigenbasis
    ``eigenbasis`` (columns), used by the twirl; both describe the same
    operator.
    """

    tau: DensityMatrix
    matrix: np.ndarray
    component_table: np.ndarray | None = None
    eigenbasis: np.ndarray | None = None
    strategy: StrategyConfig | None = field(default=None, compare=False)

    @property
    def dim(self) -> int:
        return self.tau.dim

    @property
    def rank(self) -> int:
        w = np.linalg.eigvalsh(self.matrix)
        top = max(float(w[-1]), 0.0)
        if top == 0.0:
            return 0
        return int(np.sum(w > RANK_REL * top))

    @property
    def informationally_complete(self) -> bool:
        return self.rank == self.dim**2 - 1

    def quadratic(self, rho: DensityMatrix) -> float:
        """Evaluate ``(rho - tau | M | rho - tau)`` from the real matrix."""
        basis = hermitian_basis(self.dim).traceless
        delta = rho.matrix - self.tau.matrix
        x = np.array([2.0 * np.trace(f @ delta).real for f in basis])
        return float(x @ self.matrix @ x)

    def table_as_matrix(self) -> np.ndarray:
        """Real-basis restriction of the component table, rotated to the lab frame."""
        if self.component_table is None or self.eigenbasis is None:
            raise SingularMError("component table absent")
        d = self.dim
        t4 = self.component_table.reshape(d, d, d, d)
        basis = np.stack(hermitian_basis(d).traceless)
        m_eig = 2.0 * np.einsum(
            "rij,ijkl,skl->rs", basis.conj(), t4, basis
        ).real
        v = self.eigenbasis
        rotated = np.einsum("ab,sbc,cd->sad", v.conj().T, basis, v)
        o = 2.0 * np.einsum("rij,sji->rs", basis, rotated).real
        return o.T @ m_eig @ o


def build_M(
    tau: DensityMatrix,
    strategy: StrategyConfig,
    with_components: bool = True,
) -> KnowledgeOperator:
    """Assemble the knowledge operator of a strategy at reference state ``tau``.

    The real matrix is evaluated directly on the traceless hermitian basis,
    ``M_rs = sum_beta n_beta sum_a Tr(F_r P_a) Tr(F_s P_a) / Tr(tau P_a)``;
    the component table uses the factor-two inner product in the
    tau-eigenbasis.  Raises TauNotInteriorError when a projector catches less
    than ``EPS_FLOOR`` of ``tau``.
    """
    if tau.dim != strategy.dim:
        raise DimMismatchError("reference state and strategy dims differ")
    d = tau.dim
    basis = np.stack(hermitian_basis(d).traceless)
    k = d * d - 1
    m = np.zeros((k, k))
    v = _eigenframe(tau)
    table = np.zeros((d * d, d * d), dtype=complex) if with_components else None
    for obs, weight in strategy.items:
        for proj in obs.projectors:
            w = float(np.trace(tau.matrix @ proj).real)
            if w < EPS_FLOOR:
                raise TauNotInteriorError(
                    f"outcome probability {w:.3e} at tau below floor"
                )
            t = np.einsum("rij,ji->r", basis, proj).real
            m += (weight / w) * np.outer(t, t)
            if table is not None:
                pe = v.conj().T @ proj @ v
                vec = pe.ravel()
                table += (weight / (2.0 * w)) * np.outer(vec, vec.conj())
    return KnowledgeOperator(
        tau=tau,
        matrix=0.5 * (m + m.T),
        component_table=table,
        eigenbasis=v if with_components else None,
        strategy=strategy,
    )


@dataclass(frozen=True)
class KnowledgeReport:
    """The three knowledge measures derived from one operator."""

    det_M: float
    volume: float
    tr_M_inv: float
    shannon: float

    def to_json(self) -> dict:
        return {
            "det_M": self.det_M,
            "volume": self.volume,
            "tr_M_inv": self.tr_M_inv,
            "shannon": self.shannon,
        }


def _symmetric_spectrum(m) -> np.ndarray:
    if isinstance(m, KnowledgeOperator):
        m = m.matrix
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimMismatchError(f"knowledge matrix must be square, got {m.shape}")
    if np.max(np.abs(m - m.T)) > 1e-8 * max(1.0, float(np.max(np.abs(m)))):
        raise SchemaError("knowledge matrix not symmetric")
    w = np.linalg.eigvalsh(0.5 * (m + m.T))
    if w[-1] <= 0.0 or w[0] < SINGULAR_REL * w[-1]:
        raise SingularMError(
            f"knowledge matrix singular: eigenvalue range [{w[0]:.3e}, {w[-1]:.3e}]"
        )
    return w


def knowledge_report(m) -> KnowledgeReport:
    """Volume, distance, and Shannon measures of a knowledge matrix.

    ``det M`` is the product of eigenvalues of the real restriction; the
    Gaussian volume scale is ``det^(-1/2)``; ``Tr(M^-1)`` is the expected
    squared coordinate error; Shannon information is
    ``-(k/2) + (1/2) ln(det M / (2 pi)^k)`` in nats, with ``k`` the number of
    real coordinates.
    """
    w = _symmetric_spectrum(m)
    k = len(w)
    log_det = float(np.sum(np.log(w)))
    det = float(np.prod(w))
    return KnowledgeReport(
        det_M=det,
        volume=float(np.exp(-0.5 * log_det)),
        tr_M_inv=float(np.sum(1.0 / w)),
        shannon=float(-0.5 * k + 0.5 * (log_det - k * np.log(2.0 * np.pi))),
    )


def validity_check(tau: DensityMatrix, m) -> float:
    """Smallness figure ``sqrt(Tr(M^-1)/2) * ||tau^-1||`` of the Gaussian regime.

    Values well below 1 mean the posterior ellipsoid fits inside the state
    body around ``tau``; near or above 1 the Gaussian picture is unreliable.
    """
    if not tau.invertible:
        raise TauNotInteriorError("reference state not invertible")
    w = _symmetric_spectrum(m)
    tr_inv = float(np.sum(1.0 / w))
    inv_norm = 1.0 / float(tau.eigenvalues[-1])
    return math.sqrt(tr_inv / 2.0) * inv_norm


def refine_observable(
    obs: ObservableSpec,
    outcome: float,
    part_a: np.ndarray,
    part_b: np.ndarray,
    label_a: float,
    label_b: float,
) -> ObservableSpec:
    """Split one outcome projector into two orthogonal parts.

    The new labels must be fresh and distinct; the parts must be projectors
    that sum to the outcome's projector.  Refining never destroys knowledge:
    ``det M`` cannot drop and ``Tr(M^-1)`` cannot grow under any refinement.
    """
    outcome = float(outcome)
    try:
        idx = next(
            k for k, lab in enumerate(obs.labels) if abs(lab - outcome) < 1e-12
        )
    except StopIteration:
        raise BadSplitError(f"outcome {outcome!r} not present") from None
    pa = np.asarray(part_a, dtype=complex)
    pb = np.asarray(part_b, dtype=complex)
    target = obs.projectors[idx]
    if pa.shape != target.shape or pb.shape != target.shape:
        raise BadSplitError("split parts have wrong shape")
    for p in (pa, pb):
        if np.max(np.abs(p - p.conj().T)) > ATOL_HERM:
            raise BadSplitError("split part not hermitian")
        if np.max(np.abs(p @ p - p)) > 1e-9:
            raise BadSplitError("split part not idempotent")
        if np.trace(p).real < 0.5:
            raise BadSplitError("split part is zero")
    if np.max(np.abs(pa + pb - target)) > 1e-10:
        raise BadSplitError("parts do not sum to the chosen projector")
    if np.max(np.abs(pa @ pb)) > 1e-9:
        raise BadSplitError("parts not orthogonal")
    label_a, label_b = float(label_a), float(label_b)
    if label_a == label_b:
        raise BadSplitError("new labels must be distinct")
    for lab in obs.labels:
        if lab != outcome and (abs(lab - label_a) < 1e-12 or abs(lab - label_b) < 1e-12):
            raise BadSplitError("new labels collide with existing outcomes")
    projs = list(obs.projectors)
    labels = list(obs.labels)
    projs[idx : idx + 1] = [pa, pb]
    labels[idx : idx + 1] = [label_a, label_b]
    return ObservableSpec(tuple(projs), tuple(labels))


def det_via_alpha(op: KnowledgeOperator) -> float:
    """Cross-check of ``det M`` through the augmented superoperator.

    Adding ``alpha`` times the normalized projector onto the identity makes
    the full-space determinant affine in ``alpha`` with slope ``det M``, so
    the difference of the table determinant at ``alpha = 1`` and ``alpha = 0``
    recovers the restricted determinant.
    """
    if op.component_table is None:
        raise SingularMError("component table absent")
    d = op.dim
    vec_id = np.eye(d, dtype=complex).ravel()
    aug = np.outer(vec_id, vec_id.conj()) / d
    det1 = np.linalg.det(op.component_table + aug)
    det0 = np.linalg.det(op.component_table)
    return float((det1 - det0).real)


def aggregate_counts(records) -> dict:
    """Merge count dictionaries of several records (shared registry assumed)."""
    if not records:
        raise EmptyEnsembleError("no records to aggregate")
    acc: dict = {}
    for rec in records:
        for key, cnt in rec.counts().items():
            acc[key] = acc.get(key, 0) + cnt
    return acc
