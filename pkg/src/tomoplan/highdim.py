"""Strategy constructions for dimension d > 2 via the twirled superoperator.

Averaging a strategy over the commutant phases of the reference state
("twirl") zeroes every component of the knowledge operator except two
blocks in the tau-eigenbasis: a real symmetric d x d block ``R`` on the
diagonal sector, ``R_IJ = M_II,JJ``, and a positive diagonal ``S`` over the
off-diagonal sector, ``S_IJ = M_IJ,IJ``.  Twirling never loses knowledge
(det up, trace-inverse down), and the measures of the twirled operator have
closed block forms:

    det M' = (1/d) det R Tr(R^-1 E) prod_{I != J} S_IJ
    Tr(M'^-1) = Tr(R^-1) - Tr(R^-1 E R^-1)/Tr(R^-1 E) + sum_{I != J} 1/S_IJ

with ``E`` the all-ones matrix; both are invariant under ``R -> R + c E``.

Two concrete families are provided.  The unbiased-pair strategy splits the
budget between the eigenbasis of tau and one mutually unbiased partner
basis; the matrix-unit strategy (even d) adds rounds of pair observables
organized by a round-robin schedule, which resolves reference states with
very small eigenvalue pairs far better than the unbiased pair does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    MissingComponentsError,
    OddDimensionError,
    SchemaError,
    SingularRError,
    TauNotInteriorError,
)
from .knowledge import KnowledgeOperator, StrategyConfig, build_M, _eigenframe
from .linalg import DensityMatrix, ObservableSpec

MUB_PAIR = "mub-pair"
MATRIX_UNIT = "matrix-unit"


# ---------------------------------------------------------------------------
# Twirl

@dataclass(frozen=True)
class TwirledOperator:
    """R/S block data of a twirled knowledge operator in a tau-eigenbasis."""

    dim: int
    R: np.ndarray  # (d, d) real symmetric, diagonal sector, alpha = 0
    S: np.ndarray  # (d, d) real, zero diagonal; entry (I, J) for I != J
    eigenbasis: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        r = np.asarray(self.R, dtype=float)
        s = np.asarray(self.S, dtype=float)
        d = self.dim
        if r.shape != (d, d) or s.shape != (d, d):
            raise SchemaError(f"R/S must be {d} x {d}, got {r.shape}, {s.shape}")
        if np.max(np.abs(r - r.T)) > 1e-9 * max(1.0, float(np.max(np.abs(r)))):
            raise SchemaError("R block not symmetric")
        object.__setattr__(self, "R", 0.5 * (r + r.T))
        object.__setattr__(self, "S", s - np.diag(np.diag(s)))

    def s_entries(self) -> np.ndarray:
        """The d(d-1) diagonal values of S over ordered pairs I != J."""
        d = self.dim
        mask = ~np.eye(d, dtype=bool)
        return self.S[mask]

    def as_real_matrix(self) -> np.ndarray:
        """Dense (d^2-1) matrix of the twirled operator, eigenframe ordering.

        Diagonal traceless sector first (compression of R), then the real and
        imaginary off-diagonal sectors, each diagonal with the S values.
        """
        d = self.dim
        rows = []
        for k in range(1, d):
            v = np.zeros(d)
            v[:k] = 1.0
            v[k] = -float(k)
            rows.append(v * np.sqrt(2.0) / np.sqrt(2.0 * k * (k + 1)))
        v = np.vstack(rows)
        top = v @ self.R @ v.T
        s_pairs = np.array([self.S[i, j] for i in range(d) for j in range(i + 1, d)])
        out = np.zeros((d * d - 1, d * d - 1))
        out[: d - 1, : d - 1] = top
        idx = d - 1
        for blk in (s_pairs, s_pairs):
            for val in blk:
                out[idx, idx] = val
                idx += 1
        return out


def twirl_mask(table: np.ndarray, d: int) -> np.ndarray:
    """Zero every component except ``(II, JJ)`` and ``(IJ, IJ)``."""
    if table.shape != (d * d, d * d):
        raise SchemaError(f"component table must be {d*d} x {d*d}")
    t4 = table.reshape(d, d, d, d)
    out = np.zeros_like(t4)
    i, j = np.meshgrid(range(d), range(d), indexing="ij")
    out[i, i, j, j] = t4[i, i, j, j]
    out[i, j, i, j] = t4[i, j, i, j]  # re-sets the diagonal sector (I == J) too
    return out.reshape(d * d, d * d)


def twirl(op: KnowledgeOperator) -> TwirledOperator:
    """Extract the R/S blocks of the phase-averaged knowledge operator."""
    if op.component_table is None:
        raise MissingComponentsError("knowledge operator built without components")
    d = op.dim
    t4 = op.component_table.reshape(d, d, d, d)
    i, j = np.meshgrid(range(d), range(d), indexing="ij")
    r = t4[i, i, j, j].real
    s = t4[i, j, i, j].real
    s = s - np.diag(np.diag(s))
    return TwirledOperator(dim=d, R=r, S=s, eigenbasis=op.eigenbasis)


def phase_average_table(
    tau: DensityMatrix,
    strategy: StrategyConfig,
    exponents=None,
    grid: int = 256,
) -> np.ndarray:
    """Trapezoid-rule oracle for the twirl: average rotated component tables.

    Conjugates every observable by ``exp(i phi xi)`` with an integer-spectrum
    generator ``xi`` diagonal in the tau-eigenbasis (a Sidon set by default,
    so that phase averaging reproduces the component mask exactly), and
    integrates over one period with trapezoid weights.
    """
    d = tau.dim
    if exponents is None:
        exponents = sidon_set(d)
    exps = np.asarray(exponents, dtype=float)
    if exps.shape != (d,):
        raise SchemaError(f"need {d} generator exponents, got {exps.shape}")
    v = _eigenframe(tau)
    acc = np.zeros((d * d, d * d), dtype=complex)
    phis = np.linspace(0.0, 2.0 * np.pi, grid + 1)
    weights = np.full(grid + 1, 1.0 / grid)
    weights[0] = weights[-1] = 0.5 / grid
    for phi, wt in zip(phis, weights):
        u = (v * np.exp(1j * phi * exps)) @ v.conj().T
        rotated = StrategyConfig(
            tuple(
                (
                    ObservableSpec(
                        tuple(u @ p @ u.conj().T for p in obs.projectors),
                        obs.labels,
                    ),
                    w,
                )
                for obs, w in strategy.items
            )
        )
        acc += wt * build_M(tau, rotated).component_table
    return acc


# ---------------------------------------------------------------------------
# Block measures

@dataclass(frozen=True)
class StrategyMetrics:
    """Knowledge measures of a (twirled) strategy plus its budget split."""

    label: str
    dim: int
    n: float
    det_M: float
    tr_M_inv: float
    mode: str | None = None
    splits: dict | None = None

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "dim": self.dim,
            "n": self.n,
            "det_M": self.det_M,
            "tr_M_inv": self.tr_M_inv,
            "mode": self.mode,
            "splits": self.splits,
        }


def cofactor_sum(r: np.ndarray) -> float:
    """Alternate form ``sum_IJ (-1)^(I+J) minor_IJ(R)`` of ``det R Tr(R^-1 E)``."""
    r = np.asarray(r, dtype=float)
    d = r.shape[0]
    total = 0.0
    for i in range(d):
        for j in range(d):
            minor = np.delete(np.delete(r, i, axis=0), j, axis=1)
            total += (-1.0) ** (i + j) * float(np.linalg.det(minor))
    return total


def block_measures(
    twirled: TwirledOperator,
    splits: dict | None = None,
    mode: str | None = None,
    label: str = "twirled",
    n: float | None = None,
) -> StrategyMetrics:
    """Evaluate det and trace-inverse of a twirled operator from its blocks."""
    d = twirled.dim
    r = twirled.R
    s_vals = twirled.s_entries()
    if np.any(s_vals <= 0.0):
        raise SingularRError("off-diagonal block has a nonpositive entry")
    eig_r = np.linalg.eigvalsh(r)
    if eig_r[-1] <= 0.0 or eig_r[0] < 1e-12 * eig_r[-1]:
        raise SingularRError(
            f"diagonal-sector block singular: eigenvalues in [{eig_r[0]:.3e}, {eig_r[-1]:.3e}]"
        )
    ones = np.ones(d)
    z = np.linalg.solve(r, ones)
    q = float(ones @ z)  # Tr(R^-1 E)
    det_r = float(np.linalg.det(r))
    det = det_r * q / d * float(np.prod(s_vals))
    r_inv = np.linalg.inv(r)
    tr_inv = float(np.trace(r_inv)) - float(z @ z) / q + float(np.sum(1.0 / s_vals))
    if n is None:
        n = float(sum(splits.values())) if splits else float("nan")
    return StrategyMetrics(
        label=label,
        dim=d,
        n=n,
        det_M=det,
        tr_M_inv=tr_inv,
        mode=mode,
        splits=splits,
    )


# ---------------------------------------------------------------------------
# Unbiased-pair strategy

def _partner_frame(tau: DensityMatrix) -> np.ndarray:
    """Tau-eigenbasis, made unique by a tiny diagonal ramp when degenerate."""
    v = _eigenframe(tau)
    w = np.linalg.eigvalsh(tau.matrix)
    gaps = np.diff(np.sort(w))
    if len(gaps) == 0 or np.min(gaps) >= 1e-9:
        return v
    ramp = (v * (1e-6 * np.arange(tau.dim, 0, -1))) @ v.conj().T
    perturbed = tau.matrix + ramp
    w2, v2 = np.linalg.eigh(perturbed)
    v2 = v2[:, ::-1]
    for k in range(v2.shape[1]):
        i = int(np.argmax(np.abs(v2[:, k])))
        ph = v2[i, k]
        v2[:, k] *= np.conj(ph) / abs(ph)
    return v2


def eigenbasis_observable(tau: DensityMatrix) -> ObservableSpec:
    """Non-degenerate observable measuring in the tau-eigenbasis (labels 0..d-1)."""
    v = _partner_frame(tau)
    d = tau.dim
    projs = tuple(np.outer(v[:, k], v[:, k].conj()) for k in range(d))
    return ObservableSpec(projs, tuple(float(k) for k in range(d)))


def unbiased_partner(tau: DensityMatrix) -> ObservableSpec:
    """Discrete-Fourier partner basis: every overlap with the tau-eigenbasis is 1/d."""
    v = _partner_frame(tau)
    d = tau.dim
    omega = np.exp(2j * np.pi / d)
    four = np.array(
        [[omega ** (i * a) for a in range(d)] for i in range(d)], dtype=complex
    ) / np.sqrt(d)
    cols = v @ four
    projs = tuple(np.outer(cols[:, a], cols[:, a].conj()) for a in range(d))
    return ObservableSpec(projs, tuple(float(a) for a in range(d)))


def sidon_set(d: int) -> np.ndarray:
    """First ``d`` terms of the greedy Sidon (Mian-Chowla, from 0) sequence.

    All pairwise differences are distinct, so integer phase rotations with
    these exponents realize the twirl mask exactly.
    """
    if d < 1:
        raise SchemaError("need d >= 1")
    terms = [0]
    diffs = set()
    c = 0
    while len(terms) < d:
        c += 1
        new = [c - x for x in terms]
        if any(x in diffs for x in new):
            continue
        diffs.update(new)
        terms.append(c)
    return np.array(terms, dtype=int)


def _check_tau_interior(tau: DensityMatrix) -> np.ndarray:
    if not tau.invertible:
        raise TauNotInteriorError("reference state must be invertible")
    return tau.eigenvalues  # descending


def mub_pair_det(tau: DensityMatrix, n1: float, n2: float) -> float:
    """Closed-form det of the twirled unbiased-pair strategy."""
    t = _check_tau_interior(tau)
    d = tau.dim
    det_tau_inv = float(np.prod(1.0 / t))
    return (1.0 / d) * (n1 / 2.0) ** (d - 1) * (n2 / 2.0) ** (d * (d - 1)) * det_tau_inv


def mub_pair_tr_inv(tau: DensityMatrix, n1: float, n2: float) -> float:
    """Closed-form trace-inverse of the twirled unbiased-pair strategy."""
    _check_tau_interior(tau)
    d = tau.dim
    purity = tau.purity()
    return (2.0 / n1) * (1.0 - purity) + 2.0 * d * (d - 1) / n2


def mub_pair_split(tau: DensityMatrix, n: float, mode: str) -> tuple:
    """Optimal (n1, n2) budget split for the requested measure."""
    _check_tau_interior(tau)
    d = tau.dim
    if n <= 0:
        raise SchemaError(f"budget must be positive, got {n}")
    if mode == "volume":
        n1 = n / (d + 1.0)
    elif mode == "distance":
        purity = tau.purity()
        n1 = n / (1.0 + math.sqrt(d * (d - 1) / (1.0 - purity)))
    else:
        raise SchemaError(f"mode must be volume or distance, got {mode!r}")
    return n1, n - n1


def mub_pair_blocks(tau: DensityMatrix, n1: float, n2: float) -> TwirledOperator:
    """R/S blocks of the twirled unbiased-pair strategy."""
    t = _check_tau_interior(tau)
    d = tau.dim
    if n1 < 0 or n2 <= 0:
        raise SchemaError("need n1 >= 0 and n2 > 0")
    r = n1 * np.diag(1.0 / (2.0 * t)) + (n2 / 2.0) * np.ones((d, d))
    s = (n2 / 2.0) * (np.ones((d, d)) - np.eye(d))
    return TwirledOperator(dim=d, R=r, S=s, eigenbasis=_partner_frame(tau))


def mub_pair_strategy(
    tau: DensityMatrix, n: float, mode: str, n1: float | None = None
) -> StrategyMetrics:
    """Unbiased-pair strategy metrics at the optimal (or a given) split."""
    if n1 is None:
        n1, n2 = mub_pair_split(tau, n, mode)
    else:
        n1 = float(n1)
        n2 = n - n1
        if n1 <= 0 or n2 <= 0:
            raise SchemaError(f"split n1 = {n1!r} out of range for n = {n!r}")
    metrics = block_measures(
        mub_pair_blocks(tau, n1, n2),
        splits={"n1": n1, "n2": n2},
        mode=mode,
        label=MUB_PAIR,
        n=float(n),
    )
    return metrics


def mub_pair_config(
    tau: DensityMatrix,
    n: float,
    mode: str,
    n1: float | None = None,
    phases: int | None = None,
) -> StrategyConfig:
    """Measurable realization of the twirled unbiased-pair strategy.

    The partner basis is rotated through ``phases`` equally spaced commutant
    angles of a Sidon-exponent generator; with the default count the finite
    family reproduces the twirled knowledge operator exactly, making the
    configuration informationally complete.
    """
    if n1 is None:
        n1, n2 = mub_pair_split(tau, n, mode)
    else:
        n1 = float(n1)
        n2 = n - n1
        if n1 <= 0 or n2 <= 0:
            raise SchemaError(f"split n1 = {n1!r} out of range for n = {n!r}")
    d = tau.dim
    exps = sidon_set(d)
    if phases is None:
        phases = 2 * int(exps[-1]) + 1
    if phases < 2 * int(exps[-1]) + 1:
        raise SchemaError(
            f"need at least {2 * int(exps[-1]) + 1} phases for an exact twirl at d = {d}"
        )
    v = _partner_frame(tau)
    base = unbiased_partner(tau)
    items = [(eigenbasis_observable(tau), n1)]
    for k in range(phases):
        phi = 2.0 * np.pi * k / phases
        u = (v * np.exp(1j * phi * exps)) @ v.conj().T
        projs = tuple(u @ p @ u.conj().T for p in base.projectors)
        items.append((ObservableSpec(projs, base.labels), n2 / phases))
    return StrategyConfig(tuple(items))


# ---------------------------------------------------------------------------
# Round-robin schedule and matrix-unit strategy

@dataclass(frozen=True)
class PairSchedule:
    """Partition of all index pairs into rounds of perfect matchings."""

    dim: int
    rounds: tuple  # of tuples of (i, j) pairs with i < j

    def __post_init__(self) -> None:
        d = self.dim
        if d % 2 != 0:
            raise OddDimensionError(f"pair schedule needs even dim, got {d}")
        rounds = tuple(
            tuple((int(i), int(j)) for i, j in rnd) for rnd in self.rounds
        )
        seen = set()
        for rnd in rounds:
            used = set()
            for i, j in rnd:
                if not (0 <= i < j < d):
                    raise SchemaError(f"bad pair ({i}, {j})")
                if i in used or j in used:
                    raise SchemaError("round is not a matching")
                used.update((i, j))
                seen.add((i, j))
            if len(used) != d:
                raise SchemaError("round does not cover every index")
        if len(seen) != d * (d - 1) // 2 or len(rounds) != d - 1:
            raise SchemaError("rounds do not cover each pair exactly once")
        object.__setattr__(self, "rounds", rounds)

    def round_of(self) -> dict:
        """Map each unordered pair to its round index."""
        out = {}
        for b, rnd in enumerate(self.rounds):
            for pair in rnd:
                out[pair] = b
        return out

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "rounds": [[[i, j] for i, j in rnd] for rnd in self.rounds],
        }


def round_robin(d: int) -> PairSchedule:
    """Circle-method schedule: d-1 rounds of d/2 disjoint pairs covering all pairs."""
    if d < 2 or d % 2 != 0:
        raise OddDimensionError(f"round robin needs even dim >= 2, got {d}")
    rest = list(range(1, d))
    rounds = []
    for _ in range(d - 1):
        arr = [0] + rest
        rnd = tuple(
            (min(arr[i], arr[d - 1 - i]), max(arr[i], arr[d - 1 - i]))
            for i in range(d // 2)
        )
        rounds.append(tuple(sorted(rnd)))
        rest = rest[1:] + rest[:1]
    return PairSchedule(dim=d, rounds=tuple(rounds))


def _matrix_unit_weights(d: int, n1: float, round_weights) -> np.ndarray:
    w = np.asarray(round_weights, dtype=float)
    if w.shape != (d - 1,):
        raise SchemaError(f"need {d - 1} round weights, got {w.shape}")
    if n1 < 0 or np.any(w < 0):
        raise SchemaError("weights must be nonnegative")
    return w


def matrix_unit_blocks(
    tau: DensityMatrix,
    n1: float,
    round_weights,
    schedule: PairSchedule | None = None,
) -> TwirledOperator:
    """R/S blocks of the twirled matrix-unit strategy.

    Each round beta measures, for every pair (I, J) of its matching, the two
    rank-one projectors onto ``(e_I +/- e_J)/sqrt(2)``; round weights are the
    per-round budgets and ``n1`` goes to the eigenbasis observable.
    """
    t = _check_tau_interior(tau)
    d = tau.dim
    if schedule is None:
        schedule = round_robin(d)
    if schedule.dim != d:
        raise SchemaError("schedule dimension mismatch")
    w = _matrix_unit_weights(d, n1, round_weights)
    r = np.diag(n1 / (2.0 * t))
    s = np.zeros((d, d))
    for b, rnd in enumerate(schedule.rounds):
        for i, j in rnd:
            gain = w[b] / (2.0 * (t[i] + t[j]))
            r[i, i] += gain
            r[j, j] += gain
            r[i, j] += gain
            r[j, i] += gain
            s[i, j] += gain
            s[j, i] += gain
    return TwirledOperator(dim=d, R=r, S=s, eigenbasis=_partner_frame(tau))


def matrix_unit_strategy(
    tau: DensityMatrix,
    n1: float,
    round_weights,
    mode: str | None = None,
    schedule: PairSchedule | None = None,
) -> StrategyMetrics:
    """Matrix-unit strategy metrics for explicit budget splits."""
    w = _matrix_unit_weights(tau.dim, n1, round_weights)
    blocks = matrix_unit_blocks(tau, n1, round_weights, schedule)
    return block_measures(
        blocks,
        splits={"n1": float(n1), "rounds": [float(x) for x in w]},
        mode=mode,
        label=MATRIX_UNIT,
        n=float(n1 + w.sum()),
    )


def matrix_unit_best_split(d: int, n: float) -> tuple:
    """Optimal (n1, uniform round weight) for the tracial state, either measure."""
    if d % 2 != 0 or d < 2:
        raise OddDimensionError(f"matrix-unit strategy needs even dim, got {d}")
    if n <= 0:
        raise SchemaError(f"budget must be positive, got {n}")
    n_round = min(2.0 * n / (d + 1.0), n / (d - 1.0))
    return n - (d - 1.0) * n_round, n_round


def matrix_unit_tracial_det(d: int, n1: float, n_round: float) -> float:
    """Tracial-state closed form for det of the matrix-unit strategy."""
    return (d / 4.0) ** (d * d - 1) * (
        (2.0 * n1 + n_round * (d - 2.0)) * n_round**d
    ) ** (d - 1)


def matrix_unit_tracial_tr_inv(d: int, n1: float, n_round: float) -> float:
    """Tracial-state closed form for trace-inverse of the matrix-unit strategy."""
    return 4.0 * (d - 1.0) * (
        1.0 / ((2.0 * n1 + n_round * (d - 2.0)) * d) + 1.0 / n_round
    )


def matrix_unit_config(
    tau: DensityMatrix,
    n1: float,
    round_weights,
    schedule: PairSchedule | None = None,
) -> StrategyConfig:
    """Measurable observables of the matrix-unit strategy (plus eigenbasis round)."""
    d = tau.dim
    if schedule is None:
        schedule = round_robin(d)
    w = _matrix_unit_weights(d, n1, round_weights)
    v = _partner_frame(tau)
    items = []
    if n1 > 0:
        items.append((eigenbasis_observable(tau), float(n1)))
    for b, rnd in enumerate(schedule.rounds):
        if w[b] <= 0:
            continue
        projs = []
        labels = []
        for k, (i, j) in enumerate(rnd):
            plus = (v[:, i] + v[:, j]) / np.sqrt(2.0)
            minus = (v[:, i] - v[:, j]) / np.sqrt(2.0)
            projs.append(np.outer(plus, plus.conj()))
            projs.append(np.outer(minus, minus.conj()))
            labels.append(float(k + 1))
            labels.append(float(-(k + 1)))
        items.append((ObservableSpec(tuple(projs), tuple(labels)), float(w[b])))
    return StrategyConfig(tuple(items))
