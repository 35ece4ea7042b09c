"""Seeded measurement simulation, ML estimation, and the adaptive loop.

RNG contract
------------
Every stochastic routine takes an integer seed and derives a counter-based
Philox generator via :func:`make_rng` with key ``(seed, stream)``.  Stream 0
is the only stream consumed by the shipped routines; draws occur in a
documented order so runs are reproducible across processes and thread
counts:

* ``run_fixed``: one ``rng.choice`` block per observable, in strategy item
  order.
* ``run_adaptive_qubit``: one ``rng.binomial`` draw per frame axis (x, y, z
  order) per batch, in batch order.
* ``dimension_escalation``: one ``rng.choice`` draw per measurement event,
  in event order.

Estimation is deterministic (no RNG): linear inversion seeds a concave
log-likelihood maximization (damped Newton on the Bloch ball for qubits,
L-BFGS on a Cholesky factorization otherwise), clipped to states with
minimum eigenvalue ``EPS_CLIP`` so every later knowledge-operator
evaluation stays in the interior of the state set.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import (
    BudgetExceededError,
    EmptyEnsembleError,
    NoConvergenceError,
    OutOfBallError,
    SchemaError,
)
from .knowledge import MeasurementRecord, StrategyConfig
from .linalg import (
    DensityMatrix,
    ObservableSpec,
    bloch_state,
    bloch_vector,
    hermitian_basis,
    matrix_to_json,
    outcome_probs,
)

EPS_CLIP = 1e-6
MAX_BLOCH_RADIUS = 1.0 - 2.0 * EPS_CLIP  # min eigenvalue (1-|u|)/2 >= EPS_CLIP


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by (seed, stream)."""
    key = np.array([seed, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_outcomes(
    rho: DensityMatrix, obs: ObservableSpec, count: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw ``count`` i.i.d. outcome labels with probabilities Tr(rho P_a)."""
    if count < 0:
        raise SchemaError(f"count must be nonnegative, got {count}")
    labels = np.array(obs.labels)
    if count == 0:
        return labels[:0]
    probs = outcome_probs(rho, obs)
    idx = rng.choice(len(labels), size=count, p=probs)
    return labels[idx]


def round_counts(weights, total: int) -> np.ndarray:
    """Largest-remainder integer split of ``total`` proportional to weights."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or w.sum() <= 0:
        raise SchemaError("weights must be nonnegative with positive sum")
    scaled = w / w.sum() * total
    base = np.floor(scaled).astype(int)
    short = total - int(base.sum())
    order = np.argsort(-(scaled - base), kind="stable")
    base[order[:short]] += 1
    return base


@dataclass(frozen=True)
class TrialResult:
    """One simulated determination of a hidden state."""

    estimate: DensityMatrix
    true_state: DensityMatrix
    squared_error: float  # Tr((estimate - true)^2)
    bloch_squared_error: float | None
    n_used: int
    seed: int
    trajectory: tuple = ()

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "n_used": self.n_used,
            "squared_error": self.squared_error,
            "bloch_squared_error": self.bloch_squared_error,
            "estimate": matrix_to_json(self.estimate.matrix),
            "trajectory": [list(map(list, snap)) for snap in self.trajectory],
        }


@dataclass(frozen=True)
class EnsembleStats:
    trials: int
    mean_sq_error: float
    stderr: float
    n: int
    mode: str | None = None

    def to_json(self) -> dict:
        return {
            "trials": self.trials,
            "mean_sq_error": self.mean_sq_error,
            "stderr": self.stderr,
            "n": self.n,
            "mode": self.mode,
        }


def aggregate(trials, bloch: bool = False, mode: str | None = None) -> EnsembleStats:
    """Mean and standard error of the (Bloch) squared errors of an ensemble."""
    trials = list(trials)
    if not trials:
        raise EmptyEnsembleError("no trials to aggregate")
    n_vals = {t.n_used for t in trials}
    if len(n_vals) != 1:
        raise SchemaError(f"trials have mixed budgets: {sorted(n_vals)}")
    if bloch:
        vals = np.array([t.bloch_squared_error for t in trials], dtype=float)
    else:
        vals = np.array([t.squared_error for t in trials], dtype=float)
    stderr = 0.0
    if len(vals) > 1:
        stderr = float(np.std(vals, ddof=1) / math.sqrt(len(vals)))
    return EnsembleStats(
        trials=len(vals),
        mean_sq_error=float(vals.mean()),
        stderr=stderr,
        n=n_vals.pop(),
        mode=mode,
    )


# ---------------------------------------------------------------------------
# Maximum likelihood

def _bloch_terms(counts: dict, registry: dict):
    """Collapse a qubit record to (trace, bloch-part, count) likelihood terms."""
    terms = []
    paulis = [np.array(m) for m in _PAULIS]
    for (obs_id, label), cnt in sorted(counts.items()):
        obs = registry[obs_id]
        a = int(np.argmin([abs(label - x) for x in obs.labels]))
        p = obs.projectors[a]
        t = float(np.trace(p).real)
        c = np.array([float(np.trace(p @ s).real) for s in paulis])
        terms.append((t, c, float(cnt)))
    return terms


def _clip_ball(u: np.ndarray) -> np.ndarray:
    r = float(np.linalg.norm(u))
    if r > MAX_BLOCH_RADIUS:
        return u * (MAX_BLOCH_RADIUS / r)
    return u


def _ml_bloch(terms, max_iter: int = 300, u0=None) -> np.ndarray:
    """Damped Newton ascent of the Bloch log likelihood on the clipped ball."""
    t = np.array([x for x, _, _ in terms])
    c = np.stack([x for _, x, _ in terms])
    cnt = np.array([x for _, _, x in terms])

    def ll(u):
        return float(cnt @ np.log(t + c @ u))

    u = _clip_ball(np.zeros(3) if u0 is None else np.asarray(u0, dtype=float))
    cur = ll(u)
    for _ in range(max_iter):
        p = t + c @ u
        grad = (cnt / p) @ c
        hess = (c * (cnt / p**2)[:, None]).T @ c
        hess += 1e-12 * max(float(np.trace(hess)), 1.0) * np.eye(3)
        direction = np.linalg.solve(hess, grad)
        lam = 1.0
        accepted = False
        while lam > 1e-16:
            cand = _clip_ball(u + lam * direction)
            val = ll(cand)
            if val > cur:
                shift = float(np.linalg.norm(cand - u))
                u, cur = cand, val
                accepted = True
                break
            lam *= 0.5
        if not accepted or shift < 1e-12:
            return u
    raise NoConvergenceError("bloch ML did not converge")


def _project_spectrum(lams: np.ndarray, eps: float) -> np.ndarray:
    """Euclidean projection onto {l_i >= eps, sum l_i = 1}."""
    d = lams.size
    mass = 1.0 - d * eps
    if mass <= 0:
        raise SchemaError(f"eps {eps} too large for dim {d}")
    mu = np.sort(lams - eps)[::-1]
    css = np.cumsum(mu)
    rho_idx = np.nonzero(mu - (css - mass) / np.arange(1, d + 1) > 0)[0][-1]
    theta = (css[rho_idx] - mass) / (rho_idx + 1.0)
    return np.maximum(lams - eps - theta, 0.0) + eps


def _project_state(h: np.ndarray, eps: float) -> DensityMatrix:
    h = 0.5 * (h + h.conj().T)
    w, v = np.linalg.eigh(h)
    w = _project_spectrum(w, eps)
    return DensityMatrix((v * w) @ v.conj().T)


def _ml_general(counts: dict, registry: dict, d: int, max_iter: int) -> DensityMatrix:
    basis = np.stack(hermitian_basis(d).traceless)
    items = sorted(counts.items())
    keys = [k for k, _ in items]
    cnts = np.array([float(c) for _, c in items])
    projs = []
    for obs_id, label in keys:
        obs = registry[obs_id]
        a = int(np.argmin([abs(label - x) for x in obs.labels]))
        projs.append(np.asarray(obs.projectors[a]))
    projs = np.stack(projs)
    per_obs_total = {}
    for (obs_id, _), cnt in zip(keys, cnts):
        per_obs_total[obs_id] = per_obs_total.get(obs_id, 0.0) + cnt
    # linear-inversion start: weighted least squares on outcome frequencies
    rows = np.einsum("rij,aji->ar", basis, projs).real
    targets = np.array(
        [
            cnt / per_obs_total[obs_id] - float(np.trace(p).real) / d
            for (obs_id, _), p, cnt in zip(keys, projs, cnts)
        ]
    )
    wts = np.sqrt([per_obs_total[obs_id] for obs_id, _ in keys])
    x, *_ = np.linalg.lstsq(rows * wts[:, None], targets * wts, rcond=None)
    start = np.eye(d, dtype=complex) / d + np.einsum("r,rij->ij", x, basis)
    rho = _project_state(start, 1e-3 / d).matrix

    # concave LL maximized over rho = T T^dag / Tr(T T^dag), T lower
    # triangular: d real diagonal entries then re/im of the strict lower part
    low_r, low_c = np.tril_indices(d, k=-1)
    n_low = low_r.size

    def unpack(x):
        t = np.zeros((d, d), dtype=complex)
        t[np.diag_indices(d)] = x[:d]
        t[low_r, low_c] = x[d : d + n_low] + 1j * x[d + n_low :]
        return t

    def negative_ll(x):
        t = unpack(x)
        a = t @ t.conj().T
        tr = float(np.trace(a).real)
        state = a / tr
        w = np.einsum("aij,ji->a", projs, state).real
        w = np.maximum(w, 1e-300)
        val = float(cnts @ np.log(w))
        g = np.einsum("a,aij->ij", cnts / w, projs)
        h = (g - float(np.trace(g @ state).real) * np.eye(d)) / tr
        ht = 2.0 * (h @ t)
        grad = np.concatenate(
            [ht[np.diag_indices(d)].real, ht[low_r, low_c].real, ht[low_r, low_c].imag]
        )
        return -val, -grad

    x0_t = np.linalg.cholesky(rho)
    x0 = np.concatenate(
        [x0_t[np.diag_indices(d)].real, x0_t[low_r, low_c].real, x0_t[low_r, low_c].imag]
    )
    res = minimize(
        negative_ll,
        x0,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "ftol": 1e-14, "gtol": 1e-10},
    )
    grad_scale = float(np.linalg.norm(res.jac)) / float(cnts.sum())
    if not res.success and grad_scale > 1e-6:
        raise NoConvergenceError(
            f"ML optimization stopped with gradient scale {grad_scale:.3e}"
        )
    t = unpack(res.x)
    a = t @ t.conj().T
    return _project_state(a / np.trace(a).real, EPS_CLIP)


def _informationally_complete(registry: dict, d: int) -> bool:
    basis = np.stack(hermitian_basis(d).traceless)
    rows = [
        np.einsum("rij,ji->r", basis, np.asarray(p)).real
        for obs in registry.values()
        for p in obs.projectors
    ]
    return np.linalg.matrix_rank(np.array(rows), tol=1e-9) == d * d - 1


def ml_estimate(record: MeasurementRecord, max_iter: int = 4000) -> DensityMatrix:
    """Maximum-likelihood state for a measurement record.

    The estimate maximizes :func:`tomoplan.knowledge.log_posterior` over
    states with minimum eigenvalue ``EPS_CLIP``; qubits use the Bloch-ball
    parametrization, higher dimensions a spectral simplex projection.
    """
    if not record.entries:
        raise SchemaError("empty measurement record")
    d = next(iter(record.registry.values())).dim
    if not _informationally_complete(record.registry, d):
        warnings.warn(
            "record observables are not informationally complete; "
            "the ML maximizer may not be unique",
            stacklevel=2,
        )
    counts = record.counts()
    if d == 2:
        u = _ml_bloch(_bloch_terms(counts, record.registry), max_iter)
        return bloch_state(u)
    return _ml_general(counts, record.registry, d, max_iter)


_PAULIS = (
    ((0, 1), (1, 0)),
    ((0, -1j), (1j, 0)),
    ((1, 0), (0, -1)),
)


# ---------------------------------------------------------------------------
# Fixed-strategy trials

def run_fixed(
    tau_true: DensityMatrix, strategy: StrategyConfig, seed: int
) -> TrialResult:
    """Measure integer-weight observables once each and estimate once."""
    rng = make_rng(seed)
    entries = []
    registry = {}
    for i, (obs, weight) in enumerate(strategy.items):
        cnt = int(round(weight))
        if abs(weight - cnt) > 1e-6:
            raise SchemaError(f"strategy weight {weight!r} is not an integer count")
        obs_id = f"b{i}"
        registry[obs_id] = obs
        for label in sample_outcomes(tau_true, obs, cnt, rng):
            entries.append((obs_id, float(label)))
    record = MeasurementRecord(tuple(entries), registry, seed=seed)
    estimate = ml_estimate(record)
    delta = estimate.matrix - tau_true.matrix
    sq = float(np.trace(delta @ delta).real)
    bloch_sq = None
    if tau_true.dim == 2:
        du = bloch_vector(estimate) - bloch_vector(tau_true)
        bloch_sq = float(du @ du)
    return TrialResult(
        estimate=estimate,
        true_state=tau_true,
        squared_error=sq,
        bloch_squared_error=bloch_sq,
        n_used=len(record),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Adaptive qubit loop

def _mode_ratios(mode: str, u_norm: float) -> np.ndarray:
    if mode == "volume":
        return np.full(3, 1.0 / 3.0)
    if mode == "distance":
        s = math.sqrt(max(1.0 - u_norm * u_norm, 0.0))
        return np.array([1.0, 1.0, s]) / (2.0 + s)
    raise SchemaError(f"mode must be volume or distance, got {mode!r}")


def _realign(frame: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Minimal rotation of the frame taking its third axis onto ``target``."""
    c3 = frame[2]
    v = np.cross(c3, target)
    s = float(np.linalg.norm(v))
    c = float(c3 @ target)
    if s < 1e-12:
        if c > 0:
            return frame.copy()
        # antiparallel: half turn about the first axis
        axis = frame[0]
        rot = 2.0 * np.outer(axis, axis) - np.eye(3)
    else:
        vx = np.array(
            [[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]]
        )
        rot = np.eye(3) + vx + vx @ vx * ((1.0 - c) / (s * s))
    out = frame @ rot.T
    out[2] = target
    out[0] -= (out[0] @ out[2]) * out[2]
    out[0] /= np.linalg.norm(out[0])
    out[1] = np.cross(out[2], out[0])
    return out


def run_adaptive_qubit(
    u_true, n_total: int, batch: int, mode: str, seed: int
) -> TrialResult:
    """Pilot equal thirds, then re-estimate, realign, and reallocate per batch.

    Each batch after the pilot realigns the measurement frame so its third
    axis follows the current estimate (rotating the other two axes as little
    as possible) and splits counts by the closed-form optimal ratios for the
    requested measure.
    """
    u_true = np.asarray(u_true, dtype=float)
    if u_true.shape != (3,):
        raise SchemaError("u_true must be a 3-vector")
    if float(np.linalg.norm(u_true)) >= 1.0:
        raise OutOfBallError("true state must lie strictly inside the ball")
    if batch < 30:
        raise SchemaError(f"batch must be at least 30, got {batch}")
    if n_total < 10 * batch:
        raise SchemaError("n_total must be at least 10 batches")
    rng = make_rng(seed)
    frame = np.eye(3)
    terms = []  # (axis vector, n_plus, n_minus)
    trajectory = []
    u_hat = np.zeros(3)
    used = 0
    first = True
    while used < n_total:
        size = min(batch, n_total - used)
        if first:
            counts = round_counts(np.ones(3), size)
            first = False
        else:
            norm = float(np.linalg.norm(u_hat))
            if norm > 1e-9:
                frame = _realign(frame, u_hat / norm)
            counts = round_counts(_mode_ratios(mode, norm), size)
        for axis, cnt in zip(frame, counts):
            p_plus = (1.0 + float(axis @ u_true)) / 2.0
            n_plus = int(rng.binomial(cnt, p_plus)) if cnt > 0 else 0
            terms.append((1.0, axis.copy(), float(n_plus)))
            terms.append((1.0, -axis.copy(), float(cnt - n_plus)))
        used += size
        u_hat = _ml_bloch(
            [t for t in terms if t[2] > 0], max_iter=4000, u0=u_hat
        )
        trajectory.append(
            (tuple(float(x) for x in u_hat), tuple(int(c) for c in counts))
        )
    estimate = bloch_state(u_hat)
    du = u_hat - u_true
    return TrialResult(
        estimate=estimate,
        true_state=bloch_state(u_true),
        squared_error=float(du @ du) / 2.0,
        bloch_squared_error=float(du @ du),
        n_used=used,
        seed=seed,
        trajectory=tuple(trajectory),
    )


def run_ensemble(trial_fn, seeds, threads: int = 1) -> list:
    """Run independent seeded trials, optionally on a thread pool.

    Results are ordered like ``seeds`` and identical for any thread count.
    """
    seeds = list(seeds)
    if threads <= 1:
        return [trial_fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(trial_fn, seeds))


# ---------------------------------------------------------------------------
# Dimension escalation

@dataclass(frozen=True)
class EscalationResult:
    """Outcome of the subspace-growing search for an effectively finite state."""

    d_eff: int
    n0: int  # measurements until the first in-subspace evidence
    projector: np.ndarray
    subspace: tuple
    n_used: int
    seed: int
    eps0: float
    grows_kept: int
    grows_undone: int

    def to_json(self) -> dict:
        return {
            "d_eff": self.d_eff,
            "n0": self.n0,
            "subspace": list(self.subspace),
            "n_used": self.n_used,
            "seed": self.seed,
            "eps0": self.eps0,
            "grows_kept": self.grows_kept,
            "grows_undone": self.grows_undone,
        }


def consecutive_passes_needed(eps0: float) -> int:
    """Smallest run of in-subspace outcomes certifying outside mass <= eps0^2/2.

    Zero failures in N draws put a one-sided 95% (Clopper-Pearson) upper
    bound of 1 - 0.05^(1/N) on the outside mass.
    """
    target = eps0 * eps0 / 2.0
    if target >= 1.0:
        return 1
    return int(math.ceil(math.log(0.05) / math.log1p(-target)))


def dimension_escalation(
    tau_big: DensityMatrix,
    eps0: float,
    seed: int,
    probe: int = 20,
    cap: int = 200_000,
) -> EscalationResult:
    """Grow a basis subspace until the state is statistically inside it.

    Starts from the first basis vector.  An outside outcome triggers a
    growth attempt with the next candidate basis vector (ramp order): the
    refined three-outcome check {old subspace, candidate, rest} runs
    ``probe`` times and the candidate is kept only if it catches any mass,
    otherwise the growth is undone and the candidate moves to the back of
    the pool.  Stops after enough consecutive in-subspace outcomes to bound
    the outside mass by ``eps0**2 / 2`` at 95% confidence.
    """
    if eps0 <= 0:
        raise SchemaError(f"eps0 must be positive, got {eps0}")
    diag = np.real(np.diag(tau_big.matrix))
    big_d = tau_big.dim
    rng = make_rng(seed)
    subspace = [0]
    pool = list(range(1, big_d))
    needed = consecutive_passes_needed(eps0)
    streak = 0
    n_used = 0
    n0 = 0
    kept = 0
    undone = 0

    def draw(probs) -> int:
        nonlocal n_used, n0
        n_used += 1
        if n_used > cap:
            raise BudgetExceededError(
                f"escalation exceeded {cap} measurements at dim {len(subspace)}"
            )
        p = np.clip(np.asarray(probs, dtype=float), 0.0, 1.0)
        p /= p.sum()
        out = int(rng.choice(len(p), p=p))
        if n0 == 0 and out != len(p) - 1:
            n0 = n_used  # last outcome index is the "outside/rest" slot
        return out

    while streak < needed:
        p_in = float(diag[subspace].sum())
        inside = draw([p_in, 1.0 - p_in]) == 0
        if inside:
            streak += 1
            continue
        streak = 0
        if not pool:
            continue
        candidate = pool.pop(0)
        p_old = float(diag[subspace].sum())
        p_new = float(diag[candidate])
        hits = 0
        for _ in range(probe):
            if draw([p_old, p_new, 1.0 - p_old - p_new]) == 1:
                hits += 1
        if hits > 0:
            subspace.append(candidate)
            kept += 1
        else:
            pool.append(candidate)
            undone += 1
    subspace_t = tuple(sorted(subspace))
    proj = np.zeros((big_d, big_d), dtype=complex)
    for k in subspace_t:
        proj[k, k] = 1.0
    return EscalationResult(
        d_eff=len(subspace_t),
        n0=n0,
        projector=proj,
        subspace=subspace_t,
        n_used=n_used,
        seed=seed,
        eps0=eps0,
        grows_kept=kept,
        grows_undone=undone,
    )


def _compress(tau_big: DensityMatrix, subspace) -> DensityMatrix:
    idx = np.array(subspace, dtype=int)
    block = tau_big.matrix[np.ix_(idx, idx)]
    mass = float(np.trace(block).real)
    if mass <= 0:
        raise SchemaError("subspace carries no probability mass")
    return DensityMatrix(block / mass)


def integer_config(strategy: StrategyConfig, total: int) -> StrategyConfig:
    """Round strategy weights to integer counts summing to ``total``."""
    counts = round_counts(strategy.weights, total)
    items = tuple(
        (obs, float(c))
        for (obs, _), c in zip(strategy.items, counts)
        if c > 0
    )
    return StrategyConfig(items)


def escalate_and_estimate(
    tau_big: DensityMatrix,
    eps0: float,
    seed: int,
    n_est: int,
    mode: str = "distance",
):
    """Escalate to an effective subspace, then estimate the compressed state.

    The estimation stage measures the unbiased-pair configuration around the
    tracial state of the found subspace (informationally complete there) and
    reports the full-space root squared error of the re-embedded estimate.
    """
    from .highdim import mub_pair_config
    from .linalg import tracial_state

    esc = dimension_escalation(tau_big, eps0, seed)
    truth = _compress(tau_big, esc.subspace)
    if esc.d_eff == 1:
        est_small = DensityMatrix(np.eye(1, dtype=complex))
        trial = None
    else:
        cfg = integer_config(
            mub_pair_config(tracial_state(esc.d_eff), float(n_est), mode), n_est
        )
        trial = run_fixed(truth, cfg, seed=seed + 1)
        est_small = trial.estimate
    big_d = tau_big.dim
    embedded = np.zeros((big_d, big_d), dtype=complex)
    idx = np.array(esc.subspace, dtype=int)
    embedded[np.ix_(idx, idx)] = est_small.matrix
    delta = embedded - tau_big.matrix
    eps_full = math.sqrt(max(float(np.trace(delta @ delta).real), 0.0))
    return esc, est_small, eps_full, trial


def escalation_slope(
    tau_big: DensityMatrix,
    eps0: float,
    seeds,
    budgets,
    mode: str = "distance",
):
    """Median recovery error per budget and the log-log slope of n against it.

    Returns (rows, slope) with rows of (n, median_error); the expected
    root-n error law makes the slope of ln n versus ln error come out near
    -2.
    """
    budgets = [int(n) for n in budgets]
    rows = []
    for n_est in budgets:
        errs = []
        for s in seeds:
            _, _, eps_full, _ = escalate_and_estimate(
                tau_big, eps0, s, n_est, mode
            )
            errs.append(eps_full)
        rows.append((n_est, float(np.median(errs))))
    return rows, loglog_slope(rows)


def loglog_slope(rows) -> float:
    """Fitted slope of ln n against ln error over (n, error) rows."""
    lns = np.log([r[0] for r in rows])
    lne = np.log([r[1] for r in rows])
    return float(np.polyfit(lne, lns, 1)[0])
