"""Closed-form optimal qubit strategies and a numerical attainment check.

For a qubit with Bloch vector ``u`` measured along unit axes ``c_beta`` with
weights ``n_beta``, the knowledge matrix in Bloch coordinates is

    M_rs = sum_beta n_beta c_beta_r c_beta_s / (1 - (u . c_beta)^2).

With a total budget ``n`` split over three orthonormal axes, one of them
along ``u``:

* volume mode (maximize det M): equal thirds, best value
  ``det M = (n/3)^3 / (1 - u^2)``;
* distance mode (minimize Tr M^-1): with ``s = sqrt(1 - u^2)``, weights
  ``(n, n, n s) / (2 + s)`` and best value ``(2 + s)^2 / n``.

Both satisfy the Lagrange stationarity system with multipliers
``C_beta = 2 n_beta c / (1 - (u . c_beta)^2)`` where ``c = 3/n`` in volume
mode and ``c = Tr(M^-1)/n`` in distance mode; ``stationarity_residuals``
evaluates that system for any configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import OutOfBallError, SchemaError
from .knowledge import StrategyConfig
from .linalg import spin_observable

VOLUME = "volume"
DISTANCE = "distance"
MODES = (VOLUME, DISTANCE)


def _check_mode(mode: str) -> str:
    if mode not in MODES:
        raise SchemaError(f"mode must be one of {MODES}, got {mode!r}")
    return mode


def _check_u(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (3,):
        raise SchemaError(f"Bloch vector needs 3 components, got shape {u.shape}")
    if np.linalg.norm(u) >= 1.0:
        raise OutOfBallError(f"|u| = {np.linalg.norm(u)!r} must be < 1")
    return u


def _check_axes_weights(axes, weights):
    c = np.atleast_2d(np.asarray(axes, dtype=float))
    w = np.atleast_1d(np.asarray(weights, dtype=float))
    if c.shape != (len(w), 3):
        raise SchemaError(f"axes shape {c.shape} does not match {len(w)} weights")
    norms = np.linalg.norm(c, axis=1)
    if np.max(np.abs(norms - 1.0)) > 1e-9:
        raise SchemaError("axes must be unit vectors")
    if np.any(w < 0.0) or w.sum() <= 0.0:
        raise SchemaError("weights must be nonnegative with positive total")
    return c, w


def qubit_M(u, axes, weights) -> np.ndarray:
    """Knowledge matrix in Bloch coordinates for an axis/weight configuration."""
    u = _check_u(u)
    c, w = _check_axes_weights(axes, weights)
    g = c @ u
    denom = 1.0 - g * g
    return (c.T * (w / denom)) @ c


def canonical_frame(u) -> np.ndarray:
    """Right-handed orthonormal frame with the third axis along ``u``.

    For ``u = 0`` this is the coordinate frame.  The transverse axes complete
    deterministically from the coordinate direction least aligned with ``u``.
    """
    u = _check_u(u)
    r = np.linalg.norm(u)
    if r < 1e-15:
        return np.eye(3)
    c3 = u / r
    k = int(np.argmin(np.abs(c3)))
    e = np.zeros(3)
    e[k] = 1.0
    c1 = e - (e @ c3) * c3
    c1 /= np.linalg.norm(c1)
    c2 = np.cross(c3, c1)
    return np.vstack([c1, c2, c3])


@dataclass(frozen=True)
class QubitOptimum:
    """An optimal (or optimized) three-axis qubit plan."""

    mode: str
    axes: np.ndarray  # rows are the measurement axes
    weights: np.ndarray
    value: float  # det M (volume) or Tr M^-1 (distance)
    eigenvalues: np.ndarray  # of M, in axes order for the closed forms

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "axes": [[float(x) for x in row] for row in self.axes],
            "weights": [float(w) for w in self.weights],
            "value": float(self.value),
            "eigenvalues": [float(x) for x in self.eigenvalues],
        }

    def as_strategy(self) -> StrategyConfig:
        items = tuple(
            (spin_observable(c), w)
            for c, w in zip(self.axes, self.weights)
            if w > 0.0
        )
        return StrategyConfig(items)


def best_volume_config(u, n: float) -> QubitOptimum:
    """Equal thirds on an orthonormal frame aligned with ``u``; maximal det M."""
    u = _check_u(u)
    if n <= 0:
        raise SchemaError(f"budget n must be positive, got {n}")
    usq = float(u @ u)
    axes = canonical_frame(u)
    third = n / 3.0
    eigs = np.array([third, third, third / (1.0 - usq)])
    return QubitOptimum(
        mode=VOLUME,
        axes=axes,
        weights=np.array([third, third, third]),
        value=float(third**3 / (1.0 - usq)),
        eigenvalues=eigs,
    )


def best_distance_config(u, n: float) -> QubitOptimum:
    """Weights ``(n, n, n s)/(2+s)`` on the aligned frame; minimal Tr M^-1."""
    u = _check_u(u)
    if n <= 0:
        raise SchemaError(f"budget n must be positive, got {n}")
    s = math.sqrt(1.0 - float(u @ u))
    axes = canonical_frame(u)
    w = np.array([n / (2.0 + s), n / (2.0 + s), n * s / (2.0 + s)])
    eigs = np.array([n / (2.0 + s), n / (2.0 + s), n / ((2.0 + s) * s)])
    return QubitOptimum(
        mode=DISTANCE,
        axes=axes,
        weights=w,
        value=float((2.0 + s) ** 2 / n),
        eigenvalues=eigs,
    )


def plan_qubit(u, n: float, mode: str) -> QubitOptimum:
    """Closed-form optimal plan for either knowledge measure."""
    mode = _check_mode(mode)
    return best_volume_config(u, n) if mode == VOLUME else best_distance_config(u, n)


def stationarity_residuals(u, axes, weights, mode: str) -> float:
    """Max residual of the Lagrange stationarity system at a configuration.

    Zero (to rounding) exactly at stationary points of the constrained
    problem; the closed-form optima give residuals at machine level.
    """
    mode = _check_mode(mode)
    u = _check_u(u)
    c, w = _check_axes_weights(axes, weights)
    n = float(w.sum())
    m = qubit_M(u, c, w)
    m_inv = np.linalg.inv(m)
    kernel = m_inv if mode == VOLUME else m_inv @ m_inv
    mult = 3.0 / n if mode == VOLUME else float(np.trace(m_inv)) / n
    g = c @ u
    denom = 1.0 - g * g
    worst = 0.0
    for beta in range(len(w)):
        quad = float(c[beta] @ kernel @ c[beta]) / denom[beta]
        worst = max(worst, abs(quad - mult))
        big_c = 2.0 * w[beta] * mult / denom[beta]
        vec = (2.0 * w[beta] / denom[beta]) * (
            kernel @ c[beta] + g[beta] * mult * u
        ) - big_c * c[beta]
        worst = max(worst, float(np.max(np.abs(vec))))
    return worst


def _project_simplex(v: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto the scaled simplex ``sum = total, >= 0``."""
    n = len(v)
    srt = np.sort(v)[::-1]
    cums = np.cumsum(srt) - total
    idx = np.arange(1, n + 1)
    cond = srt - cums / idx > 0
    rho = int(np.nonzero(cond)[0][-1])
    theta = cums[rho] / (rho + 1.0)
    return np.clip(v - theta, 0.0, None)


def _objective(u, c, w, mode):
    g = c @ u
    denom = 1.0 - g * g
    m = (c.T * (w / denom)) @ c
    eig = np.linalg.eigvalsh(m)
    if eig[0] <= 1e-13 * max(eig[-1], 1.0):
        return -np.inf, m
    if mode == VOLUME:
        return float(np.sum(np.log(eig))), m
    return -float(np.sum(1.0 / eig)), m


def optimize_config(
    u,
    n: float,
    m_axes: int,
    mode: str,
    restarts: int = 32,
    iters: int = 2000,
    seed: int = 0,
) -> QubitOptimum:
    """Multi-start projected-gradient search over axes and weights.

    Serves as an attainment check for the closed forms: with enough restarts
    the best value matches the aligned-frame optimum but can never beat it.
    No global-optimality certificate is implied.
    """
    mode = _check_mode(mode)
    u = _check_u(u)
    if m_axes < 3:
        raise SchemaError("need at least 3 axes for an informationally complete plan")
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0], dtype=np.uint64)))
    best = None
    for _ in range(restarts):
        c = rng.normal(size=(m_axes, 3))
        c /= np.linalg.norm(c, axis=1, keepdims=True)
        w = n * rng.dirichlet(np.ones(m_axes))
        f, _ = _objective(u, c, w, mode)
        step = 0.1
        stale = 0
        for _ in range(iters):
            g = c @ u
            denom = 1.0 - g * g
            mat = (c.T * (w / denom)) @ c
            try:
                m_inv = np.linalg.inv(mat)
            except np.linalg.LinAlgError:
                break
            kernel = m_inv if mode == VOLUME else m_inv @ m_inv
            kc = c @ kernel  # rows: kernel @ c_beta
            quad = np.einsum("bi,bi->b", kc, c)
            grad_w = quad / denom
            grad_c = (2.0 * w / denom)[:, None] * kc + (
                2.0 * w * quad * g / denom**2
            )[:, None] * u[None, :]
            scale_w = max(float(np.max(np.abs(grad_w))), 1e-300)
            scale_c = max(float(np.max(np.abs(grad_c))), 1e-300)
            w_new = _project_simplex(w + (step * n / scale_w) * grad_w, n)
            c_new = c + step * grad_c / scale_c
            c_new /= np.linalg.norm(c_new, axis=1, keepdims=True)
            f_new, _ = _objective(u, c_new, w_new, mode)
            if f_new > f + 1e-15 * abs(f):
                if f_new < f + 1e-13 * (1.0 + abs(f)):
                    stale += 1
                else:
                    stale = 0
                c, w, f = c_new, w_new, f_new
                step = min(step * 1.2, 10.0)
            else:
                step *= 0.5
                stale += 1
            if step < 1e-13 or stale > 40:
                break
        if np.isfinite(f) and (best is None or f > best[0]):
            best = (f, c, w)
    if best is None:
        raise SchemaError("optimizer found no feasible configuration")
    f, c, w = best
    mat = qubit_M(u, c, w)
    eig = np.linalg.eigvalsh(mat)[::-1]
    value = float(np.prod(eig)) if mode == VOLUME else float(np.sum(1.0 / eig))
    return QubitOptimum(mode=mode, axes=c, weights=w, value=value, eigenvalues=eig)
