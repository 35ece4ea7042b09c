"""Opt-in matplotlib rendering of the delimited CLI outputs.

Figures are a convenience layer over the JSON/CSV artifacts, never the
source of truth; the CLI only calls into this module when ``--figures`` is
passed.  The Agg backend keeps rendering headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def _finish(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plan_figure(plan: dict, path) -> Path:
    """Bar chart of the planned per-axis counts."""
    counts = plan["counts"]
    labels = [f"c{k + 1}" for k in range(len(counts))]
    fig, ax = plt.subplots(figsize=(4.0, 3.0))
    ax.bar(labels, counts, color="#4878a8")
    ax.set_ylabel("measurements")
    ax.set_title(f"{plan['mode']} plan, n = {plan['n']}")
    fig.tight_layout()
    return _finish(fig, path)


def errors_figure(errors, n: int, path, scaled: bool = True) -> Path:
    """Histogram of per-trial squared errors (optionally scaled by n)."""
    vals = [n * e for e in errors] if scaled else list(errors)
    fig, ax = plt.subplots(figsize=(4.5, 3.0))
    ax.hist(vals, bins=30, color="#4878a8", edgecolor="white")
    mean = sum(vals) / len(vals)
    ax.axvline(mean, color="#a84848", linewidth=1.2, label=f"mean {mean:.3g}")
    ax.set_xlabel("n * squared error" if scaled else "squared error")
    ax.set_ylabel("trials")
    ax.legend(frameon=False)
    fig.tight_layout()
    return _finish(fig, path)


def compare_figure(rows, path) -> Path:
    """Knowledge-measure values per strategy, against the budget n.

    ``rows`` are (d, state, strategy, mode, n, value) tuples as emitted to
    CSV; one marker series per strategy label.
    """
    by_label: dict = {}
    for _, _, label, mode, n, value in rows:
        by_label.setdefault(label, []).append((n, value))
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for label, pts in sorted(by_label.items()):
        pts = sorted(pts)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=label)
    if len({n for pts in by_label.values() for n, _ in pts}) > 1:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel({"volume": "det M", "distance": "Tr M^-1"}.get(rows[0][3], "value"))
    ax.legend(frameon=False)
    fig.tight_layout()
    return _finish(fig, path)


def escalation_figure(rows, slope: float, path) -> Path:
    """Log-log median recovery error against the estimation budget."""
    ns = [r[0] for r in rows]
    eps = [r[1] for r in rows]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.loglog(ns, eps, marker="o", color="#4878a8", label="median error")
    ax.set_xlabel("n")
    ax.set_ylabel("median recovery error")
    ax.set_title(f"slope of ln n vs ln error: {slope:.2f}")
    ax.legend(frameon=False)
    fig.tight_layout()
    return _finish(fig, path)
