"""Command-line front door for planning, simulation, and comparison runs.

Every subcommand writes machine-readable artifacts plus a run manifest into
``--out``; ``--figures`` additionally renders matplotlib summaries of the
same tables.  Exit codes: 0 on success, 2 on a schema violation (single-line
diagnostic on stderr), 1 on a numerical failure (named module error).

State descriptors accepted everywhere a state is needed:

* ``tracial`` - maximally mixed state (dimension from ``--d``),
* ``bloch:x,y,z`` - qubit from a Bloch vector inside the ball,
* ``diag:p1,...,pd`` - diagonal state from a probability vector,
* ``file:<path>`` - JSON file holding a ``{dim, re, im}`` matrix payload.

The environment variable ``TOMOPLAN_SEED`` overrides the default base seed;
an explicit ``--seed`` flag beats both.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import report
from .errors import SchemaError, TomoplanError
from .highdim import (
    matrix_unit_best_split,
    matrix_unit_strategy,
    mub_pair_config,
    mub_pair_strategy,
    round_robin,
)
from .linalg import (
    DensityMatrix,
    bloch_state,
    bloch_vector,
    diagonal_state,
    matrix_from_json,
    tracial_state,
)
from .qubit import DISTANCE, VOLUME, plan_qubit
from .simulate import (
    aggregate,
    dimension_escalation,
    escalate_and_estimate,
    integer_config,
    loglog_slope,
    round_counts,
    run_adaptive_qubit,
    run_ensemble,
    run_fixed,
)


class _Parser(argparse.ArgumentParser):
    """argparse front end that reports violations as SchemaError."""

    def error(self, message):
        raise SchemaError(message)


def _floats(text: str, count: int | None, what: str) -> list:
    try:
        vals = [float(x) for x in str(text).split(",") if x.strip() != ""]
    except ValueError as exc:
        raise SchemaError(f"{what} must be comma-separated numbers, got {text!r}") from exc
    if count is not None and len(vals) != count:
        raise SchemaError(f"{what} needs {count} entries, got {len(vals)}")
    if not vals:
        raise SchemaError(f"{what} must not be empty")
    return vals


def _ints(text: str, what: str) -> list:
    vals = _floats(text, None, what)
    out = []
    for v in vals:
        if v != int(v):
            raise SchemaError(f"{what} must be integers, got {text!r}")
        out.append(int(v))
    return out


def default_seed() -> int:
    raw = os.environ.get("TOMOPLAN_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError as exc:
        raise SchemaError(f"TOMOPLAN_SEED must be an integer, got {raw!r}") from exc


def parse_state(descriptor: str, d: int | None = None) -> DensityMatrix:
    """Build the density matrix named by a CLI state descriptor."""
    try:
        if descriptor == "tracial":
            if d is None:
                raise SchemaError("state 'tracial' needs an explicit --d")
            tau = tracial_state(d)
        elif descriptor.startswith("bloch:"):
            tau = bloch_state(_floats(descriptor[6:], 3, "bloch vector"))
        elif descriptor.startswith("diag:"):
            tau = diagonal_state(_floats(descriptor[5:], None, "diag probabilities"))
        elif descriptor.startswith("file:"):
            path = Path(descriptor[5:])
            if not path.is_file():
                raise SchemaError(f"state file {path} not found")
            try:
                payload = json.loads(path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise SchemaError(f"state file {path} is not valid JSON: {exc}") from exc
            tau = DensityMatrix(matrix_from_json(payload))
        else:
            raise SchemaError(f"unknown state descriptor {descriptor!r}")
    except SchemaError:
        raise
    except TomoplanError as exc:
        # descriptor problems are CLI schema violations, not run-time failures
        raise SchemaError(f"invalid state descriptor {descriptor!r}: {exc}") from exc
    if d is not None and tau.dim != d:
        raise SchemaError(f"state dimension {tau.dim} does not match --d {d}")
    return tau


def _metric_value(metrics, mode: str) -> float:
    return metrics.det_M if mode == VOLUME else metrics.tr_M_inv


def _maybe_figure(enabled: bool, render, out_dir: Path, name: str, figures: list) -> None:
    if not enabled:
        return
    render(out_dir / name)
    figures.append(name)


# ---------------------------------------------------------------------------
# Subcommands

def cmd_plan_qubit(args) -> int:
    from . import plots

    u = _floats(args.u, 3, "--u")
    if args.n <= 0:
        raise SchemaError(f"--n must be positive, got {args.n}")
    plan = plan_qubit(u, float(args.n), args.mode)
    counts = [int(c) for c in round_counts(plan.weights, args.n)]
    payload = {
        "mode": plan.mode,
        "u": [float(x) for x in u],
        "n": int(args.n),
        "axes": [[float(x) for x in row] for row in plan.axes],
        "weights": [float(w) for w in plan.weights],
        "counts": counts,
        "value": float(plan.value),
        "eigenvalues": [float(x) for x in plan.eigenvalues],
    }
    out = Path(args.out)
    artifacts = [report.write_json(out / "plan.json", payload).name]
    if args.format == "csv":
        rows = [
            list(axis) + [w, c]
            for axis, w, c in zip(payload["axes"], payload["weights"], counts)
        ]
        report.write_csv(
            out / "plan.csv", ["axis_x", "axis_y", "axis_z", "weight", "count"], rows
        )
        artifacts.append("plan.csv")
    figures: list = []
    _maybe_figure(
        args.figures,
        lambda p: plots.plan_figure(payload, p),
        out,
        "figures/plan.png",
        figures,
    )
    params = {"u": payload["u"], "n": payload["n"], "mode": plan.mode, "format": args.format}
    report.write_manifest(out, "plan-qubit", params, [], artifacts, figures)
    print(f"counts={counts} value={plan.value:.6g}")
    return 0


def cmd_partition(args) -> int:
    schedule = round_robin(args.d)
    pairs = args.d * (args.d - 1) // 2
    payload = dict(schedule.to_json())
    payload["pairs"] = pairs
    payload["covering"] = True  # revalidated by PairSchedule construction
    out = Path(args.out)
    artifacts = [report.write_json(out / "schedule.json", payload).name]
    if args.format == "csv":
        rows = [
            [k + 1, i, j]
            for k, rnd in enumerate(schedule.rounds)
            for i, j in rnd
        ]
        report.write_csv(out / "schedule.csv", ["round", "i", "j"], rows)
        artifacts.append("schedule.csv")
    params = {"d": int(args.d), "format": args.format}
    report.write_manifest(out, "partition", params, [], artifacts, [])
    print(f"rounds={len(schedule.rounds)} pairs={pairs} covering=true")
    return 0


def cmd_compare(args) -> int:
    from . import plots

    dims = _ints(args.d, "--d")
    budgets = _ints(args.n, "--n")
    if any(d < 2 for d in dims):
        raise SchemaError(f"--d entries must be at least 2, got {args.d!r}")
    if any(n <= 0 for n in budgets):
        raise SchemaError(f"--n entries must be positive, got {args.n!r}")
    rows = []
    for d in dims:
        tau = parse_state(args.state, d)
        for n in budgets:
            first = mub_pair_strategy(tau, float(n), args.mode)
            rows.append(
                (d, args.state, first.label, args.mode, n, _metric_value(first, args.mode))
            )
            if d % 2 == 0:
                n1, n_round = matrix_unit_best_split(d, float(n))
                second = matrix_unit_strategy(
                    tau, n1, [n_round] * (d - 1), mode=args.mode
                )
                rows.append(
                    (d, args.state, second.label, args.mode, n, _metric_value(second, args.mode))
                )
    out = Path(args.out)
    header = ["d", "state-descriptor", "strategy", "mode", "n", "value"]
    artifacts = [report.write_csv(out / "compare.csv", header, rows).name]
    if args.format == "json":
        payload = [dict(zip(header, row)) for row in rows]
        report.write_json(out / "compare.json", payload)
        artifacts.append("compare.json")
    figures: list = []
    _maybe_figure(
        args.figures,
        lambda p: plots.compare_figure(rows, p),
        out,
        "figures/compare.png",
        figures,
    )
    params = {
        "d": dims,
        "state": args.state,
        "n": budgets,
        "mode": args.mode,
        "format": args.format,
    }
    report.write_manifest(out, "compare", params, [], artifacts, figures)
    for row in rows:
        print(f"d={row[0]} strategy={row[2]} n={row[4]} value={row[5]:.6g}")
    return 0


def cmd_simulate(args) -> int:
    from . import plots

    tau = parse_state(args.state, args.d)
    d = tau.dim
    if args.n <= 0:
        raise SchemaError(f"--n must be positive, got {args.n}")
    if args.trials <= 0:
        raise SchemaError(f"--trials must be positive, got {args.trials}")
    loop = args.loop or ("adaptive" if d == 2 else "fixed")
    if loop == "adaptive" and d != 2:
        raise SchemaError("adaptive loop is defined for qubits only (d = 2)")
    base = args.seed if args.seed is not None else default_seed()
    seeds = [base + k for k in range(args.trials)]
    threads = max(1, min(args.threads, args.trials))
    if loop == "adaptive":
        u_true = bloch_vector(tau)
        trials = run_ensemble(
            lambda s: run_adaptive_qubit(u_true, args.n, args.batch, args.mode, seed=s),
            seeds,
            threads,
        )
    else:
        if d == 2:
            strategy = plan_qubit(bloch_vector(tau), float(args.n), args.mode).as_strategy()
        else:
            strategy = mub_pair_config(tau, float(args.n), args.mode)
        cfg = integer_config(strategy, args.n)
        trials = run_ensemble(lambda s: run_fixed(tau, cfg, seed=s), seeds, threads)
    use_bloch = d == 2
    stats = aggregate(trials, bloch=use_bloch, mode=args.mode)
    errors = [
        t.bloch_squared_error if use_bloch else t.squared_error for t in trials
    ]
    summary = dict(stats.to_json())
    summary.update(
        {
            "loop": loop,
            "d": d,
            "state": args.state,
            "error_kind": "bloch" if use_bloch else "hilbert-schmidt",
            "scaled_mean": float(stats.mean_sq_error * args.n),
            "batch": int(args.batch) if loop == "adaptive" else None,
        }
    )
    out = Path(args.out)
    artifacts = [
        report.write_jsonl(out / "trials.jsonl", (t.to_json() for t in trials)).name,
        report.write_json(out / "summary.json", summary).name,
    ]
    if args.format == "csv":
        header = [
            "loop", "d", "state", "mode", "n", "trials",
            "mean_sq_error", "stderr", "scaled_mean",
        ]
        row = [
            loop, d, args.state, args.mode, args.n, stats.trials,
            stats.mean_sq_error, stats.stderr, summary["scaled_mean"],
        ]
        report.write_csv(out / "summary.csv", header, [row])
        artifacts.append("summary.csv")
    figures: list = []
    _maybe_figure(
        args.figures,
        lambda p: plots.errors_figure(errors, args.n, p),
        out,
        "figures/errors.png",
        figures,
    )
    params = {
        "state": args.state,
        "d": d,
        "n": int(args.n),
        "mode": args.mode,
        "loop": loop,
        "trials": int(args.trials),
        "batch": int(args.batch),
        "threads": int(args.threads),
        "format": args.format,
    }
    report.write_manifest(out, "simulate", params, seeds, artifacts, figures)
    print(
        f"loop={loop} trials={stats.trials} mean_sq_error={stats.mean_sq_error:.6g} "
        f"stderr={stats.stderr:.3g} scaled={summary['scaled_mean']:.6g}"
    )
    return 0


def _escalation_target(args) -> tuple:
    """Resolve the hidden state for the escalate command."""
    chosen = [
        name
        for name, val in [
            ("--basis-position", args.basis_position),
            ("--state", args.state),
        ]
        if val is not None
    ]
    if len(chosen) > 1:
        raise SchemaError(f"escalate target flags are mutually exclusive: {chosen}")
    dim = args.dim
    if args.basis_position is not None:
        pos = args.basis_position
        if not 1 <= pos <= dim:
            raise SchemaError(f"--basis-position must be in 1..{dim}, got {pos}")
        m = np.zeros((dim, dim), dtype=complex)
        m[pos - 1, pos - 1] = 1.0
        return DensityMatrix(m), f"basis:{pos}", True
    if args.state is not None:
        tau = parse_state(args.state, None)
        if tau.dim != dim:
            raise SchemaError(f"state dimension {tau.dim} does not match --dim {dim}")
        return tau, args.state, False
    k = args.support
    if not 2 <= k <= dim:
        raise SchemaError(f"--support must be in 2..{dim}, got {k}")
    g = np.random.default_rng(args.state_seed)
    a = g.normal(size=(k, k)) + 1j * g.normal(size=(k, k))
    block = a @ a.conj().T
    block /= np.trace(block).real
    m = np.zeros((dim, dim), dtype=complex)
    m[:k, :k] = block
    return DensityMatrix(m), f"support:{k}", False


def cmd_escalate(args) -> int:
    from . import plots

    if args.dim < 2 or args.dim > 64:
        raise SchemaError(f"--dim must be in 2..64, got {args.dim}")
    if args.trials <= 0:
        raise SchemaError(f"--trials must be positive, got {args.trials}")
    tau, target, basis_demo = _escalation_target(args)
    base = args.seed if args.seed is not None else default_seed()
    seeds = [base + k for k in range(args.trials)]
    out = Path(args.out)
    payload = {
        "dim": int(args.dim),
        "eps0": float(args.eps0),
        "target": target,
        "trials": len(seeds),
        "mode": args.mode,
        "basis_demo": basis_demo,
    }
    artifacts: list = []
    figures: list = []
    if basis_demo:
        runs = [dimension_escalation(tau, args.eps0, s) for s in seeds]
        payload["runs"] = [r.to_json() for r in runs]
        payload["median_d_eff"] = float(np.median([r.d_eff for r in runs]))
        payload["min_n0"] = int(min(r.n0 for r in runs))
        rows = [(r.seed, r.d_eff, r.n0, r.n_used) for r in runs]
        artifacts.append(
            report.write_csv(
                out / "escalation.csv", ["seed", "d_eff", "n0", "n_used"], rows
            ).name
        )
        print(
            f"target={target} min_n0={payload['min_n0']} "
            f"median_d_eff={payload['median_d_eff']:.3g}"
        )
    else:
        budgets = _ints(args.budgets, "--budgets")
        if any(b <= 0 for b in budgets):
            raise SchemaError(f"--budgets must be positive, got {args.budgets!r}")
        detail = []
        rows = []
        for n_est in budgets:
            errs = []
            for s in seeds:
                esc, _, eps_full, _ = escalate_and_estimate(
                    tau, args.eps0, s, n_est, args.mode
                )
                errs.append(eps_full)
                detail.append(
                    {
                        "budget": int(n_est),
                        "seed": int(s),
                        "d_eff": esc.d_eff,
                        "n0": esc.n0,
                        "n_used": esc.n_used,
                        "grows_kept": esc.grows_kept,
                        "grows_undone": esc.grows_undone,
                        "eps_full": float(eps_full),
                    }
                )
            rows.append((int(n_est), float(np.median(errs))))
        slope = loglog_slope(rows)
        payload.update(
            {
                "budgets": [int(b) for b in budgets],
                "rows": [[n, e] for n, e in rows],
                "slope": float(slope),
                "runs": detail,
                "median_d_eff": float(np.median([r["d_eff"] for r in detail])),
            }
        )
        artifacts.append(
            report.write_csv(out / "escalation.csv", ["n", "median_eps"], rows).name
        )
        artifacts.append(
            report.write_csv(
                out / "runs.csv",
                ["budget", "seed", "d_eff", "n0", "n_used",
                 "grows_kept", "grows_undone", "eps_full"],
                [
                    [r["budget"], r["seed"], r["d_eff"], r["n0"], r["n_used"],
                     r["grows_kept"], r["grows_undone"], r["eps_full"]]
                    for r in detail
                ],
            ).name
        )
        _maybe_figure(
            args.figures,
            lambda p: plots.escalation_figure(rows, slope, p),
            out,
            "figures/escalation.png",
            figures,
        )
        print(
            f"target={target} slope={slope:.3f} "
            f"median_d_eff={payload['median_d_eff']:.3g}"
        )
    artifacts.insert(0, report.write_json(out / "escalate.json", payload).name)
    params = {
        "dim": int(args.dim),
        "eps0": float(args.eps0),
        "target": target,
        "trials": int(args.trials),
        "mode": args.mode,
        "budgets": None if basis_demo else _ints(args.budgets, "--budgets"),
        "state_seed": int(args.state_seed),
    }
    report.write_manifest(out, "escalate", params, seeds, artifacts, figures)
    return 0


# ---------------------------------------------------------------------------
# Parser assembly

def build_parser() -> _Parser:
    parser = _Parser(prog="tomoplan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, default_out):
        p.add_argument("--out", default=default_out, help="output directory")
        p.add_argument("--figures", action="store_true", help="render figures too")

    p = sub.add_parser("plan-qubit", help="closed-form optimal qubit plan")
    p.add_argument("--u", required=True, help="Bloch vector x,y,z")
    p.add_argument("--n", type=int, required=True, help="total budget")
    p.add_argument("--mode", choices=(VOLUME, DISTANCE), default=DISTANCE)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    common(p, "runs/plan-qubit")
    p.set_defaults(func=cmd_plan_qubit)

    p = sub.add_parser("simulate", help="adaptive or fixed measurement ensembles")
    p.add_argument("--state", required=True, help="state descriptor")
    p.add_argument("--d", type=int, default=None, help="dimension (for tracial)")
    p.add_argument("--n", type=int, required=True, help="measurements per trial")
    p.add_argument("--mode", choices=(VOLUME, DISTANCE), default=DISTANCE)
    p.add_argument("--loop", choices=("adaptive", "fixed"), default=None)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--batch", type=int, default=500, help="adaptive batch size")
    p.add_argument("--seed", type=int, default=None, help="base seed")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    common(p, "runs/simulate")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="strategy comparison sweep")
    p.add_argument("--d", required=True, help="dimension(s), comma separated")
    p.add_argument("--state", default="tracial", help="state descriptor")
    p.add_argument("--n", required=True, help="budget(s), comma separated")
    p.add_argument("--mode", choices=(VOLUME, DISTANCE), default=DISTANCE)
    p.add_argument("--format", choices=("json", "csv"), default="csv")
    common(p, "runs/compare")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("partition", help="round-robin pair schedule")
    p.add_argument("--d", type=int, required=True, help="even dimension")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    common(p, "runs/partition")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("escalate", help="dimension escalation demo")
    p.add_argument("--dim", type=int, default=50, help="ambient dimension")
    p.add_argument("--eps0", type=float, default=0.1, help="halt threshold")
    p.add_argument("--basis-position", type=int, default=None,
                   help="hidden basis state at this 1-based position")
    p.add_argument("--support", type=int, default=3,
                   help="random hidden state on the first k dimensions")
    p.add_argument("--state", default=None, help="explicit state descriptor")
    p.add_argument("--state-seed", type=int, default=7,
                   help="seed for the random hidden state")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=None, help="base seed")
    p.add_argument("--budgets", default="400,1600,6400",
                   help="estimation budgets, comma separated")
    p.add_argument("--mode", choices=(VOLUME, DISTANCE), default=DISTANCE)
    common(p, "runs/escalate")
    p.set_defaults(func=cmd_escalate)

    return parser


def dispatch(argv) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


def main(argv=None) -> int:
    try:
        return dispatch(sys.argv[1:] if argv is None else list(argv))
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    except TomoplanError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
