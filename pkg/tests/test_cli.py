"""CLI dispatch, artifacts, shipped schemas, and exit codes."""

import json
from pathlib import Path

import jsonschema
import pytest

from tomoplan.cli import main, parse_state
from tomoplan.errors import SchemaError
from tomoplan.linalg import matrix_to_json
from tomoplan.report import load_schema


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def read_csv(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return lines[0].split(","), [line.split(",") for line in lines[1:]]


def artifact_bytes(root):
    out = {}
    for path in sorted(Path(root).rglob("*")):
        if path.suffix in (".json", ".csv", ".jsonl"):
            out[str(path.relative_to(root))] = path.read_bytes()
    return out


# ---------------------------------------------------------------------------
# plan-qubit

def test_plan_qubit_example(tmp_path, capsys):
    rc = main(
        ["plan-qubit", "--u", "0,0,0.6", "--n", "280", "--mode", "distance",
         "--out", str(tmp_path)]
    )
    assert rc == 0
    plan = read_json(tmp_path / "plan.json")
    jsonschema.validate(plan, load_schema("plan_qubit"))
    assert plan["counts"] == [100, 100, 80]
    assert plan["value"] == pytest.approx(0.028, rel=1e-9)
    assert plan["value"] == pytest.approx((2.0 + 0.8) ** 2 / 280.0, rel=1e-12)
    manifest = read_json(tmp_path / "manifest.json")
    jsonschema.validate(manifest, load_schema("manifest"))
    assert "counts=[100, 100, 80]" in capsys.readouterr().out


def test_plan_qubit_volume_counts(tmp_path):
    rc = main(
        ["plan-qubit", "--u", "0.3,0.2,0.5", "--n", "300", "--mode", "volume",
         "--format", "csv", "--out", str(tmp_path)]
    )
    assert rc == 0
    plan = read_json(tmp_path / "plan.json")
    assert sum(plan["counts"]) == 300
    usq = 0.3**2 + 0.2**2 + 0.5**2
    assert plan["value"] == pytest.approx(100.0**3 / (1.0 - usq), rel=1e-12)
    header, rows = read_csv(tmp_path / "plan.csv")
    assert header == ["axis_x", "axis_y", "axis_z", "weight", "count"]
    assert len(rows) == 3
    manifest = read_json(tmp_path / "manifest.json")
    assert set(manifest["artifacts"]) == {"plan.json", "plan.csv"}


# ---------------------------------------------------------------------------
# partition

def test_partition_example(tmp_path, capsys):
    rc = main(["partition", "--d", "6", "--out", str(tmp_path)])
    assert rc == 0
    payload = read_json(tmp_path / "schedule.json")
    jsonschema.validate(payload, load_schema("partition"))
    assert len(payload["rounds"]) == 5
    assert payload["pairs"] == 15
    assert payload["covering"] is True
    assert "rounds=5 pairs=15 covering=true" in capsys.readouterr().out


def test_partition_odd_dimension_is_a_module_error(capsys):
    rc = main(["partition", "--d", "5", "--out", "/tmp/should-not-exist-tomoplan"])
    assert rc == 1
    err = capsys.readouterr().err
    assert "OddDimensionError" in err and len(err.strip().splitlines()) == 1


# ---------------------------------------------------------------------------
# compare

def test_compare_example_values(tmp_path):
    rc = main(
        ["compare", "--d", "4", "--state", "tracial", "--n", "1000",
         "--mode", "distance", "--out", str(tmp_path)]
    )
    assert rc == 0
    header, rows = read_csv(tmp_path / "compare.csv")
    assert header == ["d", "state-descriptor", "strategy", "mode", "n", "value"]
    by_label = {row[2]: float(row[5]) for row in rows}
    assert by_label["mub-pair"] == pytest.approx(0.0375, rel=1e-9)
    assert by_label["matrix-unit"] == pytest.approx(0.0405, rel=1e-12)
    assert all(row[:2] == ["4", "tracial"] for row in rows)


def test_compare_sweep_rows_and_json(tmp_path):
    rc = main(
        ["compare", "--d", "3,4", "--state", "tracial", "--n", "500,1000",
         "--mode", "volume", "--format", "json", "--out", str(tmp_path)]
    )
    assert rc == 0
    payload = read_json(tmp_path / "compare.json")
    jsonschema.validate(payload, load_schema("compare"))
    # odd d contributes only the unbiased-pair strategy
    assert len(payload) == 6
    assert {r["strategy"] for r in payload if r["d"] == 3} == {"mub-pair"}
    assert {r["strategy"] for r in payload if r["d"] == 4} == {"mub-pair", "matrix-unit"}
    assert all(r["value"] > 0 for r in payload)


def test_compare_rejects_bad_grid():
    assert main(["compare", "--d", "1", "--n", "100", "--out", "/tmp/x-tomoplan"]) == 2
    assert main(["compare", "--d", "4", "--n", "0", "--out", "/tmp/x-tomoplan"]) == 2


# ---------------------------------------------------------------------------
# simulate

def test_simulate_fixed_artifacts_validate(tmp_path):
    rc = main(
        ["simulate", "--state", "diag:0.5,0.3,0.2", "--n", "800", "--trials", "4",
         "--seed", "5", "--format", "csv", "--out", str(tmp_path)]
    )
    assert rc == 0
    summary = read_json(tmp_path / "summary.json")
    jsonschema.validate(summary, load_schema("summary"))
    assert summary["loop"] == "fixed"
    assert summary["error_kind"] == "hilbert-schmidt"
    trial_schema = load_schema("trial")
    lines = (tmp_path / "trials.jsonl").read_text().splitlines()
    assert len(lines) == 4
    for line in lines:
        jsonschema.validate(json.loads(line), trial_schema)
    manifest = read_json(tmp_path / "manifest.json")
    assert manifest["seeds"] == [5, 6, 7, 8]
    header, rows = read_csv(tmp_path / "summary.csv")
    assert header[:4] == ["loop", "d", "state", "mode"]
    assert len(rows) == 1


def test_simulate_adaptive_defaults_on_qubit(tmp_path):
    rc = main(
        ["simulate", "--state", "bloch:0,0,0.6", "--n", "600", "--batch", "60",
         "--trials", "3", "--out", str(tmp_path)]
    )
    assert rc == 0
    summary = read_json(tmp_path / "summary.json")
    jsonschema.validate(summary, load_schema("summary"))
    assert summary["loop"] == "adaptive"
    assert summary["error_kind"] == "bloch"
    assert summary["batch"] == 60
    assert summary["scaled_mean"] == pytest.approx(summary["mean_sq_error"] * 600)


def test_simulate_identical_argv_byte_identical(tmp_path):
    argv = ["simulate", "--state", "diag:0.6,0.4", "--n", "600", "--batch", "60",
            "--trials", "3", "--seed", "2", "--format", "csv"]
    assert main(argv + ["--out", str(tmp_path / "a")]) == 0
    assert main(argv + ["--out", str(tmp_path / "b")]) == 0
    first = artifact_bytes(tmp_path / "a")
    second = artifact_bytes(tmp_path / "b")
    assert first.keys() == second.keys() and len(first) >= 4
    assert all(first[k] == second[k] for k in first)


def test_simulate_threads_do_not_change_trials(tmp_path):
    argv = ["simulate", "--state", "diag:0.5,0.3,0.2", "--n", "500",
            "--trials", "4", "--seed", "0"]
    assert main(argv + ["--threads", "1", "--out", str(tmp_path / "t1")]) == 0
    assert main(argv + ["--threads", "4", "--out", str(tmp_path / "t4")]) == 0
    assert (tmp_path / "t1/trials.jsonl").read_bytes() == (
        tmp_path / "t4/trials.jsonl"
    ).read_bytes()


def test_simulate_adaptive_rejects_higher_dims(tmp_path):
    rc = main(
        ["simulate", "--state", "diag:0.5,0.3,0.2", "--loop", "adaptive",
         "--n", "600", "--trials", "1", "--out", str(tmp_path)]
    )
    assert rc == 2


def test_env_seed_override(tmp_path, monkeypatch):
    monkeypatch.setenv("TOMOPLAN_SEED", "42")
    argv = ["simulate", "--state", "diag:0.6,0.4", "--n", "600", "--batch", "60",
            "--trials", "2"]
    assert main(argv + ["--out", str(tmp_path / "env")]) == 0
    assert read_json(tmp_path / "env/manifest.json")["seeds"] == [42, 43]
    assert main(argv + ["--seed", "7", "--out", str(tmp_path / "flag")]) == 0
    assert read_json(tmp_path / "flag/manifest.json")["seeds"] == [7, 8]


def test_env_seed_must_be_integer(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("TOMOPLAN_SEED", "abc")
    rc = main(
        ["simulate", "--state", "diag:0.6,0.4", "--n", "600", "--batch", "60",
         "--trials", "1", "--out", str(tmp_path)]
    )
    assert rc == 2
    assert "TOMOPLAN_SEED" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# escalate

def test_escalate_basis_demo(tmp_path):
    rc = main(
        ["escalate", "--dim", "50", "--basis-position", "10", "--trials", "2",
         "--seed", "0", "--out", str(tmp_path)]
    )
    assert rc == 0
    payload = read_json(tmp_path / "escalate.json")
    jsonschema.validate(payload, load_schema("escalate"))
    assert payload["basis_demo"] is True
    assert payload["min_n0"] >= 10
    header, rows = read_csv(tmp_path / "escalation.csv")
    assert header == ["seed", "d_eff", "n0", "n_used"]
    # forced outcomes make the basis demo identical across seeds
    assert rows[0][1:] == rows[1][1:]


def test_escalate_support_slope_artifacts(tmp_path):
    rc = main(
        ["escalate", "--dim", "8", "--support", "2", "--trials", "4",
         "--budgets", "200,800", "--seed", "0", "--out", str(tmp_path)]
    )
    assert rc == 0
    payload = read_json(tmp_path / "escalate.json")
    jsonschema.validate(payload, load_schema("escalate"))
    assert payload["budgets"] == [200, 800]
    assert isinstance(payload["slope"], float)
    header, rows = read_csv(tmp_path / "escalation.csv")
    assert header == ["n", "median_eps"]
    assert [r[0] for r in rows] == ["200", "800"]
    _, detail = read_csv(tmp_path / "runs.csv")
    assert len(detail) == 8


def test_escalate_budget_cap_is_exit_one(tmp_path, capsys):
    rc = main(
        ["escalate", "--dim", "4", "--support", "2", "--eps0", "0.005",
         "--trials", "1", "--budgets", "100", "--out", str(tmp_path)]
    )
    assert rc == 1
    assert "BudgetExceededError" in capsys.readouterr().err


def test_escalate_target_flags_are_exclusive(tmp_path):
    rc = main(
        ["escalate", "--basis-position", "3", "--state", "tracial",
         "--out", str(tmp_path)]
    )
    assert rc == 2


# ---------------------------------------------------------------------------
# figures, descriptors, misc dispatch

def test_figures_rendered_when_requested(tmp_path):
    rc = main(
        ["simulate", "--state", "diag:0.6,0.4", "--n", "600", "--batch", "60",
         "--trials", "2", "--figures", "--out", str(tmp_path)]
    )
    assert rc == 0
    png = tmp_path / "figures/errors.png"
    assert png.is_file() and png.stat().st_size > 0
    assert read_json(tmp_path / "manifest.json")["figures"] == ["figures/errors.png"]


def test_parse_state_descriptors(tmp_path):
    assert parse_state("tracial", 3).dim == 3
    assert parse_state("bloch:0,0,0.5", 2).dim == 2
    assert parse_state("diag:0.5,0.3,0.2").dim == 3
    payload = matrix_to_json(parse_state("diag:0.7,0.3").matrix)
    path = tmp_path / "state.json"
    path.write_text(json.dumps(payload))
    tau = parse_state(f"file:{path}")
    assert tau.dim == 2
    assert tau.matrix[0, 0].real == pytest.approx(0.7)
    with pytest.raises(SchemaError):
        parse_state("tracial")
    with pytest.raises(SchemaError):
        parse_state("diag:0.5,0.3,0.2", 2)
    with pytest.raises(SchemaError):
        parse_state("mystery:1,2")
    with pytest.raises(SchemaError):
        parse_state("file:/no/such/file.json")
    with pytest.raises(SchemaError):
        parse_state("bloch:0,0,2")


def test_schema_violations_exit_two(capsys):
    assert main(["plan-qubit", "--u", "0,0", "--n", "10"]) == 2
    assert main(["plan-qubit", "--u", "0,0,0.5", "--n", "-3"]) == 2
    assert main([]) == 2
    assert main(["simulate", "--state", "bloch:0,0,2", "--n", "100",
                 "--trials", "1"]) == 2
    err_lines = capsys.readouterr().err.strip().splitlines()
    assert all(line.startswith("schema error: ") for line in err_lines)
    assert len(err_lines) == 4
