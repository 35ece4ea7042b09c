"""Deterministic artifact emission: JSON, JSON lines, CSV, run manifests.

Every writer here is byte-reproducible for equal payloads: JSON uses sorted
keys and fixed separators with no timestamps, CSV uses a comma field
separator and ``.`` decimal point regardless of locale, and lines end with
``\\n`` on every platform.  The determinism acceptance check compares these
bytes across repeated runs.

A run manifest records the command, its parameters, the seed list, a sha256
hash of that configuration, the current ``git describe`` string, and a
sha256 per emitted table artifact.  Figure files are listed by name only;
their bytes depend on the matplotlib build and are not part of the
determinism contract.
"""

from __future__ import annotations

import csv
import hashlib
import json
import subprocess
from importlib import resources
from pathlib import Path

from .errors import SchemaError

MANIFEST_NAME = "manifest.json"


def canonical_json(payload) -> str:
    """Sorted-key, fixed-separator JSON with NaN/Inf rejected."""
    try:
        return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False)
    except ValueError as exc:
        raise SchemaError(f"payload is not canonical-JSON serializable: {exc}") from exc


def config_hash(payload) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(path, payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(payload) + "\n", encoding="utf-8")
    return path


def write_jsonl(path, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(canonical_json(row) + "\n")
    return path


def format_cell(value) -> str:
    """One CSV cell: shortest round-trip float text, '.' decimal point."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=",", lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([format_cell(x) for x in row])
    return path


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True,
            text=True,
            timeout=10,
            check=False,
        )
    except OSError:
        return "unknown"
    text = out.stdout.strip()
    return text if out.returncode == 0 and text else "unknown"


def write_manifest(out_dir, command: str, parameters: dict, seeds, artifacts, figures=()) -> Path:
    """Write ``manifest.json`` describing one finished CLI run."""
    out_dir = Path(out_dir)
    seeds = [int(s) for s in seeds]
    manifest = {
        "command": command,
        "parameters": parameters,
        "seeds": seeds,
        "config_hash": config_hash(
            {"command": command, "parameters": parameters, "seeds": seeds}
        ),
        "git_describe": git_describe(),
        "artifacts": {str(name): file_sha256(out_dir / name) for name in artifacts},
        "figures": [str(name) for name in figures],
    }
    return write_json(out_dir / MANIFEST_NAME, manifest)


def load_schema(name: str) -> dict:
    """Load a JSON schema shipped with the package by stem name."""
    ref = resources.files("tomoplan").joinpath("schemas", f"{name}.json")
    try:
        text = ref.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise SchemaError(f"no shipped schema named {name!r}") from exc
    return json.loads(text)
