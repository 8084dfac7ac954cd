"""Command line harness: ``run``, ``replay`` and ``validate`` for experiment configs.

Exit status: 0 all declared assertions pass (or replay matches), 1 assertion
failure or replay mismatch, 2 schema violation, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import platform
import sys
import tempfile
import time
from pathlib import Path

EXIT_OK, EXIT_ASSERT, EXIT_SCHEMA, EXIT_NUMERIC = 0, 1, 2, 3
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _versions() -> dict:
    import numpy
    import scipy

    from . import __version__

    return {"biharmonic_lab": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__,
            "python": platform.python_version(), "platform": platform.platform()}


def _load_config(path):
    from .experiments import SchemaError
    from .io import read_json

    try:
        return read_json(path)
    except FileNotFoundError as err:
        raise SchemaError(f"config file not found: {path}") from err
    except ValueError as err:
        raise SchemaError(f"config is not valid JSON: {err}") from err


def execute(config: dict, out_dir: Path, config_path: str | None = None, threads: int = 1) -> int:
    """Validate, run and persist one experiment; returns the exit status."""
    from .calculus import MapField
    from .experiments import NumericalFailure, PIPELINES, validate
    from .io import sha256, write_csv, write_field, write_json

    cfg = validate(config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    manifest = {
        "config": cfg,
        "config_path": None if config_path is None else str(Path(config_path).resolve()),
        "seed": cfg["seed"],
        "threads": threads,
        "versions": _versions(),
    }
    try:
        outcome = PIPELINES[cfg["experiment"]](cfg["params"], cfg["seed"])
    except NumericalFailure as err:
        manifest.update({"status": EXIT_NUMERIC, "error": str(err), "wall_time": time.perf_counter() - t0,
                         "outputs": []})
        write_json(out_dir / "manifest.json", manifest)
        (out_dir / "summary.txt").write_text(f"numerical failure: {err}\n")
        return EXIT_NUMERIC
    outputs = []
    for name, (header, rows) in sorted(outcome.tables.items()):
        outputs.append(write_csv(out_dir / f"{name}.csv", header, rows))
    for name, doc in sorted(outcome.documents.items()):
        if isinstance(doc, MapField):
            outputs.append(write_field(out_dir / f"{name}.csv", doc))
        else:
            outputs.append(write_json(out_dir / f"{name}.json", doc))
    wanted = cfg["assert"] if cfg["assert"] is not None else sorted(outcome.assertions)
    unknown = [w for w in wanted if w not in outcome.assertions]
    if unknown:
        from .experiments import SchemaError

        raise SchemaError(f"unknown assertion names {unknown}; available: {sorted(outcome.assertions)}")
    status = EXIT_OK if outcome.passed(wanted) else EXIT_ASSERT
    manifest.update({
        "status": status,
        "assertions": outcome.assertions,
        "declared_assertions": wanted,
        "wall_time": time.perf_counter() - t0,
        "outputs": [{"file": p.name, "sha256": sha256(p)} for p in outputs],
    })
    write_json(out_dir / "manifest.json", manifest)
    lines = [f"experiment: {cfg['experiment']}  seed: {cfg['seed']}  status: {status}", *outcome.summary]
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    return status


def replay(manifest_path) -> tuple[int, str]:
    """Re-run the manifest's config and byte-compare every CSV output."""
    from .io import first_difference, read_json

    manifest_path = Path(manifest_path)
    manifest = read_json(manifest_path)
    base = manifest_path.parent
    config = manifest["config"]
    csvs = [o["file"] for o in manifest.get("outputs", []) if o["file"].endswith(".csv")]
    with tempfile.TemporaryDirectory(prefix="replay-", dir=base) as tmp:
        execute(config, Path(tmp), manifest.get("config_path"), manifest.get("threads", 1))
        fresh = read_json(Path(tmp) / "manifest.json")
        fresh_csvs = [o["file"] for o in fresh.get("outputs", []) if o["file"].endswith(".csv")]
        if sorted(fresh_csvs) != sorted(csvs):
            return EXIT_ASSERT, f"output set differs: {sorted(csvs)} vs {sorted(fresh_csvs)}"
        for name in sorted(csvs):
            diff = first_difference(base / name, Path(tmp) / name)
            if diff is not None:
                return EXIT_ASSERT, f"{name}: {diff}"
    return EXIT_OK, f"{len(csvs)} CSV files byte-identical"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="biharmonic-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "run an experiment config"), ("replay", "re-run a manifest and byte-compare CSVs"),
                        ("validate", "check a config against its schema")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("path", help="manifest.json" if name == "replay" else "config.json")
        p.add_argument("--threads", type=int, default=1, help="thread cap for numerical libraries")
        if name == "run":
            p.add_argument("--output-dir", default=None, help="artifact directory (default: runs/<experiment>)")
            p.add_argument("--seed", type=int, default=None, help="override the config seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return EXIT_SCHEMA
    for var in THREAD_VARS:
        os.environ[var] = str(args.threads)
    from .experiments import SchemaError, validate

    try:
        if args.command == "replay":
            status, message = replay(args.path)
            print(message)
            return status
        config = _load_config(args.path)
        if args.command == "validate":
            cfg = validate(config)
            print(f"ok: {cfg['experiment']}")
            return EXIT_OK
        if args.seed is not None:
            config = {**config, "seed": args.seed}
        out_dir = args.output_dir or os.path.join("runs", str(config.get("experiment", "unknown")))
        status = execute(config, Path(out_dir), args.path, args.threads)
        print((Path(out_dir) / "summary.txt").read_text(), end="")
        return status
    except SchemaError as err:
        print(f"schema error: {err}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
