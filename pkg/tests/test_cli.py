from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest

from biharmonic_lab.cli import EXIT_ASSERT, EXIT_NUMERIC, EXIT_OK, EXIT_SCHEMA, main, replay
from biharmonic_lab.experiments import SchemaError, validate
from biharmonic_lab.io import first_difference, read_csv, read_field_values, render, sub_seed, write_csv, write_field
from biharmonic_lab.calculus import MapField
from biharmonic_lab.mesh import build_mesh
from biharmonic_lab.space_forms import sphere

FLOW = {
    "experiment": "flow",
    "seed": 3,
    "params": {"mesh": {"dim": 2, "periods": [6.283185307179586, 6.283185307179586], "resolution": [16, 16]}},
}
UNDERFLOW = {
    "experiment": "flow",
    "params": {
        "mesh": {"dim": 2, "periods": [2.0, 2.0], "resolution": [16, 16]},
        "target": {"kappa": 0, "n": 2},
        "initial": {"type": "pinned"},
        "flow": {"kind": "biharmonic", "dt": 1.0, "max_steps": 5000, "tol": 1e-30, "preconditioner": "sobolev",
                 "method": "cg"},
    },
}


def write(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_render_and_csv_roundtrip(tmp_path):
    assert render(0.1) == "0.10000000000000001"
    assert render(True) == "true" and render(np.int64(3)) == "3" and render(None) == ""
    assert render(float("inf")) == "inf" and render([1, 2.5]) == "1 2.5"
    x = np.random.default_rng(0).standard_normal(5)
    write_csv(tmp_path / "a.csv", ("x",), [(v,) for v in x])
    header, rows = read_csv(tmp_path / "a.csv")
    assert header == ["x"] and [float(r[0]) for r in rows] == x.tolist()
    with pytest.raises(ValueError):
        write_csv(tmp_path / "b.csv", ("x", "y"), [(1,)])


def test_field_roundtrip_is_exact(tmp_path):
    mesh = build_mesh(2, [1.0, 1.0], [4, 5])
    rng = np.random.default_rng(1)
    phi = MapField(mesh, sphere(2), sphere(2).project_point(rng.standard_normal((4, 5, 3))))
    write_field(tmp_path / "f.csv", phi)
    assert np.array_equal(read_field_values(tmp_path / "f.csv", mesh, 3), phi.values)


def test_first_difference(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    a.write_text("h\n1\n2\n")
    b.write_text("h\n1\n3\n")
    c.write_text("h\n1\n2")
    assert first_difference(a, a) is None
    assert first_difference(a, b).startswith("line 3:")
    assert "line 3" not in first_difference(a, c)
    assert "differ in length" in first_difference(a, c)
    assert first_difference(b, c).startswith("line 3:")


def test_sub_seed_is_stable():
    assert sub_seed(0, "a") == sub_seed(0, "a")
    assert sub_seed(0, "a") != sub_seed(0, "b") and sub_seed(0, "a") != sub_seed(1, "a")


def test_validate_fills_defaults_and_rejects_bad_configs():
    cfg = validate({"experiment": "moser"})
    assert cfg["params"]["m"] == 4 and cfg["seed"] == 0
    flow = validate({"experiment": "flow", "params": {"flow": {"tol": 1e-3}}})["params"]["flow"]
    assert flow["tol"] == 1e-3 and flow["dt"] == 1.9 and flow["kind"] == "harmonic"
    for bad in (
        {"experiment": "nope"},
        {"experiment": "moser", "params": {"m": 2}},
        {"experiment": "moser", "params": {"bogus": 1}},
        {"experiment": "moser", "params": {"resolutions": [8, 12]}},
        {"experiment": "check", "params": {"kappas": [1]}},
        {"experiment": "flow", "params": {"initial": {"type": "spiral"}}},
        {"experiment": "flow", "extra": 1},
        {"experiment": "flow", "assert": "monotone"},
    ):
        with pytest.raises(SchemaError):
            validate(bad)


def test_run_and_replay(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", write(tmp_path, FLOW), "--output-dir", str(out)]) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 3 and manifest["status"] == 0
    assert {o["file"] for o in manifest["outputs"]} == {"field.csv", "flow.json", "trace.csv"}
    assert set(manifest["versions"]) >= {"numpy", "scipy", "biharmonic_lab"}
    assert (out / "summary.txt").exists()
    assert replay(out / "manifest.json") == (EXIT_OK, "2 CSV files byte-identical")
    assert main(["replay", str(out / "manifest.json")]) == EXIT_OK
    assert [p.name for p in out.iterdir() if p.name.startswith("replay-")] == []


def test_replay_reports_first_difference(tmp_path):
    out = tmp_path / "run"
    assert main(["run", write(tmp_path, FLOW), "--output-dir", str(out)]) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    manifest["config"]["seed"] = 5
    (out / "manifest.json").write_text(json.dumps(manifest))
    status, message = replay(out / "manifest.json")
    assert status == EXIT_ASSERT
    assert message.startswith("field.csv: line ") or message.startswith("trace.csv: line ")


def test_seed_override(tmp_path):
    out = tmp_path / "run"
    assert main(["run", write(tmp_path, FLOW), "--output-dir", str(out), "--seed", "11"]) == EXIT_OK
    assert json.loads((out / "manifest.json").read_text())["seed"] == 11


def test_exit_codes(tmp_path, capsys):
    assert main(["validate", write(tmp_path, FLOW)]) == EXIT_OK
    assert main(["validate", write(tmp_path, {"experiment": "moser", "params": {"m": 2}})]) == EXIT_SCHEMA
    assert "m >= 3" in capsys.readouterr().err
    assert main(["validate", str(tmp_path / "missing.json")]) == EXIT_SCHEMA
    (tmp_path / "broken.json").write_text("{")
    assert main(["run", str(tmp_path / "broken.json"), "--output-dir", str(tmp_path / "x")]) == EXIT_SCHEMA
    unknown = {**FLOW, "assert": ["no_such_assertion"]}
    assert main(["run", write(tmp_path, unknown), "--output-dir", str(tmp_path / "u")]) == EXIT_SCHEMA
    assert main(["run", write(tmp_path, UNDERFLOW), "--output-dir", str(tmp_path / "n")]) == EXIT_NUMERIC
    assert json.loads((tmp_path / "n" / "manifest.json").read_text())["status"] == EXIT_NUMERIC
    accepted = {**UNDERFLOW, "params": {**UNDERFLOW["params"], "accept_underflow": True}}
    assert main(["run", write(tmp_path, accepted), "--output-dir", str(tmp_path / "a")]) == EXIT_OK
    assert main(["validate", write(tmp_path, FLOW), "--threads", "0"]) == EXIT_SCHEMA


def test_assertion_failure_exit(tmp_path):
    cfg = {"experiment": "flow", "params": {**FLOW["params"], "flow": {"kind": "harmonic", "dt": 1.0, "max_steps": 1,
                                                                       "tol": 1e-12, "preconditioner": "sobolev"}}}
    assert main(["run", write(tmp_path, cfg), "--output-dir", str(tmp_path / "f")]) == EXIT_ASSERT
    cfg["assert"] = ["monotone"]
    assert main(["run", write(tmp_path, cfg), "--output-dir", str(tmp_path / "g")]) == EXIT_OK


def test_console_entry(tmp_path):
    res = subprocess.run([sys.executable, "-m", "biharmonic_lab.cli", "validate", write(tmp_path, FLOW)],
                         capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip() == "ok: flow"
