import json
import subprocess
import sys
from pathlib import Path

import pytest

from otsl import cli


def _cfg(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def _report(out):
    return json.loads((out / "report.json").read_text())


def test_unknown_field_is_config_error(tmp_path, capsys):
    cfg = _cfg(tmp_path, {"domian": {}})
    assert cli.run(["decompose", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "domian" in capsys.readouterr().err


def test_bad_types_and_missing_files(tmp_path, capsys):
    cfg = _cfg(tmp_path, {"decomposition": {"max_level": "deep"}})
    assert cli.run(["decompose", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "decomposition.max_level" in capsys.readouterr().err
    assert cli.run(["decompose", "--config", str(tmp_path / "nope.json")]) == 2
    assert cli.run(["ot-solve", "--out", str(tmp_path / "o2")]) == 2
    assert cli.run(["sharpness", "--seed", "-1", "--out", str(tmp_path / "o3")]) == 2
    assert cli.run(["no-such-command"]) == 2


def test_decompose_pass_and_no_overwrite(tmp_path):
    out = tmp_path / "dec"
    cfg = _cfg(tmp_path, {"decomposition": {"max_level": 4, "samples": 2000}})
    assert cli.run(["decompose", "--config", cfg, "--out", str(out)]) == 0
    rep = _report(out)
    assert rep["status"] == "pass" and rep["pass"] and rep["error"] is None
    assert rep["checks_statement"] == cli.CHECKS["decompose"]
    assert (out / "cubes.csv").read_text().splitlines()[0].startswith("id,level,k1,k2,side,dist,lo1")
    assert cli.run(["decompose", "--config", cfg, "--out", str(out)]) == 2
    assert cli.run(["decompose", "--config", cfg, "--out", str(out), "--force"]) == 0


def test_isolated_cover_exits_one_with_report(tmp_path):
    cfg = _cfg(tmp_path, {
        "density": {"family": "uniform", "params": {"domain": {"shape": "box", "params": {"lo": [0], "hi": [1]}}}},
        "graph": {"cells": [{"type": "box", "lo": [0], "hi": [0.3]}, {"type": "box", "lo": [0.5], "hi": [1]}]},
    })
    out = tmp_path / "g"
    assert cli.run(["graph-audit", "--config", cfg, "--out", str(out)]) == 1
    rep = _report(out)
    assert rep["status"] == "error" and rep["error"]["type"] == "IsolatedVertex"


def test_graph_audit_cauchy(tmp_path):
    out = tmp_path / "g"
    cfg = _cfg(tmp_path, {"graph": {"dim": 1, "beta": 5, "n": 4}})
    assert cli.run(["graph-audit", "--config", cfg, "--out", str(out)]) == 0
    rep = _report(out)["result"]
    assert rep["checks"]["cheeger_inequality"] and rep["n_vertices"] == 7
    assert (out / "edges.csv").read_text().startswith("i,j,weight")


def test_ot_solve(tmp_path):
    (tmp_path / "a.csv").write_text("x1,mass\n0,0.5\n1,0.5\n")
    (tmp_path / "b.csv").write_text("x1,mass\n2,0.5\n3,0.5\n")
    cfg = _cfg(tmp_path, {"ot": {"source": str(tmp_path / "a.csv"), "target": str(tmp_path / "b.csv")}})
    out = tmp_path / "ot"
    assert cli.run(["ot-solve", "--config", cfg, "--out", str(out)]) == 0
    rep = _report(out)["result"]
    assert rep["primal_cost"] == pytest.approx(4.0)
    assert (out / "plan.csv").read_text().splitlines()[0] == "i,j,mass"


def test_sharpness_and_counterexample_exit_codes(tmp_path):
    cfg = _cfg(tmp_path, {"experiment": {"kind": "cauchy", "radii": [4, 8, 16, 32], "check_grid": 256,
                                         "check_half_width": 64}})
    assert cli.run(["sharpness", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "sharpness.csv").exists()
    # the height schedule does not make every ratio decrease; the audit reports a failure
    assert cli.run(["counterexample", "--n-max", "3", "--out", str(tmp_path / "c")]) == 1
    rep = _report(tmp_path / "c")
    assert rep["status"] == "fail" and rep["result"]["checks"]["mass_identity"]


def test_glue_audit_deterministic(tmp_path):
    cfg = _cfg(tmp_path, {"experiment": {"mode": "boman", "trials": 5, "grid": 32},
                          "decomposition": {"max_level": 5}, "seed": 11})
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.run(["glue-audit", "--config", cfg, "--out", str(a)]) == 0
    assert cli.run(["glue-audit", "--config", cfg, "--out", str(b)]) == 0
    assert (a / "trials.csv").read_bytes() == (b / "trials.csv").read_bytes()
    ra, rb = _report(a), _report(b)
    ra.pop("wall_clock_s")
    rb.pop("wall_clock_s")
    assert ra == rb and ra["inputs"]["seed"] == 11


def test_stability_exponent_threads_agree(tmp_path):
    cfg = _cfg(tmp_path, {"experiment": {"scales": [0.1, 0.05, 0.02], "trials": 2, "k": 5, "grid": 64}})
    a, b = tmp_path / "a", tmp_path / "b"
    cli.run(["stability-exponent", "--config", cfg, "--out", str(a), "--threads", "1"])
    cli.run(["stability-exponent", "--config", cfg, "--out", str(b), "--threads", "2"])
    assert (a / "pairs.csv").read_bytes() == (b / "pairs.csv").read_bytes()
    assert (a / "pairs.csv").read_text().splitlines()[0] == ",".join(cli.sl.PAIR_COLUMNS)


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "otsl", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("otsl ")
    r = subprocess.run([sys.executable, "-m", "otsl", "decompose", "--config", str(tmp_path / "x.json")],
                       capture_output=True, text=True, cwd=tmp_path)
    assert r.returncode == 2 and "does not exist" in r.stderr


SCHEMA = Path(__file__).resolve().parents[1] / "docs" / "config.schema.json"


def test_config_schema_matches_cli():
    jsonschema = pytest.importorskip("jsonschema")
    schema = json.loads(SCHEMA.read_text())
    jsonschema.Draft202012Validator.check_schema(schema)
    assert set(schema["properties"]) == cli.TOP_KEYS
    v = jsonschema.Draft202012Validator(schema)
    good = [
        {"domain": {"shape": "lshape"}, "decomposition": {"max_level": 6}, "seed": 3},
        {"density": {"family": "uniform", "params": {"domain": {"shape": "box", "params": {"lo": [0], "hi": [1]}}}},
         "graph": {"cells": [{"type": "box", "lo": [0], "hi": [0.6]}, {"type": "sector", "J": 1, "sigma": [1]}]}},
        {"experiment": {"kind": "cauchy", "radii": [2, 4], "check_grid": None}},
        {"experiment": {"family": {"family": "uniform-box", "dim": 1}, "scales": [0.1, 0.05, 0.01]}},
    ]
    for doc in good:
        v.validate(doc)
    assert not v.is_valid({"domian": {}})
    assert not v.is_valid({"graph": {"cells": [{"type": "sector", "J": 1}]}})
