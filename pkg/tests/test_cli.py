import csv
import json

import numpy as np
import pytest

from randcert.bell import CHSH_SCENARIO, Behavior, deterministic_behavior, pr_box
from randcert.cli import EXIT_INFEASIBLE, EXIT_INPUT, EXIT_OK, main, parse_grid, parse_inputs
from randcert.pipeline import CountsRecord


def run(*argv):
    return main([str(a) for a in argv])


def write(path, behavior: Behavior):
    path.write_text(json.dumps(behavior.to_dict()))
    return path


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1], rows[2:]


def test_certify_reference_and_replay(tmp_path):
    out = tmp_path / "r.json"
    assert run("certify", "reference", "--out", out) == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["status"] == "optimal"
    assert {"behavior", "inputs", "fingerprint", "certificate"} <= doc.keys()
    manifest = json.loads((tmp_path / "r.json.manifest.json").read_text())
    assert manifest["level"] == "local-1" and manifest["inputs"]["weights"] == [[0.25, 0.25], [0.25, 0.25]]
    first = doc["G"]
    assert run("replay", tmp_path / "r.json.manifest.json") == EXIT_OK
    assert abs(json.loads(out.read_text())["G"] - first) < 1e-8


def test_certify_deterministic_file(tmp_path):
    f = write(tmp_path / "d.json", deterministic_behavior(CHSH_SCENARIO, [0, 1], [1, 0]))
    out = tmp_path / "o.json"
    assert run("certify", f, "--inputs", "point:1,1", "--out", out) == EXIT_OK
    assert json.loads(out.read_text())["min_entropy_bits"] == pytest.approx(0.0, abs=1e-6)


def test_certify_ns_level(tmp_path):
    f = write(tmp_path / "pr.json", pr_box())
    out = tmp_path / "o.json"
    assert run("certify", f, "--level", "ns", "--out", out) == EXIT_OK
    assert json.loads(out.read_text())["min_entropy_bits"] == pytest.approx(1.0, abs=1e-6)
    # the same box has no quantum decomposition
    assert run("certify", f, "--level", "local-1", "--out", out) == EXIT_INFEASIBLE


def test_input_errors(tmp_path):
    assert run("certify", tmp_path / "missing.json") == EXIT_INPUT
    assert run("certify", "reference", "--inputs", "point:4,0") == EXIT_INPUT
    assert run("scan-violation", "--grid", "a:b:c") == EXIT_INPUT
    (tmp_path / "bad.json").write_text("{")
    assert run("certify", tmp_path / "bad.json") == EXIT_INPUT


def test_violation_outside_range(tmp_path):
    assert run("certify-violation", "--value", "3.5", "--out", tmp_path / "v.json") == EXIT_INFEASIBLE


def test_project(tmp_path):
    rec = CountsRecord(np.full((2, 2), 10**6), np.array([[400000, 400000], [400000, 80000]]),
                       np.full((2, 2), 500000), np.full((2, 2), 500000))
    rec.to_csv(tmp_path / "c.csv")
    out = tmp_path / "b.json"
    assert run("project", tmp_path / "c.csv", "--out", out) == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["chsh_value"] == pytest.approx(0.6 * 3 + 0.68, abs=1e-9)
    assert Behavior.from_dict(doc).is_no_signalling()


def test_scan_violation_csv(tmp_path):
    out = tmp_path / "s.csv"
    assert run("scan-violation", "--grid", "2.6,2.0,2.3", "--out", out) == EXIT_OK
    header, units, rows = read_csv(out)
    assert header[:2] == ["v", "min_entropy"] and units[1] == "bits"
    v = [float(r[0]) for r in rows]
    assert v == sorted(v)
    assert float(rows[0][1]) == 0.0
    H = [float(r[1]) for r in rows]
    assert H[1] < H[2]


def test_scan_violation_parallel_matches(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run("scan-violation", "--grid", "2.2,2.5", "--out", a)
    run("scan-violation", "--grid", "2.2,2.5", "--jobs", "2", "--out", b)
    ra, rb = read_csv(a)[2], read_csv(b)[2]
    assert np.allclose([float(r[1]) for r in ra], [float(r[1]) for r in rb], atol=1e-8)


def test_scan_eta_endpoints(tmp_path):
    out = tmp_path / "e.csv"
    assert run("scan-eta", "--grid", "0.66,1.0", "--mode", "chsh-fixed", "--out", out) == EXIT_OK
    header, units, rows = read_csv(out)
    H = {float(r[0]): float(r[header.index("min_entropy")]) for r in rows}
    assert H[0.66] == pytest.approx(0.0, abs=1e-9)
    assert H[1.0] > 0.1


def test_certificate_command(tmp_path):
    r = tmp_path / "r.json"
    run("certify", "reference", "--inputs", "point:0,0", "--out", r)
    out = tmp_path / "c.json"
    assert run("certificate", r, "--out", out) == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["checks"]["ok"]
    assert doc["verified_bound"] == pytest.approx(doc["claimed_bound"], abs=1e-6)


def test_check_quantum(tmp_path):
    assert run("check-quantum", "reference", "--out", tmp_path / "q.json") == EXIT_OK
    f = write(tmp_path / "pr.json", pr_box())
    assert run("check-quantum", f, "--out", tmp_path / "q2.json") == EXIT_INFEASIBLE


def test_model(tmp_path):
    out = tmp_path / "m.json"
    assert run("model", "--eta", "0.9", "--theta", "1.0", "--alpha1", "0.2", "--alpha2", "0.9",
               "--binning", "three-outcome", "--out", out) == EXIT_OK
    assert np.asarray(json.loads(out.read_text())["probabilities"]).size == 36
    assert run("model", "--preset", "max-chsh", "--out", out) == EXIT_OK
    assert json.loads(out.read_text())["chsh_value"] == pytest.approx(2 * np.sqrt(2))
    assert run("model", "--eta", "0.9", "--theta", "1.0") == EXIT_INPUT
    assert run("model", "--eta", "0.85", "--out", out) == EXIT_OK
    assert json.loads(out.read_text())["provenance"]["optimized"]["violates"]


def test_parsers(tmp_path):
    assert np.allclose(parse_grid("0:1:3"), [0, 0.5, 1])
    assert np.allclose(parse_grid("1,2"), [1, 2])
    (tmp_path / "p.json").write_text(json.dumps({"weights": [[0.5, 0.5], [0, 0]]}))
    assert parse_inputs(str(tmp_path / "p.json"), CHSH_SCENARIO).support == [(0, 0), (0, 1)]
