import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from conftest import metasurface_matrix
from wptopt.circuit import save_impedance
from wptopt.cli import main
from wptopt.oracle import siso_closed_form

ARC = {"type": "arc_relay", "frequency_hz": 13.56e6, "arc_radius": "lambda/20",
       "arc_angle": math.pi / 2, "n_relays": 1, "loop_radius": "lambda/200",
       "wire_radius": 0.018}


def write(tmp_path, name, data):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def arc(tmp_path, n):
    return write(tmp_path, f"arc{n}.json", dict(ARC, n_relays=n))


def test_solve_writes_operating_point(tmp_path, capsys):
    out = tmp_path / "op.json"
    assert main(["solve", "--scenario", arc(tmp_path, 1), "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["solver_status"] == "optimal" and data["epsilon"] < 1e-8
    assert data["eta"] == pytest.approx(0.6299414025778785, rel=1e-8)
    assert "eta=" in capsys.readouterr().out


def test_optimize_rl_matches_siso_closed_form(tmp_path):
    out = tmp_path / "op.json"
    scen = arc(tmp_path, 0)
    assert main(["solve", "--scenario", scen, "--optimize-rl", "--out", str(out)]) == 0
    from wptopt.cli import load_system

    ref = siso_closed_form(load_system(scen)[1])
    assert json.loads(out.read_text())["r_l_ohm"] == pytest.approx(ref.R_L_opt, rel=1e-3)


def test_missing_file(tmp_path, capsys):
    assert main(["solve", "--scenario", str(tmp_path / "nope.json")]) == 1
    assert "cannot read" in capsys.readouterr().err


def test_bad_usage_exits_one(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["solve"])
    assert exc.value.code == 1
    assert main(["solve", "--scenario", arc(tmp_path, 0), "--solver-tol", "2"]) == 1
    bad = write(tmp_path, "bad.json", {"type": "arc_relay", "frequency_hz": -1})
    assert main(["solve", "--scenario", bad]) == 1


def test_infeasible_exit_code(tmp_path):
    from wptopt.circuit import ImpedanceMatrix

    Z = ImpedanceMatrix(np.diag([1.0 + 1j, 2.0 + 0.5j]), [0], [1], 1.0)
    path = tmp_path / "z.json"
    save_impedance(Z, path)
    assert main(["solve", "--scenario", str(path), "--rl", "1.0"]) == 2


def test_not_tight_exit_code_keeps_result(tmp_path, monkeypatch):
    import wptopt.sdr as sdr

    monkeypatch.setattr(sdr, "TIGHTNESS_THRESHOLD", 0.0)
    out = tmp_path / "op.json"
    assert main(["solve", "--scenario", arc(tmp_path, 1), "--out", str(out)]) == 3
    assert json.loads(out.read_text())["solver_status"] == "not_tight"


def test_impedance_document_accepted(tmp_path):
    Z = metasurface_matrix(5, 0.05)
    path = tmp_path / "z.json"
    save_impedance(Z, path)
    assert main(["solve", "--scenario", str(path), "--rl", "0.5", "--no-timestamp"]) == 0


# -- sweep -------------------------------------------------------------------


def sweep_file(tmp_path, values, parameter="relay_count", **extra):
    return write(tmp_path, "sweep.json", dict(parameter=parameter, values=values,
                                              base_scenario=ARC, **extra))


def read_rows(path):
    return list(csv.DictReader(open(path)))


def test_relay_sweep_is_monotone_and_ordered(tmp_path):
    out = tmp_path / "s.csv"
    spec = sweep_file(tmp_path, [3, 0, 5, 1, 4, 2], optimize_rl=True)
    assert main(["sweep", "--sweep", spec, "--out", str(out), "--no-timestamp",
                 "--jobs", "3"]) == 0
    rows = read_rows(out)
    assert [float(r["param_value"]) for r in rows] == [3, 0, 5, 1, 4, 2]
    eta = {float(r["param_value"]): float(r["eta"]) for r in rows}
    seq = [eta[k] for k in range(6)]
    assert all(b > a for a, b in zip(seq, seq[1:]))
    assert all(r["status"] == "optimal" and r["solve_ms"] == "" for r in rows)


def test_sweep_is_deterministic_across_job_counts(tmp_path):
    spec = sweep_file(tmp_path, {"start": 0, "stop": 3, "steps": 4})
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["sweep", "--sweep", spec, "--out", str(a), "--no-timestamp"]) == 0
    assert main(["sweep", "--sweep", spec, "--out", str(b), "--no-timestamp",
                 "--jobs", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().splitlines()[0].split(",")[:6] == [
        "param_value", "eta", "eta_upper_if_not_tight", "epsilon", "r_l", "solve_ms"]


def test_load_resistance_sweep_is_unimodal(tmp_path):
    out = tmp_path / "s.csv"
    spec = sweep_file(tmp_path, {"start": 0.005, "stop": 0.5, "steps": 15, "spacing": "log"},
                      parameter="load_resistance")
    assert main(["sweep", "--sweep", spec, "--out", str(out), "--no-timestamp"]) == 0
    eta = np.array([float(r["eta"]) for r in read_rows(out)])
    k = int(np.argmax(eta))
    assert np.all(np.diff(eta[:k + 1]) > 0) and np.all(np.diff(eta[k:]) < 0)
    assert 0 < k < len(eta) - 1


def test_sweep_timestamp_header(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["sweep", "--sweep", sweep_file(tmp_path, [0]), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# generated ") and lines[2].split(",")[5] != ""


def test_sweep_records_failures_in_row(tmp_path):
    out = tmp_path / "s.csv"
    spec = sweep_file(tmp_path, [1.0, -1.0], parameter="angle")
    assert main(["sweep", "--sweep", spec, "--out", str(out), "--no-timestamp"]) == 0
    rows = read_rows(out)
    assert rows[0]["status"] == "optimal"
    assert rows[1]["status"].startswith("error:") and rows[1]["eta"] == ""


def test_empty_sweep(tmp_path):
    assert main(["sweep", "--sweep", sweep_file(tmp_path, [])]) == 1
    assert main(["sweep", "--sweep", sweep_file(tmp_path, [1], parameter="grid_size")]) == 1


# -- fieldmap ----------------------------------------------------------------


def solved(tmp_path, n):
    scen = arc(tmp_path, n)
    res = tmp_path / f"op{n}.json"
    assert main(["solve", "--scenario", scen, "--out", str(res)]) == 0
    return scen, str(res)


def test_fieldmap_peaks_near_transmitter(tmp_path):
    scen, res = solved(tmp_path, 0)
    out = tmp_path / "f.csv"
    lam = 299792458.0 / 13.56e6
    tx = (lam / 20, 0.0, 0.0)
    args = ["fieldmap", "--scenario", scen, "--result", res, "--out", str(out),
            "--origin", "0.55,0.55,0", "--nu", "41", "--nv", "41", "--spacing", "0.05",
            "--no-timestamp"]
    assert main(args) == 0
    rows = [r for r in read_rows(out) if r["mag"] != "nan"]
    best = max(rows, key=lambda r: float(r["mag"]))
    u, v = float(best["u"]) + 0.55, float(best["v"]) + 0.55
    assert math.hypot(u - tx[0], v - tx[1]) < 0.25


def test_fieldmap_interior_beats_exterior(tmp_path):
    scen, res = solved(tmp_path, 4)
    out = tmp_path / "f.csv"
    assert main(["fieldmap", "--scenario", scen, "--result", res, "--out", str(out),
                 "--origin", "0.55,0.55,0", "--nu", "31", "--nv", "31", "--spacing", "0.08",
                 "--no-timestamp"]) == 0
    arc_r = 299792458.0 / 13.56e6 / 20
    inside, outside = [], []
    for r in read_rows(out):
        if r["mag"] == "nan":
            continue
        rho = math.hypot(float(r["u"]) + 0.55, float(r["v"]) + 0.55)
        (inside if abs(rho - arc_r) < 0.15 else outside).append(float(r["mag"]))
    assert max(inside) > max(outside)


def test_fieldmap_mismatched_result(tmp_path):
    _, res = solved(tmp_path, 1)
    other = arc(tmp_path, 3)
    assert main(["fieldmap", "--scenario", other, "--result", res,
                 "--out", str(tmp_path / "f.csv"), "--spacing", "0.1"]) == 1


def test_fieldmap_bad_vector(tmp_path):
    scen, res = solved(tmp_path, 0)
    with pytest.raises(SystemExit) as exc:
        main(["fieldmap", "--scenario", scen, "--result", res, "--out", "x.csv",
              "--spacing", "0.1", "--origin", "1,2"])
    assert exc.value.code == 1


# -- oracle ------------------------------------------------------------------


def oracle_gap(capsys):
    text = capsys.readouterr().out
    fields = dict(kv.split("=") for kv in text.split())
    return float(fields["oracle_eta"]), float(fields["sdr_eta"]), float(fields["relative_gap"])


def test_oracle_siso(tmp_path, capsys):
    assert main(["oracle", "--scenario", arc(tmp_path, 0)]) == 0
    o, s, _ = oracle_gap(capsys)
    assert abs(o - s) < 1e-6


def test_oracle_siso_p1(tmp_path, capsys):
    assert main(["oracle", "--scenario", arc(tmp_path, 1), "--resolution", "41"]) == 0
    _, _, gap = oracle_gap(capsys)
    assert -1e-4 <= gap <= 1e-6


def test_oracle_multistart(tmp_path, capsys):
    assert main(["oracle", "--scenario", arc(tmp_path, 1), "--mode", "multistart",
                 "--seed", "7"]) == 0
    _, _, gap = oracle_gap(capsys)
    assert -1e-4 <= gap <= 1e-6


def test_oracle_rejects_metasurface(tmp_path):
    doc = {"type": "metasurface", "frequency_hz": 6.78e6, "nx": 3, "ny": 3,
           "element_radius": "lambda/200", "pitch": "lambda/500", "wire_radius": "lambda/20000",
           "tx_rx_distance": "0.05*lambda", "txrx_radius": "lambda/100",
           "txrx_wire_radius": "lambda/4000"}
    assert main(["oracle", "--scenario", write(tmp_path, "ms.json", doc)]) == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "wptopt", "solve", "--scenario",
                           arc(tmp_path, 0)], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("eta=")
