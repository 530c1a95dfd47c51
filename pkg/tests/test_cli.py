import json

import pytest

from rcpfeedback import cli

EX1 = ["--a", "1.01", "--b", "0.736", "--C", "10", "--tau", "100"]


def _run(capsys, argv):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_analyze_report(capsys):
    code, out, _ = _run(capsys, ["analyze", *EX1])
    assert code == 0
    report = json.loads(out)
    assert report["schema"] == 1
    assert list(report) == ["schema", "inputs", "equilibrium", "stability", "convergence",
                            "robust_stability", "hopf", "provenance"]
    assert report["hopf"]["kappa_c"] == report["stability"]["kappa_c"]
    assert report["hopf"]["criticality"] == "supercritical"
    assert report["hopf"]["mu2"] == pytest.approx(2.324e-2, abs=1e-3)


def test_analyze_is_byte_identical(capsys):
    _, first, _ = _run(capsys, ["analyze", *EX1])
    _, second, _ = _run(capsys, ["analyze", *EX1])
    assert first == second


def test_floats_use_17_significant_digits():
    assert cli.dumps(0.1) == "0.10000000000000001"
    assert cli.dumps(10.0) == "10.0"
    assert cli.dumps(float("inf")) == "null"
    assert json.loads(cli.dumps({"b": [1, 2.5], "a": None})) == {"b": [1, 2.5], "a": None}


def test_rho_star_equivalent_to_b(capsys):
    _, out, _ = _run(capsys, ["analyze", "--a", "1.0", "--rho-star", "0.7", "--C", "10", "--tau", "100"])
    report = json.loads(out)
    assert report["equilibrium"]["rho_star"] == pytest.approx(0.7, abs=1e-14)
    assert report["hopf"]["criticality"] == "subcritical"


@pytest.mark.parametrize("argv,flag", [
    (["analyze", *EX1, "--rho-star", "0.5"], "--rho-star"),
    (["analyze", "--a", "-1", "--b", "1", "--C", "10", "--tau", "1"], "--a"),
    (["analyze", "--a", "1", "--C", "10", "--tau", "1"], "--b"),
    (["analyze", "--variant", "without-queue", *EX1], "--b"),
    (["analyze", *EX1, "--gamma", "0.9"], "--gamma"),
    (["analyze", "--a", "1", "--b", "1", "--C", "abc", "--tau", "1"], "--C"),
    (["simulate-packets", "--capacity", "1", "--capacity-mbps", "2"], "--capacity"),
])
def test_bad_flags_exit_nonzero_naming_flag(capsys, argv, flag):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code != 0
    assert flag in capsys.readouterr().err


def test_without_queue_analysis(capsys):
    _, out, _ = _run(capsys, ["analyze", "--variant", "without-queue", "--a", "0.5", "--gamma", "0.95",
                              "--C", "10", "--tau", "100"])
    report = json.loads(out)
    assert report["stability"]["stable"] and report["robust_stability"]
    assert report["hopf"]["criticality"] == "supercritical"


def test_out_dir_writes_named_files(tmp_path, capsys):
    assert cli.main(["stability-chart", "--points", "7", "--out", str(tmp_path)]) == 0
    assert cli.main(["convergence", "--points", "5", "--out", str(tmp_path)]) == 0
    assert cli.main(["convergence", "--variant", "with-queue", "--axis", "b", "--a", "0.5",
                     "--min", "0.1", "--max", "1", "--points", "3", "--out", str(tmp_path)]) == 0
    for which in ("quadratics", "cubics", "utilization"):
        assert cli.main(["hopf-surface", which, "--points", "3", "--out", str(tmp_path)]) == 0
    assert cli.main(["analyze", *EX1, "--out", str(tmp_path)]) == 0
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["analysis.json", "fig2_boundary.csv", "fig3_sigma.csv", "fig4_sigma_b.csv",
                     "fig5_mu2_utilization.csv", "mu2_cubics.csv", "mu2_quadratics.csv"]
    lines = (tmp_path / "fig2_boundary.csv").read_text().splitlines()
    assert lines[0] == "a,b" and len(lines) == 8


def test_simulate_fluid_and_sweep(tmp_path, capsys):
    assert cli.main(["simulate-fluid", *EX1, "--kappa", "0.95", "--R0", "5.6", "--t-end", "1000",
                     "--dt", "1", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "fluid_trajectory.csv").read_text().splitlines()
    assert rows[0] == "t,R" and len(rows) == 1002
    assert cli.main(["sweep", *EX1, "--kappa-min", "0.95", "--kappa-max", "1.05", "--kappa-step", "0.05",
                     "--t-end-delays", "60", "--dt", "1", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "sweep_summary.json").read_text())
    assert summary["grid"] == [0.95, 1.0, 1.05]
    assert "hysteresis" in summary


def test_simulate_packets_outputs(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("capacity = 1250\nn_sources = 4\nrtt = 20\nduration = 1000\n")
    assert cli.main(["simulate-packets", "--config", str(cfg), "--seed", "9", "--out", str(tmp_path)]) == 0
    header = (tmp_path / "packets_trace.csv").read_text().splitlines()[0]
    assert header == "t_ms,queue_pkts,rate_Bpms"
    summary = json.loads((tmp_path / "packets_summary.json").read_text())
    assert summary["provenance"]["seed"] == 9 and summary["config"]["seed"] == 9
    c = summary["counters"]
    assert c["generated"] == c["served"] + c["queued_final"] + c["dropped"]
