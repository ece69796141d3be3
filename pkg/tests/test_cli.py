import csv
import json
from pathlib import Path

import pytest

from storageopf import cli

CASE14 = str(Path(__file__).parent / "data" / "case14.m")


def run(*argv):
    return cli.main([str(a) for a in argv])


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_opf_on_fixture(tmp_path):
    assert run("opf", "--fixture", "exactness", "--no-ohms-law", "--out", tmp_path) == 0
    summary = rows(tmp_path / "summary.csv")
    assert len(summary) == 1
    assert float(summary[0]["z_mip"]) == pytest.approx(4.2)
    assert float(summary[0]["opt_gap"]) == pytest.approx(0.0, abs=1e-6)
    for tag in ("battery_mip", "reg_mip", "reg_lp"):
        assert (tmp_path / f"dispatch_s000_{tag}.csv").exists()
    assert run("check", tmp_path) == 0


def test_opf_on_case_and_check(tmp_path):
    out = tmp_path / "run"
    assert run("opf", "--case", CASE14, "--top-b", 2, "--horizon", 3, "--scenarios", 2, "--seed", 4,
               "--demand-mode", "system", "--out", out) == 0
    assert len(rows(out / "summary.csv")) == 2
    rec = json.loads((out / "run.json").read_text())
    assert rec["top_b"] == 2 and len(rec["lambda"]) == 2
    assert run("check", out) == 0
    # tamper with one stored dispatch
    p = out / "dispatch_s001_reg_mip.json"
    d = json.loads(p.read_text())
    d["p_ls"][0][0] += 0.5
    p.write_text(json.dumps(d))
    assert run("check", out) == cli.EXIT_DATA


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.ENV_OUTPUT, str(tmp_path / "env_out"))
    assert run("gen-demand", "--case", CASE14, "--top-b", 1, "--horizon", 2, "--scenarios", 3) == 0
    assert sorted(p.name for p in (tmp_path / "env_out").iterdir()) == [
        "demand_s000.csv", "demand_s001.csv", "demand_s002.csv"]


def test_demand_file_input(tmp_path):
    assert run("gen-demand", "--case", CASE14, "--top-b", 1, "--horizon", 2, "--out", tmp_path) == 0
    out = tmp_path / "opf"
    assert run("opf", "--case", CASE14, "--top-b", 1, "--demand", tmp_path / "demand_s000.csv", "--out", out) == 0
    assert (out / "demand_s000.csv").read_text() == (tmp_path / "demand_s000.csv").read_text()


def test_lambda_sweep(tmp_path):
    assert run("lambda-sweep", "--fixture", "gap_sweep", "--no-ohms-law", "--grid", "0:1:0.25", "--out",
               tmp_path) == 0
    table = rows(tmp_path / "lambda_sweep.csv")
    assert len(table) == 6
    assert sum(int(r["best_worst_case"]) for r in table) == 1
    lams = [float(r["lambda"]) for r in table]
    assert lams == sorted(lams)
    for r in table:
        assert float(r["empirical_gap"]) <= float(r["theoretical_bound"]) + 1e-6


def test_parse_grid():
    assert cli.parse_grid("0:0.1:0.05") == [0.0, 0.05, 0.1]
    assert cli.parse_grid("0.2, 0.4") == [0.2, 0.4]
    for bad in ("1:0:0.1", "0:1:0", "a,b"):
        with pytest.raises(cli.ConfigError):
            cli.parse_grid(bad)


def test_trilevel_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ("trilevel", "--fixture", "four_bus_ring", "-b", 1, "-k", 1, "--reproducible")
    assert run(*args, "--out", a) == 0
    assert run(*args, "--out", b) == 0
    assert (a / "trilevel.csv").read_bytes() == (b / "trilevel.csv").read_bytes()
    assert (a / "trilevel.json").read_bytes() == (b / "trilevel.json").read_bytes()
    data = json.loads((a / "trilevel.json").read_text())
    assert data["oracle"] == pytest.approx(0.0, abs=1e-9)
    assert data["best_x"]["x"] == [0, 1, 0, 0]
    row = rows(a / "trilevel.csv")[0]
    assert row["seconds"] == "0.000"


def test_export_lp(tmp_path):
    target = tmp_path / "m.lp"
    assert run("export-lp", "--fixture", "exactness", "--model", "reg-lp", "-o", target) == 0
    text = target.read_text()
    assert text.startswith("\\") or "Minimize" in text
    assert "Binary" not in text
    assert run("export-lp", "--fixture", "exactness", "--model", "battery-mip", "--out", tmp_path) == 0
    assert "Binary" in (tmp_path / "battery-mip_s000.lp").read_text()
    assert run("export-lp", "--fixture", "exactness", "--scenario", 3, "--out", tmp_path) == cli.EXIT_CONFIG


def test_config_file_and_flag_precedence(tmp_path):
    conf = tmp_path / "conf.json"
    conf.write_text(json.dumps({"fixture": "exactness", "ohms_law": False, "lambda_mode": "zero",
                                "output_dir": str(tmp_path / "from_conf")}))
    assert run("opf", "--config", conf) == 0
    rec = json.loads((tmp_path / "from_conf" / "run.json").read_text())
    assert rec["lambda"] == [0.0, 0.0]
    assert run("opf", "--config", conf, "--lambda", 0.3, 0.2, "--lambda-mode", "explicit",
               "--out", tmp_path / "flags") == 0
    rec = json.loads((tmp_path / "flags" / "run.json").read_text())
    assert rec["lambda"] == [0.3, 0.2] and rec["ohms_law"] is False


@pytest.mark.parametrize("argv", [
    ("opf",),
    ("opf", "--fixture", "exactness", "--case", CASE14),
    ("opf", "--fixture", "nope"),
    ("opf", "--case", CASE14),
    ("opf", "--case", CASE14, "--batteries", "99"),
    ("opf", "--fixture", "exactness", "--lambda", 1, 2, 3),
    ("opf", "--fixture", "exactness", "--lambda-mode", "explicit"),
    ("trilevel", "--fixture", "exactness", "-b", -1),
    ("gen-demand", "--case", CASE14, "--top-b", 1, "--horizon", 30),
])
def test_configuration_errors(tmp_path, argv):
    assert run(*argv, "--out", tmp_path) == cli.EXIT_CONFIG


def test_bad_config_files(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("opf", "--config", bad) == cli.EXIT_CONFIG
    bad.write_text(json.dumps({"fixture": "exactness", "colour": 1}))
    assert run("opf", "--config", bad) == cli.EXIT_CONFIG
    assert run("opf", "--config", tmp_path / "missing.json") == cli.EXIT_CONFIG


def test_data_errors(tmp_path):
    broken = tmp_path / "broken.m"
    broken.write_text(Path(CASE14).read_text().replace("mpc.branch", "mpc.branches"))
    assert run("opf", "--case", broken, "--top-b", 1, "--out", tmp_path) == cli.EXIT_DATA
    assert run("opf", "--case", tmp_path / "absent.m", "--top-b", 1, "--out", tmp_path) == cli.EXIT_DATA
    bad_files = ("t,bus,demand\n1,99,0.5\n", "t,bus,demand\n1,1,-0.5\n", "t,bus,demand\n", "t,load\n1,2\n")
    for text in bad_files:
        bad = tmp_path / "bad.csv"
        bad.write_text(text)
        assert run("opf", "--case", CASE14, "--top-b", 1, "--demand", bad, "--out", tmp_path) == cli.EXIT_DATA
    assert run("check", tmp_path / "nothing_here") == cli.EXIT_DATA


def test_solver_failure_exit_code(tmp_path, monkeypatch):
    def boom(*a, **kw):
        raise RuntimeError("placement master failed: Infeasible")

    monkeypatch.setattr(cli, "solve_trilevel", boom)
    assert run("trilevel", "--fixture", "four_bus_ring", "--out", tmp_path) == cli.EXIT_SOLVER


def test_bad_subcommand_exits_through_argparse():
    with pytest.raises(SystemExit) as err:
        cli.main(["frobnicate"])
    assert err.value.code == 2


def test_zero_penalty_and_lossless_runs(tmp_path):
    assert run("opf", "--fixture", "exactness", "--no-ohms-law", "--lambda-mode", "zero",
               "--out", tmp_path / "z") == 0
    row = rows(tmp_path / "z" / "summary.csv")[0]
    assert row["z_mip"] == row["z_reg_mip"]
    assert run("opf", "--fixture", "exactness", "--no-ohms-law", "--eta", 1, "--out", tmp_path / "e") == 0
    row = rows(tmp_path / "e" / "summary.csv")[0]
    assert row["z_mip"] == row["z_reg_mip"] == row["z_reg_lp"]


def test_trilevel_budgets_and_solution_gap(tmp_path):
    assert run("trilevel", "--fixture", "four_bus_ring", "-b", 0, "-k", 0, "--out", tmp_path / "zero") == 0
    row = rows(tmp_path / "zero" / "trilevel.csv")[0]
    assert float(row["trilevel_gap_reg"]) == 0 and row["iters"] == "1"
    assert run("trilevel", "--fixture", "four_bus_ring", "-b", 1, "-k", 1, "--out", tmp_path / "one") == 0
    data = json.loads((tmp_path / "one" / "trilevel.json").read_text())
    assert data["solution_gap"] >= 0
    if data["z_reg_ub"] > 0:
        assert data["solution_gap"] >= (data["z_reg_ub"] - data["oracle"]) / data["z_reg_ub"] - 1e-9
