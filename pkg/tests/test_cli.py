import csv
import json
import os
import subprocess
import sys

import pytest

from ddrs import cli


def read_header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


def write(path, text):
    path.write_text(text)
    return str(path)


@pytest.fixture
def in_tmp(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def test_solve_defaults(in_tmp, capsys):
    assert cli.main(["solve", "--out", "sol"]) == 0
    out = json.loads((in_tmp / "sol" / "solution.json").read_text())
    assert out["rewards"] == pytest.approx([11.8182, 6.1026, 2.0792], abs=1e-4)
    assert "throughput 0.773262" in capsys.readouterr().out
    assert json.loads((in_tmp / "sol" / "scenario.json").read_text())["kind"] == "solve"


def test_sweep_columns_follow_schema(in_tmp):
    assert cli.main(["sweep", "--scenario", "fig5", "--step", "1", "--out", "sw"]) == 0
    assert read_header(in_tmp / "sw" / "surface.csv") == ["R1", "R2", "R3", "throughput"]
    arg = json.loads((in_tmp / "sw" / "argmax.json").read_text())
    assert arg["argmax"] == {"R1": 12.0, "R2": 6.0, "R3": 2.0, "throughput": pytest.approx(0.7730, abs=1e-4)}


def test_schema_expansion():
    assert cli.columns("ddrs_periods", 3) == ["period", "deposit", "R1", "R2", "R3", "rate",
                                              "waste_stage1", "waste_stage2", "waste_stage3"]
    assert cli.columns("aimd_trajectory", 2) == ["step", "R_1", "R_2", "k", "Rbar_1", "Rbar_2"]
    assert cli.columns("closed_loop", 1) == ["period", "deposit", "measured_rate", "target_rate", "R_1"]


def test_bins_outputs_and_determinism(in_tmp):
    sc = write(in_tmp / "short.scenario", "kind: bins\nseed: 4\nparams:\n  horizon_days: 1\n"
                                          "  strategy: [centralised, 'decentralised(a=8)']\n")
    assert cli.main(["bins", "--scenario", sc, "--out", "a"]) == 0
    assert cli.main(["bins", "--scenario", sc, "--out", "b"]) == 0
    for name in ("levels_centralised.csv", "levels_decentralised_a8.csv"):
        assert (in_tmp / "a" / name).read_bytes() == (in_tmp / "b" / name).read_bytes()
        assert read_header(in_tmp / "a" / name) == ["minute_index", "level_bin_1", "level_bin_2",
                                                   "level_bin_3", "cumulative_overflow"]
    cmp = json.loads((in_tmp / "a" / "comparison.json").read_text())
    assert "decentralised(a=8)" in cmp["rms_to_centralised"]
    assert cli.main(["bins", "--scenario", sc, "--out", "c", "--seed", "5"]) == 0
    assert (in_tmp / "c" / "levels_centralised.csv").read_bytes() != (in_tmp / "a" / "levels_centralised.csv").read_bytes()


def test_aimd_flags(in_tmp):
    assert cli.main(["aimd", "--deposit", "5", "--alpha", "0.02", "--beta", "0.8", "--gamma", "0.01",
                     "--iters", "3000", "--out", "am"]) == 0
    sc = json.loads((in_tmp / "am" / "scenario.json").read_text())
    assert sc["params"]["aimd"]["deposit"] == 5.0 and sc["params"]["aimd"]["gamma"] == 0.01
    assert sc["params"]["aimd"]["max_iter"] == 3000
    assert read_header(in_tmp / "am" / "consensus.csv")[:3] == ["k", "step", "Rbar_1"]
    assert cli.main(["aimd", "--scenario", "fig6", "--auto-gamma", "--iters", "10", "--out", "am2"]) == 0
    with pytest.raises(SystemExit):
        cli.main(["aimd", "--gamma", "1", "--auto-gamma"])


def test_curves_file(in_tmp):
    curves = write(in_tmp / "c.yaml", "curves:\n  - {p0: 0.2, x90: 3}\n  - {p0: 0.4, x90: 2}\n")
    assert cli.main(["solve", "--curves", curves, "--deposit", "4", "--out", "s"]) == 0
    assert len(json.loads((in_tmp / "s" / "solution.json").read_text())["rewards"]) == 2


def test_ddrs_exact_and_fast(in_tmp):
    assert cli.main(["ddrs", "--scenario", "loop_exact", "--out", "ex"]) == 0
    assert read_header(in_tmp / "ex" / "closed_loop.csv") == ["period", "deposit", "measured_rate",
                                                             "target_rate", "R_1", "R_2", "R_3"]
    assert cli.main(["ddrs", "--periods", "2", "--out", "fa"]) == 0
    assert len((in_tmp / "fa" / "periods.csv").read_text().splitlines()) == 3


def test_exit_codes(in_tmp, capsys):
    empty = write(in_tmp / "e.scenario", "")
    assert cli.main(["bins", "--scenario", empty]) == cli.EXIT_PARSE
    bad = write(in_tmp / "b.scenario", "kind: [x\n")
    assert cli.main(["bins", "--scenario", bad]) == cli.EXIT_PARSE
    invalid = write(in_tmp / "i.scenario", "kind: aimd\nparams:\n  beta: 2\n")
    assert cli.main(["aimd", "--scenario", invalid]) == cli.EXIT_CONFIG
    assert "params.aimd.beta" in capsys.readouterr().err
    assert cli.main(["bins", "--scenario", "fig5"]) == cli.EXIT_CONFIG  # wrong kind
    assert cli.main(["ddrs", "--target-rate", "1.5"]) == cli.EXIT_CONFIG
    assert cli.main(["bins", "--scenario", "fig3a", "--replications", "0"]) == cli.EXIT_CONFIG
    assert not (in_tmp / "results").exists()


def test_runtime_failure_leaves_no_partial_output(in_tmp, monkeypatch):
    def boom(self, name, obj):
        raise OSError("disk full")
    monkeypatch.setattr(cli.OutputWriter, "json", boom)
    assert cli.main(["sweep", "--step", "2", "--out", "deep/nested/out"]) == cli.EXIT_RUNTIME
    assert not (in_tmp / "deep").exists()


def test_runtime_error_in_experiment(in_tmp, monkeypatch):
    def broken(cfg, seed):
        raise RuntimeError("plant exploded")
    monkeypatch.setitem(cli.RUNNERS, "solve", broken)
    assert cli.main(["solve", "--out", "x"]) == cli.EXIT_RUNTIME
    assert not (in_tmp / "x").exists()


def test_writes_only_inside_output_dir(in_tmp):
    before = set(os.listdir(in_tmp))
    assert cli.main(["sweep", "--step", "2", "--out", "only"]) == 0
    assert set(os.listdir(in_tmp)) - before == {"only"}
    writer = cli.OutputWriter(in_tmp / "only")
    with pytest.raises(cli.ConfigError):
        writer.json("../escape.json", {})


def test_replications_and_order_free_aggregation(in_tmp):
    sc = write(in_tmp / "r.scenario", "kind: bins\nseed: 0\nparams:\n  horizon_days: 1\n"
                                      "  strategy: unsupervised\n")
    assert cli.main(["bins", "--scenario", sc, "--replications", "3", "--jobs", "2", "--out", "rep"]) == 0
    agg = json.loads((in_tmp / "rep" / "aggregate.json").read_text())
    assert agg["seeds"] == [0, 1, 2]
    for s in range(3):
        assert (in_tmp / "rep" / f"seed_{s}" / "levels_unsupervised.csv").exists()
    # sequential run gives the same per-seed files
    assert cli.main(["bins", "--scenario", sc, "--replications", "3", "--jobs", "1", "--out", "seq"]) == 0
    assert (in_tmp / "rep/seed_2/levels_unsupervised.csv").read_bytes() == \
        (in_tmp / "seq/seed_2/levels_unsupervised.csv").read_bytes()
    results = {s: {"summary": {"strategies": {"u": {"overflow_fraction": float(s)}}}} for s in (2, 0, 1)}
    forward = cli._aggregate("bins", dict(sorted(results.items())))
    assert cli._aggregate("bins", results) == forward


def test_validate_and_list(capsys):
    assert cli.main(["validate", "--scenario", "fig9"]) == 0
    echoed = json.loads(capsys.readouterr().out)
    assert echoed["params"]["pi"]["target_rate"] == 0.77
    assert cli.main(["list"]) == 0
    assert "fig7" in capsys.readouterr().out.split()


def test_console_script(in_tmp):
    proc = subprocess.run([sys.executable, "-m", "ddrs.cli", "solve", "--deposit", "10", "--out", "cs"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.startswith("solve solve seed=0:")
