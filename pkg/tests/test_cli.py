import json
import subprocess
import sys

import numpy as np
import pytest

from ssdmgf.cli import EXIT_FAILURE, EXIT_OK, EXIT_VIOLATIONS, CliError, main, parse_budget
from ssdmgf.config import NDMGF
from ssdmgf.feasibility import save_logits
from ssdmgf.optimizer import PartialAssignment, solve
from ssdmgf.plan import RestorationPlan, validate_plan
from ssdmgf.scenario import FeatureTensor, Scenario, build_features
from ssdmgf.topology import dump_feeder
from ssdmgf.toys import triple_merge_instance


@pytest.fixture
def triple(tmp_path):
    feeder, scenario = triple_merge_instance()
    fpath = tmp_path / "triple.feeder"
    fpath.write_text(dump_feeder(feeder))
    spath = tmp_path / "triple.json"
    scenario.save(spath)
    return feeder, scenario, str(fpath), str(spath)


@pytest.fixture
def replica_scenario(tmp_path):
    s = Scenario("summer", 9, 60, 4, 6, 15.0)
    path = tmp_path / "s.json"
    s.save(path)
    return s, str(path)


def test_parse_budget():
    assert parse_budget("500") == (500, None)
    assert parse_budget("2.5s") == (None, 2.5)
    assert parse_budget(None) == (None, None)
    for bad in ("0", "-3", "abc", "0s"):
        with pytest.raises(CliError):
            parse_budget(bad)


def test_modes_summary(capsys, tmp_path):
    out = tmp_path / "modes.json"
    assert main(["modes", "--out", str(out)]) == EXIT_OK
    assert "15 modes; by class: 4:1, 3:5, 2:7, 1:2" in capsys.readouterr().out
    assert len(json.loads(out.read_text())) == 15


def test_ingest(tmp_path):
    out = tmp_path / "ingest.json"
    assert main(["ingest", "--out", str(out)]) == EXIT_OK
    data = json.loads(out.read_text())
    assert len(data["blocks"]) == 12 and data["bess_blocks"] == [2, 5, 8]


def test_scenarios_small_grid(tmp_path):
    cfg = tmp_path / "grid.json"
    cfg.write_text(json.dumps({"seasons": ["spring"], "t0s": [8, 9], "nus": [60], "damaged": [1, 3]}))
    out = tmp_path / "sc"
    assert main(["scenarios", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["count"] == 4
    assert len(list(out.glob("*.json"))) == 5


def test_features_match_library(replica, replica_scenario, tmp_path):
    s, spath = replica_scenario
    out = tmp_path / "f.bin"
    assert main(["features", "--scenario", spath, "--out", str(out)]) == EXIT_OK
    assert out.read_bytes() == build_features(s, replica).to_bytes()
    assert FeatureTensor.from_bytes(out.read_bytes()).x.shape == (6, 12, 10)


def test_solve_matches_library(triple, tmp_path):
    feeder, scenario, fpath, spath = triple
    out, stats = tmp_path / "plan.csv", tmp_path / "stats.json"
    args = ["solve", "--feeder", fpath, "--scenario", spath, "--out", str(out), "--stats", str(stats)]
    assert main(args) == EXIT_OK
    plan = RestorationPlan.load(out)
    lib, _ = solve(feeder, scenario)
    assert np.array_equal(plan.u_line, lib.u_line)
    assert plan.meta["objective"] == pytest.approx(lib.meta["objective"], abs=1e-12)
    assert plan.meta["config"]["rules"] == "ssdmgf"
    assert json.loads(stats.read_text())["optimal"]


def test_validate_exit_codes(triple, tmp_path, capsys):
    feeder, scenario, fpath, spath = triple
    nd, _ = solve(feeder, scenario, rules=NDMGF)
    nd.save(tmp_path / "nd.csv")
    base = ["validate", "--feeder", fpath, "--scenario", spath, "--plan", str(tmp_path / "nd.csv")]
    assert main([*base, "--rules", "ndmgf"]) == EXIT_OK
    report = tmp_path / "v.json"
    assert main([*base, "--rules", "ssdmgf", "--out", str(report)]) == EXIT_VIOLATIONS
    assert "eq24" in capsys.readouterr().out
    expected = validate_plan(feeder, scenario, nd)
    assert report.read_text().strip() == expected.to_json()


def test_failures_exit_three(tmp_path, replica_scenario):
    _, spath = replica_scenario
    assert main(["ingest", "--feeder", str(tmp_path / "missing.feeder")]) == EXIT_FAILURE
    bad = tmp_path / "bad.feeder"
    bad.write_text("[buses]\n1, abc\n[lines]\nL1, 1, 9, abc, LN\n")
    assert main(["ingest", "--feeder", str(bad)]) == EXIT_FAILURE
    assert main(["solve", "--scenario", spath, "--budget", "nope", "--out", str(tmp_path / "p.csv")]) == EXIT_FAILURE
    assert main(["validate", "--scenario", spath, "--plan", str(tmp_path / "none.csv")]) == EXIT_FAILURE


def test_warmstart_and_solve(triple, tmp_path):
    _, _, fpath, spath = triple
    warm = tmp_path / "w.json"
    assert main(["warmstart", "--feeder", fpath, "--scenario", spath, "--strategy", "AZWS", "--out", str(warm)]) == 0
    assert PartialAssignment.load(warm).strategy == "AZWS"
    args = ["solve", "--feeder", fpath, "--scenario", spath, "--warm", str(warm), "--out", str(tmp_path / "p.csv")]
    assert main(args) == EXIT_OK


def test_resolve_pipeline(replica, replica_scenario, tmp_path):
    _, spath = replica_scenario
    rng = np.random.default_rng(1)
    logits = tmp_path / "z.npz"
    save_logits(logits, rng.normal(size=(6, 12, 5)), rng.normal(size=(6, 3)))
    resolved = tmp_path / "r.json"
    assert main(["resolve", "--logits", str(logits), "--scenario", spath, "--out", str(resolved)]) == EXIT_OK
    warm = tmp_path / "w.json"
    assert main(["warmstart", "--resolved", str(resolved), "--out", str(warm)]) == EXIT_OK
    assert main(["resolve", "--logits", "heuristic", "--scenario", spath, "--out", str(resolved)]) == EXIT_OK


def test_seed_determinism(triple, tmp_path):
    _, _, fpath, spath = triple
    outs = []
    for i in range(2):
        out = tmp_path / f"rws{i}.json"
        main(["warmstart", "--feeder", fpath, "--scenario", spath, "--strategy", "RWS", "--seed", "5", "--out", str(out)])
        outs.append(out.read_text())
    assert outs[0] == outs[1]


def test_batch_report_export(triple, tmp_path):
    _, scenario, fpath, _ = triple
    sdir = tmp_path / "sc"
    sdir.mkdir()
    scenario.save(sdir / f"{scenario.id}.json")
    bdir = tmp_path / "batch"
    assert main(["batch", "--feeder", fpath, "--scenarios", str(sdir), "--strategies", "WWS,AZWS",
                 "--workers", "1", "--out", str(bdir)]) == EXIT_OK
    rdir = tmp_path / "rep"
    assert main(["report", "--batch", str(bdir / "report.json"), "--out", str(rdir)]) == EXIT_OK
    assert (rdir / "aggregates.json").exists() and (rdir / "restored_load.csv").exists()
    lp = tmp_path / "m.lp"
    assert main(["export-model", "--feeder", fpath, "--scenario", str(sdir / f"{scenario.id}.json"),
                 "--out", str(lp)]) == EXIT_OK
    assert "Subject To" in lp.read_text()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "ssdmgf", "modes"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.startswith("15 modes")
