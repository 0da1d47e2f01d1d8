import json
import shutil

import pytest

from banditmtd.cli import main, read_rows
from banditmtd.config import ConfigFileError, ExperimentConfig, load_config, parse_config


def test_defaults():
    cfg = ExperimentConfig.defaults()
    assert cfg["seed"] == 2022 and cfg["T"] == 1000 and cfg["repeats"] == 10
    dp = cfg.defender_params()
    assert dp["fpl-mtd"] == {"gamma": 0.007, "eta": 0.1}
    assert dp["fpl-maxmin"]["gamma"] == 0.006 and dp["fpl-maxmin"]["eta"] == 0.03
    assert dp["robust-rl"] == {"alpha": 0.2, "discount": 0.8, "epsilon": 0.1}
    assert cfg.attacker_params()["qr"] == {"lam": 5.0}


def test_parse_and_reject_unknown():
    cfg = parse_config("""
        # comment
        T = 500
        defenders = fpl-mtd, uniform
        defender.fpl_mtd.gamma = 0.01   # inline
        generator.configs = 4-6
    """)
    assert cfg["T"] == 500
    assert cfg["defenders"] == ("fpl-mtd", "uniform")
    assert cfg["generator.configs"] == (4, 6)
    assert cfg.defender_params()["fpl-mtd"]["gamma"] == 0.01
    with pytest.raises(ConfigFileError, match="line 1"):
        parse_config("defender.fpl_mtd.zeta = 1")
    with pytest.raises(ConfigFileError, match="expected"):
        parse_config("T 500")
    with pytest.raises(ConfigFileError, match="bad value"):
        parse_config("T = lots")


def test_dump_round_trip(tmp_path):
    cfg = parse_config("T = 77\nsweep.gammas = 0.001, 0.002\nworkers = 3")
    path = tmp_path / "c.cfg"
    path.write_text(cfg.dumps())
    assert load_config(path).values == cfg.values


# -- subcommands -----------------------------------------------------------

def test_ingest(tmp_path, fixtures_dir, capsys):
    feeds = tmp_path / "feeds"
    feeds.mkdir()
    shutil.copy(fixtures_dir / "nvdcve-1.1-sample.json", feeds)
    out = tmp_path / "pool.csv"
    assert main(["ingest", "--feeds", str(feeds), "--out", str(out)]) == 0
    assert "records=2 skipped=1" in capsys.readouterr().out
    first = out.read_bytes()
    assert main(["ingest", "--feeds", str(feeds), "--out", str(out)]) == 0
    assert out.read_bytes() == first


def test_ingest_env_var_and_errors(tmp_path, monkeypatch, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    monkeypatch.setenv("BANDITMTD_NVD_DIR", str(empty))
    assert main(["ingest", "--out", str(tmp_path / "p.csv")]) == 0
    assert "warning" in capsys.readouterr().err
    assert (tmp_path / "p.csv").read_text().strip() == "cve_id,year,base_score,impact_score"
    assert main(["ingest", "--feeds", str(tmp_path / "missing"), "--out", str(tmp_path / "p.csv")]) == 1


def test_missing_required_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen", "--mode", "nvd"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def _gen(tmp_path, mode="nvd", seed=3):
    out = tmp_path / f"{mode}{seed}.json"
    assert main(["gen", "--mode", mode, "--seed", str(seed), "--configs", "4-4", "--attackers", "2-3",
                 "--vulns", "30-40", "--out", str(out)]) == 0
    return out


def test_gen_is_reproducible(tmp_path, fixtures_dir):
    a = _gen(tmp_path)
    first = a.read_bytes()
    _gen(tmp_path)
    assert a.read_bytes() == first
    pool_out = tmp_path / "p.json"
    assert main(["gen", "--mode", "nvd", "--pool", str(fixtures_dir / "pool_sample.csv"), "--vulns", "3-3",
                 "--configs", "2-2", "--attackers", "1-1", "--out", str(pool_out)]) == 0
    doc = json.loads(pool_out.read_text())
    assert sorted(doc["meta"]["cve_ids"]) == ["CVE-2014-0160", "CVE-2019-0708", "CVE-2021-44228"]


def test_run_deterministic_and_embeds_config(tmp_path):
    inst = _gen(tmp_path)
    args = ["run", "--instance", str(inst), "--defender", "fpl-mtd", "--attacker", "qr", "--T", "150",
            "--out-dir", str(tmp_path / "r"), "--save-state", str(tmp_path / "state.json")]
    assert main(args) == 0
    first = (tmp_path / "r" / "run.csv").read_bytes()
    assert main(args) == 0
    assert (tmp_path / "r" / "run.csv").read_bytes() == first
    assert first.startswith(b"# config=")
    doc = json.loads((tmp_path / "r" / "run.json").read_text())
    assert doc["config"]["T"] == 150 and doc["config"]["seed"] == 2022
    state = json.loads((tmp_path / "state.json").read_text())
    assert state["name"] == "fpl-mtd" and state["t"] == 150


def test_run_errors(tmp_path, capsys):
    inst = _gen(tmp_path)
    assert main(["run", "--instance", str(inst), "--defender", "bogus"]) == 2
    assert "fpl-mtd" in capsys.readouterr().err
    assert main(["run", "--instance", str(inst), "--defender", "fpl-maxmin", "--set", "feedback=bandit"]) == 2
    assert main(["run", "--instance", str(tmp_path / "nothing.json")]) == 1


def test_evaluate_and_report(tmp_path):
    inst = _gen(tmp_path)
    out = tmp_path / "ev"
    args = ["evaluate", "--instances", str(inst), "--defenders", "fpl-mtd", "robust-rl", "--attackers", "random",
            "best-response", "--T", "80", "--repeats", "3", "--workers", "1", "--out-dir", str(out)]
    assert main(args) == 0
    first = (out / "runs.csv").read_bytes()
    assert main(args) == 0
    assert (out / "runs.csv").read_bytes() == first
    rows = read_rows(out / "runs.csv")
    assert len(rows) == 2 * 2 * 3
    assert "wall_time" not in rows[0]
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["derived_seeds"][inst.stem]) == 3
    rep = tmp_path / "rep.csv"
    assert main(["report", "--runs", str(out / "runs.csv"), "--out", str(rep)]) == 0
    lines = rep.read_text().splitlines()
    assert lines[0] == "attacker,defender,mean_performance,se,n" and len(lines) == 5


def test_evaluate_generated_from_config(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("T = 40\nrepeats = 2\ndefenders = fpl-mtd\nattackers = random\ngenerator.count = 2\n"
                   "generator.configs = 3-3\ngenerator.vulns = 20-20\ngenerator.pool_size = 100\nworkers = 1\n"
                   f"output_dir = {tmp_path / 'out'}\n")
    assert main(["evaluate", "--config", str(cfg)]) == 0
    rows = read_rows(tmp_path / "out" / "runs.csv")
    assert {r["dataset"] for r in rows} == {"nvd0", "nvd1"}


def test_sweep_smoke(tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", "--gammas", "0.005", "0.01", "--etas", "0.05", "0.1", "--T", "50", "--repeats", "2",
                 "--set", "sweep.instances=2", "--set", "generator.vulns=20-20", "--set", "generator.configs=3-3",
                 "--workers", "1", "--out-dir", str(out)]) == 0
    rows = read_rows(out / "sweep.csv")
    assert [int(r["rank"]) for r in rows] == [1, 2, 3, 4]


def test_fix_vulns(tmp_path):
    inst = _gen(tmp_path)
    n = json.loads(inst.read_text())["num_vulns"]
    est = tmp_path / "est.json"
    est.write_text(json.dumps([[-0.5]] + [[0.0]] * (n - 1)))
    out = tmp_path / "fix.json"
    assert main(["fix-vulns", "--instance", str(inst), "--estimates", str(est), "--budget", "1",
                 "--method", "greedy", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["vulns"] == [0] and doc["objective"] == 0.0 and doc["config"]["fix.budget"] == 1.0
    assert main(["fix-vulns", "--instance", str(inst), "--estimates", str(est), "--budget", "1",
                 "--method", "brute", "--out", str(out)]) == 1
    assert main(["fix-vulns", "--instance", str(inst), "--budget", "1", "--out", str(out)]) == 2


def test_fix_vulns_from_saved_state(tmp_path):
    inst = _gen(tmp_path)
    state = tmp_path / "mm.json"
    assert main(["run", "--instance", str(inst), "--defender", "fpl-maxmin", "--T", "100",
                 "--out-dir", str(tmp_path / "r"), "--save-state", str(state)]) == 0
    out = tmp_path / "fix.json"
    assert main(["fix-vulns", "--instance", str(inst), "--estimates", str(state), "--budget", "2",
                 "--out", str(out)]) == 0
    assert len(json.loads(out.read_text())["vulns"]) == 2
