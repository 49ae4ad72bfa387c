from __future__ import annotations

import json
import subprocess
import sys

import pytest

from traceorder.cli import EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK, ExperimentConfig, main

from conftest import data_path


def small_config(tmp_path, **over):
    cfg = {
        "name": "diamond",
        "graph": "diamond.json",
        "synthesis": {"target_ip_cov": 1.0, "seed": 1, "min_traces": 20},
        "sampler": {"iterations": 20000, "thin": 20, "seeds": [1, 2]},
        "estimator": {"alpha": [1 / 3, 0.5]},
        "out": str(tmp_path / "runs"),
    }
    cfg.update(over)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def files_of(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_run_writes_every_artifact(tmp_path, capsys):
    cfg = small_config(tmp_path)
    assert main(["run", "--config", cfg]) == EXIT_OK
    out = tmp_path / "runs" / "diamond"
    names = set(files_of(out))
    assert {
        "traces.json", "chain-1.jsonl", "chain-2.jsonl", "marginals.csv",
        "estimate-0.3333.json", "estimate-0.3333.dot", "estimate-0.5.json",
        "estimate-mode.json", "estimate-mode.dot", "report.json",
    } <= names
    report = json.loads((out / "report.json").read_text())
    assert report["ip_cov"] == 1.0
    assert report["mode"]["f1"] == 1.0
    assert report["threshold"]["0.3333"]["f1"] == 1.0
    assert set(report["baselines"]) == {"majority", "heuristics"}
    summary = json.loads(capsys.readouterr().out)
    assert summary["report"].endswith("report.json")


def test_run_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    assert main(["run", "--config", small_config(a)]) == EXIT_OK
    assert main(["run", "--config", small_config(b)]) == EXIT_OK
    fa, fb = files_of(a / "runs"), files_of(b / "runs")
    assert fa.keys() == fb.keys() and fa == fb


def test_stepwise_commands(tmp_path):
    cfg = small_config(tmp_path)
    out = tmp_path / "step"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert main(["infer", "--config", cfg, "--out", str(out), "--seed", "5"]) == EXIT_OK
    assert (out / "chain-5.jsonl").exists()
    assert main(["estimate", "--config", cfg, "--out", str(out), "--seed", "5", "--alpha", "0.4"]) == EXIT_OK
    assert (out / "estimate-0.4.json").exists()
    assert main(["evaluate", "--config", cfg, "--out", str(out), "--estimate", str(out / "estimate-0.4.json")]) == EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["f1"] == 1.0 and rep["feasibility"] == 1.0
    for method in ("majority", "heuristics"):
        assert main(["baseline", "--config", cfg, "--out", str(out), "--method", method]) == EXIT_OK
        assert (out / f"baseline-{method}.json").exists()


def test_baseline_queue_jump(tmp_path):
    cfg = small_config(tmp_path, sampler={"iterations": 4000, "thin": 20, "seeds": [1]})
    out = tmp_path / "qj"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert main(["baseline", "--config", cfg, "--out", str(out), "--method", "qj"]) == EXIT_OK
    doc = json.loads((out / "baseline-qj.json").read_text())
    assert doc["method"] == "qj"


def test_execute_modes(tmp_path, capsys):
    est = tmp_path / "est.json"
    est.write_text(json.dumps({
        "nodes": ["CreateVpc", "CreateVSwitch", "CreateSecurityGroup", "RunInstances"],
        "edges": [["CreateVpc", "CreateVSwitch"], ["CreateVpc", "CreateSecurityGroup"], ["CreateVSwitch", "RunInstances"]],
    }))
    scen = data_path("s1_scenario.json")
    args = ["execute", "--scenario", scen, "--estimate", str(est), "--out", str(tmp_path)]
    assert main(args + ["--mode", "expert"]) == EXIT_OK
    expert = json.loads((tmp_path / "execution-expert.json").read_text())
    assert not expert["success"] and expert["warnings"]
    assert main(args + ["--mode", "hybrid"]) == EXIT_OK
    hybrid = json.loads((tmp_path / "execution-hybrid.json").read_text())
    assert hybrid["success"] and hybrid["n_fallbacks"] == 1


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nmae": "typo"}))
    assert main(["run", "--config", str(bad)]) == EXIT_CONFIG
    assert "unknown config key" in capsys.readouterr().err
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    cfg = small_config(tmp_path, estimator={"alpha": [1.5]})
    assert main(["run", "--config", cfg]) == EXIT_CONFIG
    cfg = small_config(tmp_path, sampler={"iterations": -1})
    assert main(["infer", "--config", cfg, "--traces", data_path("s1_traces.json")]) == EXIT_CONFIG
    assert main(["evaluate"]) == EXIT_CONFIG


def test_infeasible_requests_exit_3(tmp_path, capsys):
    cfg = small_config(tmp_path, synthesis={"target_ip_cov": 1.0, "max_attempts": 1, "seed": 0})
    assert main(["simulate", "--config", cfg]) == EXIT_INFEASIBLE
    assert "coverage" in capsys.readouterr().err.lower()
    names = [f"a{i}" for i in range(22)]
    traces = tmp_path / "wide.json"
    traces.write_text(json.dumps({"actions": names, "traces": [names]}))
    cfg = small_config(tmp_path, sampler={"iterations": 100, "seeds": [1]})
    assert main(["baseline", "--config", cfg, "--traces", str(traces), "--method", "qj"]) == EXIT_INFEASIBLE


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "traceorder", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "simulate" in res.stdout
    res = subprocess.run([sys.executable, "-m", "traceorder", "bogus"], capture_output=True, text=True)
    assert res.returncode == 2


@pytest.mark.parametrize("name", ["diamond_config.json"])
def test_bundled_config_parses(name):
    cfg = ExperimentConfig.load(data_path(name))
    assert cfg.seeds(None) == [1]
    assert cfg.sampler_config(1).iterations == 200_000
    assert cfg.alphas(None) == [pytest.approx(1 / 3)]
