import json
from importlib import resources

from vqpolicy.cli import main
from vqpolicy.policy import policy_to_dict
from vqpolicy.harness import default_baseline_policy


def test_oracle_mis(tmp_path, capsys):
    graph = tmp_path / "k3.txt"
    graph.write_text("3 3\n0 1\n1 2\n0 2\n")
    assert main(["oracle", "mis", "--graph", str(graph)]) == 0
    out = capsys.readouterr().out
    assert "size 1" in out


def test_oracle_tsp_bundled_instance(tmp_path, capsys):
    vrp = tmp_path / "E-n13-k4.vrp"
    vrp.write_text(resources.files("vqpolicy.data").joinpath("E-n13-k4.vrp").read_text())
    assert main(["oracle", "tsp", "--vrp", str(vrp)]) == 0
    out = capsys.readouterr().out
    assert "exact tour cost" in out


def test_oracle_missing_file_is_config_error(tmp_path, capsys):
    assert main(["oracle", "mis", "--graph", str(tmp_path / "nope.txt")]) == 1
    assert "configuration error" in capsys.readouterr().err


def test_gen_instances_mis(tmp_path, capsys):
    assert main(["gen-instances", "--kind", "mis", "--out", str(tmp_path / "mis"), "--sizes", "6,8", "--count", "2", "--seed", "5"]) == 0
    config = json.loads((tmp_path / "mis" / "mis_run.json").read_text())
    assert len(config["stages"]) == 2
    for stage in config["stages"]:
        for fname in stage["instances"]:
            assert (tmp_path / "mis" / fname).exists()


def test_gen_instances_cvrp(tmp_path):
    assert main(["gen-instances", "--kind", "cvrp", "--out", str(tmp_path / "cvrp"), "--sizes", "6", "--count", "1", "--seed", "5"]) == 0
    config = json.loads((tmp_path / "cvrp" / "cvrp_run.json").read_text())
    names = [s["name"] for s in config["stages"]]
    assert names[-1] == "e-n13-k4"  # bundled held-out stage
    vrp_files = list((tmp_path / "cvrp").glob("*.vrp"))
    assert any(p.name == "E-n13-k4.vrp" for p in vrp_files)
    for p in (tmp_path / "cvrp").glob("cvrp_*.vrp"):
        assert p.with_suffix(".ref.json").exists()


def test_run_eval_report_cycle(tmp_path, capsys):
    out = tmp_path / "mis"
    assert main(["gen-instances", "--kind", "mis", "--out", str(out), "--sizes", "5", "--count", "2", "--seed", "3"]) == 0
    config_path = out / "mis_run.json"
    config = json.loads(config_path.read_text())
    config["stages"][0]["proposals_per_stage"] = 2
    config["stages"][0]["promote_k"] = 1
    config["stages"][0]["scout_budget"] = {"maxiter": 10, "sampler_shots": 64}
    config["stages"][0]["confirm_budget"] = {"maxiter": 20, "sampler_shots": 64}
    config_path.write_text(json.dumps(config))

    run_dir = tmp_path / "run"
    assert main(["run", "--config", str(config_path), "--out", str(run_dir), "--seed", "2"]) == 0
    out_text = capsys.readouterr().out
    assert "locked score" in out_text
    assert (run_dir / "events.jsonl").exists()
    assert (run_dir / "reports" / "summary.csv").exists()
    assert (run_dir / "reports" / "overview.png").exists()

    policy_path = tmp_path / "baseline.json"
    policy_path.write_text(json.dumps(policy_to_dict(default_baseline_policy())))
    assert main(["eval", "--policy", str(policy_path), "--stage", "mis-5", "--config", str(config_path), "--seed", "2"]) == 0
    assert "suite-average gap" in capsys.readouterr().out

    assert main(["report", "--run", str(run_dir)]) == 0
    assert "summary" in capsys.readouterr().out


def test_eval_unknown_stage_is_config_error(tmp_path, capsys):
    out = tmp_path / "mis"
    main(["gen-instances", "--kind", "mis", "--out", str(out), "--sizes", "5", "--count", "1", "--seed", "3"])
    policy_path = tmp_path / "p.json"
    policy_path.write_text(json.dumps(policy_to_dict(default_baseline_policy())))
    code = main(["eval", "--policy", str(policy_path), "--stage", "nope", "--config", str(out / "mis_run.json")])
    assert code == 1
    assert "unknown stage" in capsys.readouterr().err


def test_report_on_missing_run_is_config_error(tmp_path, capsys):
    assert main(["report", "--run", str(tmp_path / "nothing")]) == 1
