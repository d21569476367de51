import csv
import json
import logging

import numpy as np
import pytest

from cpcs_attack.cli import ConfigError, config_hash, main, resolve_config
from cpcs_attack.seeding import rng_for
from cpcs_attack.voltage import synthesize_traces, synthetic_B

SOLVE = {"scenario": "ieee9_bus5", "detector": {"eta": 5}, "grid": {"d": 21}, "solver": {"horizon": 10}}


def write(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


def rows(path):
    with open(path) as fh:
        return [r for r in csv.reader(fh) if r and not r[0].startswith("#")]


def header_hash(path):
    first = open(path).readline()
    assert first.startswith("# config_sha256=")
    return first.strip().split("=", 1)[1]


def run(tmp_path, cmd, cfg, out="out", *extra):
    return main([cmd, "--config", write(tmp_path / f"{out}.json", cfg), "--out", str(tmp_path / out), *extra])


def test_resolve_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        resolve_config({"bogus": 1})
    with pytest.raises(ConfigError):
        resolve_config({"solver": {"kind": "annealing"}})
    with pytest.raises(ConfigError):
        resolve_config({"grid": {"d": 0}})


def test_config_hash_ignores_output_dir():
    a = resolve_config(SOLVE, out="x")
    b = resolve_config(SOLVE, out="y")
    assert config_hash(a) == config_hash(b)
    assert config_hash(resolve_config(SOLVE, seed=1)) != config_hash(resolve_config(SOLVE, seed=2))


def test_bad_config_exit_codes(tmp_path, capsys):
    assert main(["solve-mdp", "--config", write(tmp_path / "b.json", {"bogus": 1}), "--out", str(tmp_path / "o")]) == 2
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["solve-mdp", "--config", str(tmp_path / "broken.json")]) == 2
    assert "error" in capsys.readouterr().err


def test_solve_mdp_is_byte_identical_across_runs(tmp_path):
    assert run(tmp_path, "solve-mdp", SOLVE, "a") == 0
    assert run(tmp_path, "solve-mdp", SOLVE, "b") == 0
    for name in ("policy.csv", "policy.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    body = rows(tmp_path / "a" / "policy.csv")
    assert body[0] == ["center_1", "action_index", "a_1", "value"] and len(body) == 22
    assert "time" in (tmp_path / "a" / "run.log").read_text()
    assert "time" not in (tmp_path / "a" / "policy.csv").read_text()


def test_kernel_cache_is_reused(tmp_path, caplog):
    cache = str(tmp_path / "kc")
    with caplog.at_level(logging.INFO):
        assert run(tmp_path, "solve-mdp", SOLVE, "a", "--kernel-cache", cache) == 0
        assert run(tmp_path, "solve-mdp", SOLVE, "b", "--kernel-cache", cache) == 0
    assert "kernel served from cache" in caplog.text
    assert (tmp_path / "a" / "policy.json").read_bytes() == (tmp_path / "b" / "policy.json").read_bytes()


def test_single_cell_grid(tmp_path):
    assert run(tmp_path, "solve-mdp", {"scenario": "ieee9_bus5", "grid": {"d": 1}}) == 0
    assert len(rows(tmp_path / "out" / "policy.csv")) == 2


def test_train_zero_episodes_gives_empty_curve(tmp_path):
    cfg = {**SOLVE, "solver": {"kind": "qlfa", "episodes": 0}}
    assert run(tmp_path, "train", cfg) == 0
    assert rows(tmp_path / "out" / "learning_curve.csv") == [["episodes", "env_steps", "eval_time_average", "eval_se"]]


@pytest.mark.parametrize("kind,artefact", [("q_tabular", "policy.json"), ("qlfa", "policy.json"), ("qnlfa", "policy.bin")])
def test_train_writes_policy_and_curve(tmp_path, kind, artefact):
    cfg = {**SOLVE, "solver": {"kind": kind, "episodes": 20, "eval_every": 10, "eval_runs": 50, "batch": 8}}
    assert run(tmp_path, "train", cfg) == 0
    assert (tmp_path / "out" / artefact).exists()
    curve = rows(tmp_path / "out" / "learning_curve.csv")[1:]
    assert [int(r[0]) for r in curve] == [10, 20]
    # the trained artefact drives a closed-loop simulation
    sim = {"scenario": "ieee9_bus5", "detector": {"eta": 5}, "grid": {"d": 21}, "horizon": 5, "runs": 3,
           "attack": {"kind": "policy", "policy": str(tmp_path / "out" / artefact)}}
    assert run(tmp_path, "simulate", sim, "sim") == 0


def test_simulate_writes_one_csv_per_run(tmp_path):
    assert run(tmp_path, "solve-mdp", SOLVE) == 0
    cfg = {**SOLVE, "horizon": 10, "runs": 7, "attack": {"kind": "policy", "policy": "policy.json"}}
    assert run(tmp_path, "simulate", cfg, "out") == 0
    out = tmp_path / "out"
    assert len(list((out / "trajectories").glob("run_*.csv"))) == 7
    summ = rows(out / "summary.csv")
    assert summ[0] == ["t", "mean_x_1", "mean_xhat_1", "detection", "x_deviation", "xhat_deviation"]
    assert len(summ) == 12
    assert header_hash(out / "summary.csv") == header_hash(out / "trajectories" / "run_00000.csv")


def test_simulate_without_policy_fails(tmp_path):
    cfg = {"scenario": "ieee9_bus5", "attack": {"kind": "policy", "policy": str(tmp_path / "missing.json")}}
    assert run(tmp_path, "simulate", cfg) == 2


def test_compare_attacks(tmp_path):
    cfg = {"scenario": "ieee9_bus5", "horizon": 10, "runs": 50,
           "compare": [{"name": "none", "kind": "none"}, {"name": "ramp", "kind": "ramp", "slope": 0.01}]}
    assert run(tmp_path, "compare-attacks", cfg) == 0
    comp = rows(tmp_path / "out" / "compare.csv")
    assert [r[0] for r in comp[1:]] == ["none", "ramp"]
    assert float(comp[2][1]) > float(comp[1][1])
    assert rows(tmp_path / "out" / "detection.csv")[0] == ["t", "none", "ramp"]


def test_fp_md_sweep_boundary_rows(tmp_path):
    cfg = {"model": {"A": [[1]], "B": [[1]], "C": [[1]], "Q": [[1]], "R": [[10]]},
           "sweep": {"eta": [0, 10], "sigma_mit": [0, 15], "horizon": 20, "attack": 10.0, "mc_runs": 0}}
    assert run(tmp_path, "fp-md-sweep", cfg) == 0
    body = rows(tmp_path / "out" / "sweep.csv")
    assert body[0] == ["eta", "sigma_mit", "fp_cost", "md_cost", "pruned_mass", "mc_crosscheck_relerr"]
    table = {(float(r[0]), float(r[1])): r for r in body[1:]}
    assert abs(float(table[0.0, 0.0][2])) < 1e-6 and abs(float(table[10.0, 0.0][2])) < 1e-6
    assert float(table[0.0, 0.0][3]) == 0.0 and float(table[0.0, 15.0][3]) == 0.0
    assert float(table[0.0, 15.0][2]) > float(table[10.0, 15.0][2]) > 0


def test_fp_md_sweep_workers_match_serial(tmp_path):
    cfg = {"model": {"A": [[1]], "B": [[1]], "C": [[1]], "Q": [[1]], "R": [[10]]},
           "sweep": {"eta": [5, 10], "sigma_mit": [5], "horizon": 10, "mc_runs": 200}}
    assert run(tmp_path, "fp-md-sweep", cfg, "s") == 0
    assert main(["fp-md-sweep", "--config", str(tmp_path / "s.json"), "--out", str(tmp_path / "p"), "--workers", "2"]) == 0
    assert (tmp_path / "s" / "sweep.csv").read_bytes() == (tmp_path / "p" / "sweep.csv").read_bytes()


def test_fp_md_sweep_empty_grid(tmp_path):
    cfg = {"model": {"A": [[1]], "B": [[1]], "C": [[1]], "Q": [[1]], "R": [[10]]}, "sweep": {"eta": [], "sigma_mit": [5]}}
    assert run(tmp_path, "fp-md-sweep", cfg) == 0
    assert len(rows(tmp_path / "out" / "sweep.csv")) == 1


def test_estimate_b_round_trip(tmp_path):
    B = synthetic_B(3, rng_for(0))
    synthesize_traces(B, 60, 0.0, rng_for(1)).to_csv(tmp_path / "tr.csv")
    assert main(["estimate-b", "--traces", str(tmp_path / "tr.csv"), "--out", str(tmp_path / "o")]) == 0
    got = json.loads((tmp_path / "o" / "B.json").read_text())
    assert np.max(np.abs(np.array(got["B"]) - B)) < 1e-10 and got["report"]["rank"] == 3


def test_estimate_b_errors(tmp_path):
    synthesize_traces(synthetic_B(3, rng_for(0)), 4, 0.0, rng_for(1)).to_csv(tmp_path / "few.csv")
    assert main(["estimate-b", "--traces", str(tmp_path / "few.csv"), "--out", str(tmp_path / "o")]) == 2
    (tmp_path / "bad.csv").write_text("x_before_1,x_after_1,u_1\n1,2\n")
    assert main(["estimate-b", "--traces", str(tmp_path / "bad.csv"), "--out", str(tmp_path / "o")]) == 2
    assert main(["estimate-b", "--out", str(tmp_path / "o")]) == 2
