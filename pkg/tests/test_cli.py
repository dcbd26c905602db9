import json

import pytest

from regpp import io as rio
from regpp.cli import run

SMALL = {"model": {"family": "hawkes", "num_types": 1, "mu": [0.5], "phi": [[0.4]]},
         "data": {"num_sequences": 8, "horizon": 30.0, "warp_resolution": 50},
         "registration": {"num_landmarks": 6, "outer_iters": 2}}


def config(tmp_path, **extra):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({**SMALL, **extra}))
    return str(path)


@pytest.fixture
def simulated(tmp_path):
    out = tmp_path / "sim"
    assert run(["simulate", "--config", config(tmp_path), "--seed", "3", "--out", str(out), "--threads", "1"]) == 0
    return out


def test_simulate_outputs(simulated):
    train, meta = rio.load_dataset(simulated / "train.jsonl")
    test, _ = rio.load_dataset(simulated / "test.jsonl")
    assert len(train) == 4 and len(test) == 4 and meta["C"] == 1
    assert len(rio.load_warps(simulated / "true_warps.json")) == 4
    assert rio.load_model(simulated / "truth.json").mu.tolist() == [0.5]


def test_simulate_is_deterministic(tmp_path, simulated):
    other = tmp_path / "again"
    run(["simulate", "--config", config(tmp_path), "--seed", "3", "--out", str(other), "--threads", "2"])
    for name in ("train.jsonl", "test.jsonl", "true_warps.json"):
        assert (other / name).read_bytes() == (simulated / name).read_bytes()


def test_register_evaluate_bootstrap(tmp_path, simulated, capsys):
    cfg = config(tmp_path, dataset=str(simulated / "train.jsonl"), truth=str(simulated / "truth.json"))
    out = tmp_path / "reg"
    assert run(["register", "--config", cfg, "--out", str(out), "--mode", "sequential"]) == 0
    assert "final_loss=" in capsys.readouterr().out
    result = rio.load_result(out / "result.json")
    cols, rows = rio.read_csv(out / "trace.csv")
    assert len(rows) == result.iterations + 1

    cfg = config(tmp_path, result=str(out / "result.json"), test_dataset=str(simulated / "test.jsonl"),
                 truth=str(simulated / "truth.json"), experiment={"bootstrap_replicates": 3})
    assert run(["evaluate", "--config", cfg, "--out", str(out)]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert {"holdout_loglik", "relative_error", "risk_over", "mean_distortion"} <= set(metrics)
    assert run(["bootstrap", "--config", cfg, "--out", str(out), "--threads", "1"]) == 0
    cols, rows = rio.read_csv(out / "bootstrap.csv")
    assert cols == ["parameter", "variance"] and len(rows) == 2


def test_stitch(tmp_path, simulated):
    cfg = config(tmp_path, dataset=str(simulated / "train.jsonl"), stitch_k=1)
    assert run(["stitch", "--config", cfg, "--out", str(tmp_path)]) == 0
    seqs, _ = rio.load_dataset(tmp_path / "stitched.jsonl")
    assert len(seqs) == 4 and all(s.horizon == 60.0 for s in seqs)


def test_distortion_experiment_command(tmp_path):
    cfg = config(tmp_path, experiment={"trials": 4, "sequences": 3})
    assert run(["experiment", "fig2", "--config", cfg, "--out", str(tmp_path)]) == 0
    cols, rows = rio.read_csv(tmp_path / "fig2.csv")
    assert cols == ["distortion", "relative_error"] and len(rows) == 4
    assert "# pearson=" in (tmp_path / "fig2.csv").read_text()


def test_usage_errors(tmp_path):
    assert run([]) == 2
    assert run(["bogus"]) == 2
    assert run(["register", "--config", config(tmp_path), "--out", str(tmp_path)]) == 2


def test_data_errors(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"format": "regpp-dataset", "version": 1, "C": 1}\n{"seq_id": "a", "T": 1.0, '
                   '"events": [{"t": 2.0, "c": 0}]}\n')
    assert run(["register", "--config", config(tmp_path, dataset=str(bad)), "--out", str(tmp_path)]) == 3
    assert run(["register", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 3
    (tmp_path / "c.json").write_text(json.dumps({"registration": {"gama": 1}}))
    assert run(["simulate", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path)]) == 3


def test_numeric_failure(tmp_path):
    data = tmp_path / "d.jsonl"
    data.write_text('{"format": "regpp-dataset", "version": 1, "C": 1}\n{"seq_id": "a", "T": 10.0, '
                    '"events": [{"t": 1.0, "c": 0}]}\n')
    truth = tmp_path / "truth.json"
    rio.save_model(rio.model_from_dict({"family": "poisson", "onsets": [5.0], "decays": [1.0],
                                        "amplitudes": [1.0]}), truth)
    cfg = config(tmp_path, dataset=str(data), truth=str(truth))
    assert run(["register", "--config", cfg, "--out", str(tmp_path)]) == 4
