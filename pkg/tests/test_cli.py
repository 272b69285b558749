import json
import subprocess
import sys

import numpy as np
import pytest

from cgfm import cli
from cgfm.dataio import read_matrix_csv, write_matrix_csv
from cgfm.netcore import VelocityNet

FAST = ["--history", "24", "--horizon", "12", "--hidden", "16", "16", "--time-freqs", "2", "--max-steps", "60", "--val-every", "20", "--steps", "4"]


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def trained(tmp_path, sinmix_csv):
    out = tmp_path / "run"
    assert run("train", "--data", sinmix_csv, *FAST, "--sigma", "0.5", "--out", out) == 0
    return out


def test_train_artifacts(trained):
    names = {p.name for p in trained.iterdir()}
    assert {"config.resolved", "params.bin", "train_log.csv", "norm_stats.json", "aux.csv"} <= names
    cfg = json.loads((trained / "config.resolved").read_text())
    assert cfg["sigma"] == 0.5 and cfg["hidden"] == [16, 16] and cfg["scheduler"] == "poly:3"
    stats = json.loads((trained / "norm_stats.json").read_text())
    assert stats["channels"] == ["a", "b"]


def test_round_trip_and_rerun_is_byte_identical(trained, tmp_path):
    assert run("forecast", "--run", trained) == 0
    assert run("evaluate", trained) == 0
    report = json.loads((trained / "report.json").read_text())
    assert report["n_windows"] > 0 and report["fingerprint"]["steps"] == 4

    again = tmp_path / "again"
    assert run("train", "--config", trained / "config.resolved", "--out", again) == 0
    assert run("forecast", "--run", again) == 0
    assert run("evaluate", again) == 0
    for name in ("params.bin", "forecast.csv", "report.json", "aux.csv", "norm_stats.json"):
        assert (trained / name).read_bytes() == (again / name).read_bytes(), name


def test_config_file_and_flag_override(tmp_path, sinmix_csv):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"data": str(sinmix_csv), "history": 24, "horizon": 12, "hidden": [8], "max_steps": 5, "seed": 3}))
    out = tmp_path / "o"
    assert run("train", "--config", conf, "--seed", "9", "--source", "noise", "--out", out) == 0
    cfg = json.loads((out / "config.resolved").read_text())
    assert cfg["seed"] == 9 and cfg["source"] == "noise" and cfg["hidden"] == [8]
    assert not (out / "aux.csv").exists()


def test_resolved_config_written_before_work(tmp_path):
    out = tmp_path / "o"
    assert run("train", "--data", tmp_path / "missing.csv", "--out", out) == 1
    assert json.loads((out / "config.resolved").read_text())["data"].endswith("missing.csv")


def test_missing_data_is_usage_error(tmp_path, capsys):
    assert run("train", "--out", tmp_path / "o") == 2
    assert "data" in capsys.readouterr().err


def test_poly0_is_config_error(tmp_path, sinmix_csv, capsys):
    assert run("train", "--data", sinmix_csv, "--scheduler", "poly:0", "--out", tmp_path / "o") == 2
    assert "n >= 2" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, sinmix_csv):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"data": str(sinmix_csv), "learning_rate": 0.1}))
    assert run("train", "--config", conf) == 2


def test_bad_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        run("train", "--target", "velocity")
    assert exc.value.code == 2


def test_threads_env_caps(tmp_path, sinmix_csv, monkeypatch):
    monkeypatch.setenv("CGFM_THREADS", "1")
    out = tmp_path / "o"
    assert run("train", "--data", sinmix_csv, *FAST, "--max-steps", "2", "--threads", "4", "--out", out) == 0
    assert json.loads((out / "config.resolved").read_text())["threads"] == 1


def test_forecast_without_params(trained, capsys):
    (trained / "params.bin").unlink()
    assert run("forecast", "--run", trained) == 2
    assert "params" in capsys.readouterr().err


def test_forecast_corrupt_params(trained):
    (trained / "params.bin").write_bytes(b"garbage")
    assert run("forecast", "--run", trained) == 1


def test_forecast_single_step(trained):
    out = trained / "n1.csv"
    assert run("forecast", "--run", trained, "--steps", "1", "--out", out) == 0
    assert run("evaluate", trained, "--forecast", "n1.csv") == 0
    rep = json.loads((trained / "report.json").read_text())
    assert rep["fingerprint"]["steps"] == 1 and np.isfinite(rep["mse"])


def test_evaluate_perfect_forecast(trained):
    cfg = cli.RunConfig.from_file(trained / "config.resolved")
    ds = cli.load_dataset(cfg)
    idx = ds.indices("test")
    write_matrix_csv(trained / "truth.csv", idx, ds.futures(idx), ds.channels, ds.horizon)
    assert run("evaluate", trained, "--forecast", "truth.csv") == 0
    rep = json.loads((trained / "report.json").read_text())
    assert rep["mse"] == 0.0 and rep["mae"] == 0.0


def test_evaluate_shape_mismatch(trained):
    write_matrix_csv(trained / "bad.csv", [0, 1], np.zeros((2, 5)), 1, 5)
    assert run("evaluate", trained, "--forecast", "bad.csv") == 1


def test_evaluate_multi_seed_directory(tmp_path, sinmix_csv):
    root = tmp_path / "seeds"
    for seed in (0, 1, 2):
        out = root / f"s{seed}"
        assert run("train", "--data", sinmix_csv, *FAST, "--max-steps", "10", "--seed", seed, "--out", out) == 0
        assert run("forecast", "--run", out) == 0
    assert run("evaluate", root) == 0
    agg = json.loads((root / "aggregate.json").read_text())
    mses = [json.loads((root / f"s{s}" / "report.json").read_text())["mse"] for s in (0, 1, 2)]
    assert agg["n"] == 3 and agg["seeds"] == [0, 1, 2]
    assert agg["mse"]["mean"] == pytest.approx(np.mean(mses)) and agg["mse"]["std"] == pytest.approx(np.std(mses, ddof=1))


def test_evaluate_mixed_configs_refused(tmp_path, sinmix_csv):
    runs = []
    for sched in ("condot", "vp"):
        out = tmp_path / sched
        assert run("train", "--data", sinmix_csv, *FAST, "--max-steps", "3", "--scheduler", sched, "--out", out) == 0
        assert run("forecast", "--run", out) == 0
        runs.append(out)
    assert run("evaluate", *runs, "--out", tmp_path / "agg.json") == 1


def test_verify_clean(tmp_path):
    out = tmp_path / "v.json"
    assert run("verify", "--out", out) == 0
    res = json.loads(out.read_text())
    assert len(res) == 7 and all(r["passed"] for r in res)


def test_verify_detects_corrupted_backward(monkeypatch, capsys):
    real = VelocityNet.backward_cache

    def broken(self, cache, upstream):
        grads = real(self, cache, upstream)
        grads["W0"] = grads["W0"] * 1.01
        return grads

    monkeypatch.setattr(VelocityNet, "backward_cache", broken)
    assert run("verify", "--checks", "gradient_oracle") == 3
    assert "[FAIL] gradient_oracle" in capsys.readouterr().out


def test_verify_budget(capsys):
    assert run("verify", "--budget", "0") == 0
    out = capsys.readouterr().out
    assert out.count("[SKIP]") == 7


def test_pca_line(tmp_path):
    s = np.linspace(-1, 1, 30)
    write_matrix_csv(tmp_path / "f.csv", np.arange(30), np.outer(s, [1.0, 2.0, -0.5, 3.0]), 2, 2)
    assert run("pca", "--forecast", tmp_path / "f.csv", "--out", tmp_path / "p.csv") == 0
    text = (tmp_path / "p.csv").read_text()
    assert text.splitlines()[0] == "idx,pc1,pc2"
    rows = np.array([list(map(float, r.split(","))) for r in text.splitlines()[1:]])
    assert rows[:, 1].var() / (rows[:, 1].var() + rows[:, 2].var()) > 0.999
    assert run("pca", "--forecast", tmp_path / "f.csv", "--out", tmp_path / "q.csv") == 0
    assert (tmp_path / "q.csv").read_bytes() == text.encode()


def test_pca_too_few_rows(tmp_path):
    write_matrix_csv(tmp_path / "f.csv", [0, 1], np.eye(2), 1, 2)
    assert run("pca", "--forecast", tmp_path / "f.csv", "--out", tmp_path / "p.csv") == 1


def test_inputs_not_mutated(trained, sinmix_csv):
    before = {p: p.read_bytes() for p in (sinmix_csv, trained / "params.bin", trained / "aux.csv")}
    assert run("forecast", "--run", trained) == 0
    assert all(p.read_bytes() == b for p, b in before.items())


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "cgfm", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "forecast" in res.stdout
