import json

import pytest

from tumorpinn import cli, obsdata


def run(*argv):
    return cli.main([str(a) for a in argv])


def data_rows(path):
    return [ln for ln in path.read_text().splitlines() if not ln.startswith("#")][1:]


def test_generate_dataset(tmp_path, capsys):
    assert run("generate", "--v", 2.1, "--t-end", 1, "--n-data", 200, "--nx", 41, "--out", tmp_path) == 0
    assert len(data_rows(tmp_path / "dataset.csv")) == 200
    header = (tmp_path / "dataset.csv").read_text().splitlines()[:2]
    assert header[0] == "# tool: tumorpinn 0.1.0" and header[1].startswith("# config_hash: ")
    assert (tmp_path / "snapshot_t1.0000.f64").exists()
    meta = json.loads((tmp_path / "snapshot_t1.0000.f64.json").read_text())
    assert meta["coeffs"] == [2.1] and meta["t"] == 1.0


def test_generate_noisy_dataset_differs_from_clean(tmp_path):
    run("generate", "--v", 2.1, "--nx", 41, "--out", tmp_path / "clean")
    run("generate", "--v", 2.1, "--nx", 41, "--noise-eps", 5, "--noise-sigma", 0.2, "--out", tmp_path / "noisy")
    clean = obsdata.read_observations_csv(tmp_path / "clean/dataset.csv")
    noisy = obsdata.read_observations_csv(tmp_path / "noisy/dataset.csv")
    assert (clean.points == noisy.points).all()
    assert noisy.values.min() < 0 < abs(noisy.values - clean.values).max()


def test_generate_same_seed_is_reproducible(tmp_path):
    for d in ("a", "b"):
        run("generate", "--v", 1.5, "--nx", 31, "--seed", 7, "--out", tmp_path / d)
    assert (tmp_path / "a/dataset.csv").read_bytes() == (tmp_path / "b/dataset.csv").read_bytes()


def test_generate_without_rate_is_usage_error(tmp_path, capsys):
    assert run("generate", "--out", tmp_path) == 2
    assert "usage" in capsys.readouterr().err


def test_bad_flag_exits_2():
    with pytest.raises(SystemExit) as e:
        run("generate", "--bogus")
    assert e.value.code == 2


def test_train_preset_and_outputs(tmp_path, capsys):
    assert run("train", "--preset", "real-bce", "--epochs", 3, "--out", tmp_path) == 0
    final = json.loads((tmp_path / "final.json").read_text())
    assert final["config"]["weights"] == [1, 1, 1, 5] and final["mode"] == "constant_v"
    assert "v=" in capsys.readouterr().out


def test_train_from_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("preset = synthetic-v2.0\nepochs = 2\nsolver_nx = 41\n")
    assert run("train", "--config", cfg, "--out", tmp_path / "out") == 0
    final = json.loads((tmp_path / "out/final.json").read_text())
    assert final["config"]["weights"] == [10, 1, 1, 100] and final["config"]["experiment"] == "synthetic_mse"


def test_train_spatial_has_two_parameters(tmp_path):
    assert run("train", "--preset", "spatial", "--epochs", 2, "--out", tmp_path) == 0
    final = json.loads((tmp_path / "final.json").read_text())
    assert set(final["params"]) == {"v1", "v2"} and final["config"]["weights"] == [1, 1, 1, 4]


def test_train_config_error_exits_2(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("epochs = 5\nmomentum = 0.9\n")
    assert run("train", "--config", cfg, "--out", tmp_path) == 2
    assert "line 2" in capsys.readouterr().err


def test_train_seed_is_bit_reproducible(tmp_path):
    for d in ("a", "b"):
        run("train", "--preset", "real-bce", "--epochs", 3, "--seed", 5, "--out", tmp_path / d)
    assert (tmp_path / "a/trajectory.csv").read_bytes() == (tmp_path / "b/trajectory.csv").read_bytes()


def test_multi_start(tmp_path, capsys):
    assert run("multi-start", "--preset", "real-bce", "--epochs", 2, "--guesses", "1,2", "--out", tmp_path) == 0
    rows = data_rows(tmp_path / "multi_start.csv")
    assert len(rows) == 2 and rows[0].startswith("1.0,")
    assert "spread" in capsys.readouterr().out


def test_noise_sweep_empty_pairs_exit_2(tmp_path):
    assert run("noise-sweep", "--pairs", "", "--out", tmp_path) == 2


def test_noise_sweep_single_pair(tmp_path):
    assert run("noise-sweep", "--pairs", "0.5:0.2", "--epochs", 2, "--out", tmp_path) == 0
    summary = data_rows(tmp_path / "summary.csv")
    assert len(summary) == 1 and summary[0].startswith("0.5,0.2,")
    assert (tmp_path / "error_e0.5_s0.2.csv").exists()


def test_predict_and_radius(tmp_path, capsys):
    assert run("predict", "--v", 3.1264, "--times", "1.0", "--nx", 101, "--out", tmp_path / "pred.csv") == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "t,radius,observed,relative_error" and out[1].startswith("1,")
    assert data_rows(tmp_path / "pred.csv")[0].split(",")[2] == "2.5"
    run("generate", "--v", 3.1264, "--nx", 101, "--times", "1.0", "--out", tmp_path / "g")
    capsys.readouterr()
    assert run("radius", tmp_path / "g/snapshot_t1.0000.f64") == 0
    t, r = capsys.readouterr().out.strip().split(",")
    assert float(r) == pytest.approx(float(out[1].split(",")[1]), rel=1e-5)


def test_predict_from_final_json(tmp_path, capsys):
    run("train", "--preset", "real-bce", "--epochs", 1, "--out", tmp_path)
    capsys.readouterr()
    assert run("predict", "--final", tmp_path / "final.json", "--times", "0.25", "--nx", 61) == 0
    assert capsys.readouterr().out.splitlines()[1].startswith("0.25,")


def test_radius_missing_file_exits_1(tmp_path):
    assert run("radius", tmp_path / "none.f64") == 1


def test_validate(capsys):
    assert run("validate") == 0
    assert capsys.readouterr().out.count("PASS") == 5
