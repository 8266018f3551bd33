import json

import numpy as np
import pytest

from mcvd_locate import cli, pipeline
from mcvd_locate.config import SceneConfig
from mcvd_locate.dataset import SampleRecord, save_dataset, split
from mcvd_locate.features import IDX_CENTROID, TOKEN_DIM_FLAT
from mcvd_locate.geometry import IDENTITY_QUAT, Pose, quat_from_axis_angle, tx_world_positions
from mcvd_locate.learn import mlp
from mcvd_locate.learn.scaler import Scaler
from mcvd_locate.learn.train import CountPrior, TrainedModel
from mcvd_locate.simulator import simulate_scene, write_log_csv


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def quick_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    assert run("gen-dataset", "--quick", "--n", 40, "--out", d) == 0
    assert run("train", "--dataset", d / "dataset", "--quick", "--epochs", 3, "--out", d) == 0
    return d


def test_validate_channel_quick(capsys, tmp_path):
    assert run("validate-channel", "--quick", "--out", tmp_path) == 0
    out = capsys.readouterr().out
    assert "absorbed fraction" in out and "chi-square" in out
    assert json.loads((tmp_path / "channel_check.json").read_text())["passed"]


def test_invalid_config_exit_2(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"scene": {"dt": 5.0, "T_pilot": 5.0}}))
    assert run("validate-channel", "--quick", "--config", cfg) == 2
    assert "dt" in capsys.readouterr().err
    assert run("validate-channel", "--config", tmp_path / "missing.json") == 2
    assert run("no-such-command") == 2


def test_gen_dataset_rows_and_determinism(tmp_path):
    for sub in ("a", "b"):
        assert run("gen-dataset", "--quick", "--n", 10, "--seed", 5, "--out", tmp_path / sub) == 0
    a, b = (tmp_path / s / "dataset.data.csv" for s in "ab")
    assert len(a.read_text().splitlines()) == 11
    assert a.read_bytes() == b.read_bytes()
    m = json.loads((tmp_path / "a" / "manifest.json").read_text())
    stage = m["stages"]["gen-dataset"]
    assert stage["config_hash"] == cli.config_hash(stage["config"])
    assert stage["seeds"] == {"seed": 5}
    assert sorted(p.name for p in (tmp_path / "a").iterdir()) == ["dataset.data.csv", "dataset.meta.json",
                                                                  "manifest.json"]


def test_cli_overrides_config_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 5, "seed": 9, "out": str(tmp_path / "r"), "scene": {"N": 100}}))
    assert run("gen-dataset", "--quick", "--config", cfg, "--n", 3) == 0
    meta = json.loads((tmp_path / "r" / "dataset.meta.json").read_text())
    assert meta["n_samples"] == 3 and meta["seed"] == 9 and meta["config"]["N"] == 100


def test_train_outputs(quick_run):
    hist = (quick_run / "history.csv").read_text().splitlines()
    assert len(hist) == 1 + 3
    m = json.loads((quick_run / "manifest.json").read_text())
    assert set(m["stages"]) == {"gen-dataset", "train"}
    assert sorted(m["stages"]["train"]["outputs"]) == ["history.csv", "model.json"]


def test_zero_epoch_model_has_initial_params(quick_run, tmp_path):
    assert run("train", "--dataset", quick_run / "dataset", "--epochs", 0, "--out", tmp_path) == 0
    model = TrainedModel.load(tmp_path / "model.json")
    for k, v in mlp.init_params(mlp.Architecture(), 0).items():
        np.testing.assert_array_equal(model.params[k], v)
    assert len((tmp_path / "history.csv").read_text().splitlines()) == 1


def test_tampered_split_is_leakage(quick_run, tmp_path, monkeypatch, capsys):
    def leaky(splits, **kw):
        X = np.vstack([splits.train["X"], splits.test["X"]])
        Y = np.vstack([pipeline.targets(splits.train), pipeline.targets(splits.test)])
        return Scaler().fit(X, Y)

    monkeypatch.setattr(pipeline, "fit_scaler", leaky)
    assert run("train", "--dataset", quick_run / "dataset", "--epochs", 1, "--out", tmp_path) == 1
    assert "leakage" in capsys.readouterr().err


def test_eval_report(quick_run, tmp_path, capsys):
    assert run("eval", "--dataset", quick_run / "dataset", "--model", quick_run / "model.json",
               "--out", tmp_path) == 0
    out = capsys.readouterr().out
    assert "MAE reduced by" in out and "RMSE reduced by" in out
    rep = json.loads((tmp_path / "metrics.json").read_text())
    assert {"model", "ridge", "ridge_alpha", "reduction"} <= set(rep)
    n_test = rep["model"]["n"]
    assert len((tmp_path / "scatter_model.csv").read_text().splitlines()) == 1 + 3 * n_test


def test_eval_rejects_mismatched_model(quick_run, tmp_path):
    text = (quick_run / "model.json").read_text()
    (tmp_path / "old.json").write_text(text.replace("mcvd-locate/v1", "mcvd-locate/v0"))
    assert run("eval", "--dataset", quick_run / "dataset", "--model", tmp_path / "old.json",
               "--out", tmp_path) == 2
    d = json.loads(text)
    d["scene"]["N"] = 999
    (tmp_path / "other.json").write_text(json.dumps(d))
    assert run("eval", "--dataset", quick_run / "dataset", "--model", tmp_path / "other.json",
               "--out", tmp_path) == 2


def test_plot_export(quick_run, tmp_path):
    assert run("plot-export", "--dataset", quick_run / "dataset", "--model", quick_run / "model.json",
               "--history", quick_run / "history.csv", "--out", tmp_path) == 0
    assert (tmp_path / "curves.csv").read_bytes() == (quick_run / "history.csv").read_bytes()
    n_test = len(split(np.arange(40))[2])
    assert len((tmp_path / "examples_3d.csv").read_text().splitlines()) == 1 + min(5, n_test) * 14


def passthrough_model(cfg, scaler):
    """Network whose position output is the (standardized) pilot centroid columns."""
    p = mlp.init_params(mlp.Architecture(), 0)
    for k in p:
        p[k] = np.zeros_like(p[k])
    for a in range(3):
        col = IDX_CENTROID.start + a
        p["W_e"][2 * a, col], p["W_e"][2 * a + 1, col] = 1.0, -1.0
        for W in ("W1", "W2"):
            p[W][2 * a, 2 * a], p[W][2 * a, 2 * a + 1] = 1.0, -1.0
            p[W][2 * a + 1, 2 * a], p[W][2 * a + 1, 2 * a + 1] = -1.0, 1.0
        p["W3"][a, 2 * a], p["W3"][a, 2 * a + 1] = 1.0, -1.0
    p["b3"][3:7] = IDENTITY_QUAT
    return TrainedModel(p, scaler, CountPrior(cfg.r, cfg.N), cfg)


def test_perfect_model_scores_one(tmp_path):
    cfg = SceneConfig()
    rng = np.random.default_rng(0)
    records = []
    for i in range(30):
        pos = rng.normal(size=3) * 30
        X = rng.normal(size=(6, TOKEN_DIM_FLAT))
        X[:, IDX_CENTROID] = pos
        tx = tx_world_positions(Pose(pos, IDENTITY_QUAT), cfg.layout)
        records.append(SampleRecord(i, X.reshape(-1), pos, np.array(IDENTITY_QUAT, dtype=float), tx, i))
    save_dataset(records, tmp_path / "syn", cfg, 0)
    train_ids = set(split(np.arange(30))[0].tolist())
    rows = [r for r in records if r.sample_id in train_ids]
    scaler = Scaler().fit(np.array([r.features for r in rows]),
                          np.array([np.concatenate([r.label_position, r.label_tx.reshape(-1)]) for r in rows]))
    passthrough_model(cfg, scaler).save(tmp_path / "perfect.json")
    assert run("eval", "--dataset", tmp_path / "syn", "--model", tmp_path / "perfect.json",
               "--out", tmp_path / "ev") == 0
    rep = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    assert rep["model"]["r2_mean"] == pytest.approx(1.0, abs=1e-12)


def test_predict_from_simulated_log(quick_run, tmp_path, capsys):
    model = TrainedModel.load(quick_run / "model.json")
    log = simulate_scene(model.scene, Pose((25, 5, -3), quat_from_axis_angle((0, 1, 1), 0.4)), 3)
    write_log_csv(log, tmp_path / "log.csv")
    capsys.readouterr()
    assert run("predict", "--model", quick_run / "model.json", "--log", tmp_path / "log.csv") == 0
    out = json.loads(capsys.readouterr().out)
    assert len(out["position"]) == 3 and len(out["tx_positions"]) == 6
    assert abs(np.linalg.norm(out["orientation"]) - 1) < 1e-9
    assert abs(sum(out["attention"]) - 1) < 1e-9
    assert not out["low_confidence"]


def test_predict_empty_log_is_low_confidence(quick_run, tmp_path, capsys):
    (tmp_path / "empty.csv").write_text("pilot_id,molecule_id,time_s,px,py,pz,absorber\n")
    capsys.readouterr()
    assert run("predict", "--model", quick_run / "model.json", "--log", tmp_path / "empty.csv") == 0
    out = json.loads(capsys.readouterr().out)
    assert out["low_confidence"] and out["node_b_events"] == 0


def test_predict_errors(quick_run, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("pilot_id,molecule_id,time_s,px,py,pz,absorber\n0,1,0.5,5,0,0,B\n0,2,oops,5,0,0,B\n")
    assert run("predict", "--model", quick_run / "model.json", "--log", bad) == 2
    assert "line 3" in capsys.readouterr().err
    log = simulate_scene(SceneConfig(N=50, T_pilot=0.5), Pose((25, 0, 0), IDENTITY_QUAT), 1)
    write_log_csv(log, tmp_path / "other.csv")
    assert run("predict", "--model", quick_run / "model.json", "--log", tmp_path / "other.csv") == 2
