"""
Command-line surface: commands, manifests, overwrite protection and exit codes.
"""

import json
import os

import pandas as pd
import pytest
from click.testing import CliRunner

import app
from core.errors import DivergenceError

GENERATOR = {"name": "cli-small", "n_nodes": 14, "feature_dim": 1, "horizon": 5, "topology_params": {"p": 0.5},
             "p_add": 0.01, "p_drop": 0.02, "seed": 5, "initial_low": 0.5, "initial_high": 1.5}
TRAINING = {"epochs": 2, "learning_rate": 1e-2, "window": 3,
            "state": {"d_e": 4, "n_heads": 2, "d_k": 2, "gcn_hidden": 4, "d_ff": 8, "ode_hidden": 4},
            "topo": {"d_z": 4, "L_hops": 1, "d_h": 4, "d_att": 4, "d_q": 4, "mlp_hidden": 8}}


@pytest.fixture
def workspace(tmp_path):
    (tmp_path / "gen.json").write_text(json.dumps(GENERATOR), encoding="utf-8")
    (tmp_path / "train.json").write_text(json.dumps(TRAINING), encoding="utf-8")
    return tmp_path


def invoke(*args):
    return CliRunner().invoke(app.cli, ["--quiet", *map(str, args)])


def generated(workspace):
    out = workspace / "data"
    result = invoke("generate", "--config", workspace / "gen.json", "--out", out)
    assert result.exit_code == 0, result.output
    return out


def trained(workspace, data):
    ckpt = workspace / "ckpt.json"
    result = invoke("train", "--data", data, "--config", workspace / "train.json", "--seed", 1, "--out", ckpt)
    assert result.exit_code == 0, result.output
    return ckpt


def test_version():
    result = CliRunner().invoke(app.cli, ["--version"])
    assert result.exit_code == 0
    assert app.__version__ in result.output


def test_generate_writes_dataset_and_manifest(workspace):
    out = generated(workspace)
    assert {"meta.json", "snapshots.jsonl", "manifest.json"} <= set(os.listdir(out))
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["command"] == "generate"
    assert manifest["inputs"]["dataset"] == app.dataset_digest(str(out))
    assert manifest["config"]["seed"] == 5
    assert manifest["rss_bytes"] > 0


def test_generate_is_reproducible(workspace):
    first = generated(workspace)
    second = workspace / "again"
    assert invoke("generate", "--config", workspace / "gen.json", "--out", second).exit_code == 0
    assert app.dataset_digest(str(first)) == app.dataset_digest(str(second))


def test_generate_with_preset_and_seed_override(workspace):
    out = workspace / "preset"
    result = invoke("generate", "--preset", "sparse-collapse", "--seed", 7, "--out", out)
    assert result.exit_code == 0, result.output
    meta = json.loads((out / "meta.json").read_text(encoding="utf-8"))
    assert meta["seed"] == 7 and meta["n_nodes"] == 60


def test_generate_needs_exactly_one_source(workspace):
    result = invoke("generate", "--out", workspace / "none")
    assert result.exit_code == 1
    result = invoke("generate", "--preset", "resilient-demo", "--config", workspace / "gen.json",
                    "--out", workspace / "both")
    assert result.exit_code == 1


def test_existing_output_needs_force(workspace):
    out = generated(workspace)
    refused = invoke("generate", "--config", workspace / "gen.json", "--out", out)
    assert refused.exit_code == 1
    assert "--force" in refused.output
    forced = invoke("generate", "--config", workspace / "gen.json", "--out", out, "--force")
    assert forced.exit_code == 0


def test_train_eval_attack_pipeline(workspace):
    data = generated(workspace)
    ckpt = trained(workspace, data)
    payload = json.loads(ckpt.read_text(encoding="utf-8"))
    assert payload["version"] == 1
    assert payload["config"]["seed"] == 1
    assert len(payload["history"]["loss"]) == 2
    assert (workspace / "ckpt.manifest.json").exists()

    metrics = workspace / "metrics.json"
    result = invoke("eval", "--ckpt", ckpt, "--data", data, "--seeds", "0,1", "--out", metrics)
    assert result.exit_code == 0, result.output
    report = json.loads(metrics.read_text(encoding="utf-8"))
    assert report["seeds"] == [0, 1]
    for key in ("acc", "f1", "precision", "recall", "mae", "rmse", "rmse_paper"):
        assert set(report["metrics"][key]) >= {"per_seed", "mean", "std"}

    curves = workspace / "curves.csv"
    result = invoke("attack", "--data", data, "--fractions", "0.1,0.5", "--t-end", 2, "--dt", 0.05,
                    "--out", curves)
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(curves)
    assert list(frame.columns) == ["fraction", "t", "mean_state", "std_state"]
    verdicts = json.loads((workspace / "curves.verdicts.json").read_text(encoding="utf-8"))
    assert [v["fraction"] for v in verdicts["verdicts"]] == [0.1, 0.5]

    rollout = workspace / "rollout.csv"
    result = invoke("attack", "--data", data, "--ckpt", ckpt, "--fractions", "0.2", "--steps", 3, "--out", rollout)
    assert result.exit_code == 0, result.output
    assert json.loads((workspace / "rollout.verdicts.json").read_text(encoding="utf-8"))["subject"] == "checkpoint"


def test_benchmark(workspace):
    data = generated(workspace)
    out = workspace / "bench.json"
    result = invoke("benchmark", "--data", data, "--config", workspace / "train.json", "--seeds", "0,1",
                    "--epochs", 1, "--out", out)
    assert result.exit_code == 0, result.output
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["seeds"] == [0, 1]
    assert "baselines" in report


def test_malformed_config_reports_position(workspace):
    data = generated(workspace)
    bad = workspace / "bad.json"
    bad.write_text('{"epochs": 2,\n "seed": ,\n}', encoding="utf-8")
    result = invoke("train", "--data", data, "--config", bad, "--out", workspace / "x.json")
    assert result.exit_code == 1
    assert "line 2" in result.output


def test_train_without_dataset_is_usage_error(workspace):
    result = invoke("train", "--config", workspace / "train.json", "--out", workspace / "x.json")
    assert result.exit_code == 1


def test_bad_fractions_are_rejected(workspace):
    data = generated(workspace)
    result = invoke("attack", "--data", data, "--fractions", "0.1,1.5", "--out", workspace / "c.csv")
    assert result.exit_code == 1


def test_incompatible_checkpoint_exits_with_one(workspace):
    data = generated(workspace)
    ckpt = trained(workspace, data)
    other = workspace / "other"
    assert invoke("generate", "--preset", "sparse-collapse", "--out", other).exit_code == 0
    result = invoke("eval", "--ckpt", ckpt, "--data", other, "--out", workspace / "m.json")
    assert result.exit_code == 1
    assert "N=14" in result.output


def test_divergence_exits_with_two(workspace, monkeypatch):
    data = generated(workspace)

    def diverge(dataset, config):
        raise DivergenceError("training loss is not finite", epoch=3)

    monkeypatch.setattr(app, "train", diverge)
    result = invoke("train", "--data", data, "--config", workspace / "train.json", "--out", workspace / "x.json")
    assert result.exit_code == 2
    assert "epoch=3" in result.output
