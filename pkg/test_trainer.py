"""
Joint loss, negative sampling, Adam, deterministic training and checkpoints.
"""

import json
import math

import numpy as np
import pytest

from ai.model import ResilienceNet, make_window
from ai.physics import PhysicsParams
from ai.state_encoder import StateEncoderConfig
from ai.topo_encoder import TopoEncoderConfig
from ai.trainer import (CHECKPOINT_VERSION, AdamState, TrainConfig, exhaustive_topology_loss, joint_loss,
                        load_checkpoint, optimizer_step, sample_negatives, save_checkpoint, topology_loss, train,
                        resolve_physics, training_windows, window_losses)
from core.errors import ConfigError, DatasetError, DivergenceError
from core.graph import Graph
from core.nn import check_gradients
from core.tensor import Tensor, mul, tsum
from simulation.synthetic import GeneratorConfig, generate

TINY_STATE = {"d_e": 4, "n_heads": 2, "d_k": 2, "n_layers": 1, "gcn_hidden": 4, "d_ff": 8, "ode_hidden": 4}
TINY_TOPO = {"d_z": 4, "L_hops": 1, "d_h": 4, "d_att": 4, "d_q": 4, "mlp_hidden": 8}


def tiny_config(**overrides) -> TrainConfig:
    payload = {"epochs": 5, "learning_rate": 1e-2, "seed": 3, "window": 3, "state": dict(TINY_STATE),
               "topo": dict(TINY_TOPO), "log_every": 1}
    payload.update(overrides)
    return TrainConfig.from_dict(payload)


def tiny_dataset():
    return generate(GeneratorConfig(name="tiny", n_nodes=12, feature_dim=2, horizon=5, topology="erdos_renyi",
                                    topology_params={"p": 0.4}, p_add=0.02, p_drop=0.05, seed=11))


def six_node_target() -> np.ndarray:
    return Graph.from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]).adjacency


# ---------------------------------------------------------------------- losses


def test_topology_loss_at_one_half_is_ln2():
    a_hat = Tensor(np.full((6, 6), 0.5))
    loss = topology_loss(a_hat, six_node_target(), np.random.default_rng(0))
    assert loss.item() == pytest.approx(math.log(2.0), abs=1e-12)


def test_topology_loss_single_edge_and_negative():
    a_true = Graph.from_edges(3, [(0, 1)]).adjacency
    a_hat = Tensor(np.full((3, 3), 0.9))
    loss = topology_loss(a_hat, a_true, np.random.default_rng(0))
    assert loss.item() == pytest.approx((-math.log(0.9) - math.log(0.1)) / 2, abs=1e-12)
    assert loss.item() == pytest.approx(1.2040, abs=1e-4)


def test_perfect_prediction_has_near_zero_loss():
    a_true = six_node_target()
    loss = topology_loss(Tensor(a_true.copy()), a_true, np.random.default_rng(0))
    assert 0.0 <= loss.item() < 1e-6


def test_topology_loss_needs_edges():
    with pytest.raises(DatasetError):
        topology_loss(Tensor(np.full((3, 3), 0.5)), np.zeros((3, 3)), np.random.default_rng(0))


def test_sampled_loss_is_unbiased():
    rng = np.random.default_rng(1)
    a_hat = Tensor(rng.uniform(0.05, 0.95, size=(6, 6)))
    a_true = six_node_target()
    samples = [topology_loss(a_hat, a_true, np.random.default_rng(k)).item() for k in range(1000)]
    exhaustive = exhaustive_topology_loss(a_hat, a_true).item()
    assert abs(np.mean(samples) - exhaustive) <= 0.02 * exhaustive


def test_negative_sampling_draws_distinct_non_edges():
    a_true = six_node_target()
    negatives = sample_negatives(a_true, 7, np.random.default_rng(2))
    assert len({tuple(p) for p in negatives}) == 7
    assert all(i < j and a_true[i, j] == 0 for i, j in negatives)
    assert len(sample_negatives(a_true, 100, np.random.default_rng(2))) == 10


def test_joint_loss_is_plain_sum():
    assert joint_loss(Tensor(0.0), Tensor(0.0)).item() == 0.0
    assert joint_loss(Tensor(0.25), Tensor(math.log(2.0))).item() == pytest.approx(0.943147, abs=1e-6)


# ---------------------------------------------------------------------- optimizer


def test_zero_gradient_leaves_params_unchanged():
    params = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}
    optimizer_step(params, {"w": np.zeros(2)}, AdamState(), TrainConfig())
    assert np.array_equal(params["w"].data, [1.0, -2.0])


def test_first_adam_step_is_normalized_sign():
    config = TrainConfig(learning_rate=0.1)
    params = {"w": Tensor(np.array([1.0, 1.0, 1.0]), requires_grad=True)}
    optimizer_step(params, {"w": np.array([3.0, -0.5, 1e-3])}, AdamState(), config)
    assert np.allclose(params["w"].data, [0.9, 1.1, 0.9], atol=1e-4)


def test_nan_gradient_names_parameter():
    params = {"layer.W": Tensor(np.ones(2), requires_grad=True)}
    with pytest.raises(DivergenceError) as err:
        optimizer_step(params, {"layer.W": np.array([np.nan, 0.0])}, AdamState(), TrainConfig())
    assert err.value.parameter == "layer.W"


def test_adam_is_deterministic():
    def run():
        rng = np.random.default_rng(4)
        w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        target = rng.normal(size=(3, 2))
        state = AdamState()
        for _ in range(10):
            w.zero_grad()
            diff = w - target
            tsum(mul(diff, diff)).backward()
            optimizer_step({"w": w}, {"w": w.grad}, state, TrainConfig())
        return w.data

    assert np.array_equal(run(), run())


# ---------------------------------------------------------------------- config


def test_config_round_trip_and_validation(tmp_path):
    config = tiny_config(physics={"alpha": -0.3})
    again = TrainConfig.from_dict(config.to_dict())
    assert again.to_dict() == config.to_dict()
    assert isinstance(again.physics, PhysicsParams) and again.physics.alpha == -0.3
    assert isinstance(again.state, StateEncoderConfig) and isinstance(again.topo, TopoEncoderConfig)

    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"epochs": 1, "momentum": 0.9})
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(split_ratio=1.0)

    bad = tmp_path / "bad.json"
    bad.write_text('{"epochs": 3,\n  "seed": }\n', encoding="utf-8")
    with pytest.raises(ConfigError) as err:
        TrainConfig.from_json(str(bad))
    assert err.value.line == 2


def test_negative_ratio_reaches_topology_config():
    assert tiny_config(negative_ratio=2.0).topo.negative_ratio == 2.0


def test_physics_gains_come_from_config_then_dataset():
    ds = tiny_dataset()
    assert resolve_physics(tiny_config(), ds) == PhysicsParams()
    ds.metadata["physics"] = {"alpha": 0.03, "beta": 0.0, "gamma": 0.0}
    assert resolve_physics(tiny_config(), ds) == PhysicsParams(alpha=0.03, beta=0.0, gamma=0.0)
    assert resolve_physics(tiny_config(physics={"alpha": -0.3}), ds).alpha == -0.3
    ckpt = train(ds, tiny_config(epochs=1))
    assert ckpt.config["physics"] == {"alpha": 0.03, "beta": 0.0, "gamma": 0.0}


def test_training_windows():
    ds = tiny_dataset()
    assert [w.target_index for w in training_windows(ds, tiny_config())] == [4]
    assert [w.target_index for w in training_windows(ds, tiny_config(sliding_windows=True))] == [3, 4]
    assert training_windows(ds, tiny_config(window=None))[0].length == 4
    with pytest.raises(DatasetError):
        training_windows(ds, tiny_config(window=5))


# ---------------------------------------------------------------------- training


def test_zero_epochs_returns_initialization():
    ds = tiny_dataset()
    ckpt = train(ds, tiny_config(epochs=0))
    model = ckpt.to_model()
    fresh = ResilienceNet(model.state_config, model.topo_config, feature_dim=2, seed=3)
    assert all(np.array_equal(ckpt.params[k], fresh.params[k].data) for k in ckpt.params)
    assert ckpt.history == {"loss": [], "loss_phy": [], "loss_top": []}


def test_training_is_deterministic():
    ds = tiny_dataset()
    first = train(ds, tiny_config())
    second = train(ds, tiny_config())
    assert first.history == second.history
    assert all(np.array_equal(first.params[k], second.params[k]) for k in first.params)
    assert len(first.history["loss"]) == 5
    for total, phy, top in zip(first.history["loss"], first.history["loss_phy"], first.history["loss_top"]):
        assert total == pytest.approx(phy + top, rel=1e-12)


def test_training_reduces_the_loss():
    ds = tiny_dataset()
    history = train(ds, tiny_config(epochs=60))
    losses = history.history["loss"]
    assert np.mean(losses[-5:]) < np.mean(losses[:5])


def test_every_encoder_receives_gradient():
    ds = tiny_dataset()
    config = tiny_config()
    model = train(ds, tiny_config(epochs=0)).to_model()
    loss_phy, loss_top = window_losses(model, ds, make_window(ds, 1, 3), config, np.random.default_rng(0))
    joint_loss(loss_phy, loss_top).backward()
    assert any(np.any(p.grad) for n, p in model.params.items() if n.startswith("state.gcn"))
    assert any(np.any(p.grad) for n, p in model.params.items() if n.startswith("state.readout"))
    assert any(np.any(p.grad) for n, p in model.params.items() if n.startswith("topo.mlp"))
    assert any(np.any(p.grad) for n, p in model.params.items() if n.startswith("topo.spatial0"))


def test_joint_loss_gradients_match_finite_differences():
    ds = generate(GeneratorConfig(name="five", n_nodes=5, feature_dim=1, horizon=4, topology="random_regular",
                                  topology_params={"k": 2}, p_add=0.0, p_drop=0.0, seed=6,
                                  initial_low=0.5, initial_high=1.5))
    config = tiny_config()
    model = ResilienceNet(config.state, config.topo, feature_dim=1, seed=0)
    window = make_window(ds, 0, 3)

    def loss():
        return joint_loss(*window_losses(model, ds, window, config, np.random.default_rng(0)))

    report = check_gradients(loss, model.params, floor=1e-3)
    assert max(report.values()) < 1e-3, report


def test_training_uses_split_edges():
    ds = tiny_dataset()
    ckpt = train(ds, tiny_config(epochs=1))
    train_edges = {tuple(e) for e in ckpt.meta["train_edges"]}
    all_edges = {(i, j) for i, j, _ in ds.snapshots[-1].graph.edges()}
    assert train_edges < all_edges
    assert len(train_edges) == round(0.8 * len(all_edges))


def test_checkpoint_round_trip(tmp_path):
    ds = tiny_dataset()
    ckpt = train(ds, tiny_config(epochs=2))
    path = tmp_path / "run" / "ckpt.json"
    save_checkpoint(ckpt, str(path))
    assert [p.name for p in path.parent.iterdir()] == ["ckpt.json"]

    payload = json.loads(path.read_text(encoding="utf-8"))
    assert payload["version"] == CHECKPOINT_VERSION
    assert set(payload["history"]) == {"loss", "loss_phy", "loss_top"}

    loaded = load_checkpoint(str(path))
    assert loaded.history == ckpt.history
    assert loaded.meta == ckpt.meta
    for name, data in ckpt.params.items():
        assert np.array_equal(loaded.params[name], data)
    resolved = tiny_config(epochs=2, physics=PhysicsParams().to_dict())
    assert loaded.train_config().to_dict() == resolved.to_dict()


def test_load_checkpoint_errors(tmp_path):
    missing = tmp_path / "missing.json"
    with pytest.raises(ConfigError):
        load_checkpoint(str(missing))
    old = tmp_path / "old.json"
    old.write_text(json.dumps({"version": 99, "params": {}, "config": {}, "history": {}}), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_checkpoint(str(old))


def test_identical_runs_write_identical_checkpoints(tmp_path):
    ds = tiny_dataset()
    first, second = tmp_path / "a.json", tmp_path / "b.json"
    save_checkpoint(train(ds, tiny_config(epochs=2)), str(first))
    save_checkpoint(train(ds, tiny_config(epochs=2)), str(second))
    assert first.read_bytes() == second.read_bytes()
