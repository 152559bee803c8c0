"""
Synthetic temporal graph generator, presets and edge splits.
"""

import networkx as nx
import numpy as np
import pytest

from core.errors import ConfigError, DatasetError
from core.graph import load_dataset, save_dataset
from simulation.synthetic import MINI_PRESETS, GeneratorConfig, generate, preset, presets, split


def small(**overrides) -> GeneratorConfig:
    payload = {"name": "small", "n_nodes": 20, "feature_dim": 2, "horizon": 6, "topology_params": {"p": 0.3},
               "p_add": 0.02, "p_drop": 0.05, "seed": 8}
    payload.update(overrides)
    return GeneratorConfig(**payload)


def test_generation_is_deterministic():
    a, b = generate(small()), generate(small())
    assert np.array_equal(a.states_array(), b.states_array())
    assert np.array_equal(a.adjacency_array(), b.adjacency_array())
    c = generate(small(seed=9))
    assert not np.array_equal(a.adjacency_array(), c.adjacency_array())


def test_generated_shapes_and_metadata():
    ds = generate(small())
    assert (ds.node_count, ds.feature_dim, ds.horizon) == (20, 2, 6)
    assert ds.timestamps == list(range(6))
    assert ds.metadata["seed"] == 8
    assert ds.metadata["dynamics"]["id"] == "mutualistic"
    assert ds.metadata["generator"]["n_nodes"] == 20
    for snap in ds.snapshots:
        a = snap.graph.adjacency
        assert np.array_equal(a, a.T) and np.all(np.diag(a) == 0)
        assert set(np.unique(a)) <= {0.0, 1.0}


def test_churn_changes_edges_between_snapshots():
    ds = generate(small(p_add=0.05, p_drop=0.2))
    adjacency = ds.adjacency_array()
    assert any(not np.array_equal(adjacency[t], adjacency[t + 1]) for t in range(ds.horizon - 1))
    churn = ds.metadata["churn"]
    assert churn["dropped"] > 0 and churn["added"] > 0


def test_no_churn_keeps_topology_fixed():
    ds = generate(small(p_add=0.0, p_drop=0.0))
    adjacency = ds.adjacency_array()
    assert all(np.array_equal(adjacency[0], adjacency[t]) for t in range(ds.horizon))


def test_noise_free_states_follow_the_dynamics():
    ds = generate(small(noise_std=0.0, p_add=0.0, p_drop=0.0, dynamics="linear_diffusion",
                        dynamics_params={"rate": 0.3, "decay": 0.0}, initial_low=0.0, initial_high=1.0))
    totals = ds.states_array().sum(axis=1)
    assert np.allclose(totals, totals[0], atol=1e-9)


def test_disconnected_snapshots_are_recorded_not_repaired():
    ds = generate(small(n_nodes=15, topology_params={"p": 0.02}, p_add=0.0, p_drop=0.0))
    assert ds.metadata["disconnected_timestamps"] == ds.timestamps
    assert nx.number_connected_components(ds.snapshots[0].graph.to_networkx()) > 1


def test_irregular_timestamps():
    ds = generate(small(irregular=True, max_gap=3, horizon=8))
    gaps = np.diff(ds.timestamps)
    assert ds.timestamps[0] == 0
    assert np.all((gaps >= 1) & (gaps <= 3))
    assert not ds.is_regular()


@pytest.mark.parametrize("family,params", [
    ("barabasi_albert", {"m": 2}),
    ("layered_chain", {"layers": 3, "p_inter": 0.3, "p_intra": 0.1}),
    ("random_regular", {"k": 4}),
])
def test_topology_families(family, params):
    ds = generate(small(topology=family, topology_params=params, p_add=0.0, p_drop=0.0))
    degrees = ds.snapshots[0].graph.degrees()
    if family == "random_regular":
        assert np.all(degrees == 4)
    if family == "barabasi_albert":
        assert ds.snapshots[0].graph.edge_count() == 2 * (20 - 2)
    if family == "layered_chain":
        adjacency = ds.snapshots[0].graph.adjacency
        tier = np.minimum(np.arange(20) * 3 // 20, 2)
        rows, cols = np.nonzero(adjacency)
        assert np.all(np.abs(tier[rows] - tier[cols]) <= 1)


def test_config_validation_and_round_trip():
    with pytest.raises(ConfigError):
        small(topology="lattice")
    with pytest.raises(ConfigError):
        small(p_drop=1.5)
    with pytest.raises(ConfigError):
        small(horizon=1)
    with pytest.raises(ConfigError):
        GeneratorConfig.from_dict({"nodes": 3})
    config = small()
    assert GeneratorConfig.from_dict(config.to_dict()) == config


def test_presets():
    table = presets()
    assert set(MINI_PRESETS) <= set(table)
    assert {"manufacturing", "electronics", "financial"} <= set(table)
    assert preset("financial-mini").irregular
    assert preset("resilient-demo").feature_dim == 1
    first = preset("sparse-collapse")
    first.seed = 1
    assert preset("sparse-collapse").seed == 4242
    with pytest.raises(ConfigError):
        preset("steel")


def test_physics_gains_are_recorded_and_stored(tmp_path):
    assert "physics" not in generate(small()).metadata
    ds = generate(small(physics={"alpha": 0.05, "beta": 0.0, "gamma": 0.0}))
    assert ds.metadata["physics"] == {"alpha": 0.05, "beta": 0.0, "gamma": 0.0}
    save_dataset(ds, str(tmp_path))
    assert load_dataset(str(tmp_path)).metadata["physics"] == {"alpha": 0.05, "beta": 0.0, "gamma": 0.0}


def test_resilient_demo_is_observed_before_ignition():
    ds = generate(preset("resilient-demo"))
    assert ds.metadata["physics"]["alpha"] > 0
    states = ds.states_array()
    assert states[-1].mean() > states[0].mean()
    assert states.max() < 0.5


def test_split_is_seeded_and_partitions_edges():
    ds = generate(small())
    train_a, test_a = split(ds, 0.8, seed=1)
    train_b, test_b = split(ds, 0.8, seed=1)
    assert (train_a, test_a) == (train_b, test_b)
    edges = {(i, j) for i, j, _ in ds.snapshots[-1].graph.edges()}
    assert set(train_a) | set(test_a) == edges
    assert not set(train_a) & set(test_a)
    assert len(train_a) == round(0.8 * len(edges))
    assert split(ds, 0.8, seed=2) != (train_a, test_a)


def test_split_errors():
    ds = generate(small())
    with pytest.raises(ConfigError):
        split(ds, 1.0)
    sparse = generate(small(n_nodes=4, topology_params={"p": 0.0}, p_add=0.0, p_drop=0.0))
    with pytest.raises(DatasetError):
        split(sparse, 0.8)


def test_generated_dataset_survives_storage(tmp_path):
    ds = generate(small())
    save_dataset(ds, str(tmp_path / "small"))
    loaded = load_dataset(str(tmp_path / "small"))
    assert np.array_equal(loaded.states_array(), ds.states_array())
    assert loaded.metadata["dynamics"] == ds.metadata["dynamics"]
    assert loaded.metadata["generator"]["seed"] == 8
