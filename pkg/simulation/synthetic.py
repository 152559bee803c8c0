"""
Deterministic synthetic temporal graphs standing in for industrial-chain data:
a seeded initial topology, per-step edge churn, and node states produced by
integrating a dynamics family between snapshots plus Gaussian observation noise.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Tuple

import networkx as nx
import numpy as np
from sklearn.model_selection import train_test_split

from core.errors import ConfigError, DatasetError
from core.graph import Graph, Snapshot, TemporalGraphDataset
from core.rng import derive_seed, stream
from simulation.dynamics import DYNAMICS_FAMILIES, MUTUALISTIC_DEFAULTS, integrate

logger = logging.getLogger(__name__)

TOPOLOGY_FAMILIES = ("erdos_renyi", "barabasi_albert", "layered_chain", "random_regular")


@dataclass
class GeneratorConfig:
    """
    Recipe for one synthetic dataset.

    topology params by family:
        erdos_renyi: p
        barabasi_albert: m
        layered_chain: layers, width, p_inter, p_intra
        random_regular: k

    `physics` holds optional alpha / beta / gamma gains stored in the dataset
    metadata; training uses them unless its own config sets gains.
    """

    name: str = "synthetic"
    n_nodes: int = 50
    feature_dim: int = 1
    horizon: int = 30
    topology: str = "erdos_renyi"
    topology_params: Dict[str, float] = field(default_factory=lambda: {"p": 0.1})
    p_add: float = 0.0
    p_drop: float = 0.0
    dynamics: str = "mutualistic"
    dynamics_params: Dict[str, float] = field(default_factory=lambda: dict(MUTUALISTIC_DEFAULTS))
    noise_std: float = 0.01
    seed: int = 0
    time_scale: float = 0.5
    sim_dt: float = 0.01
    initial_low: float = 0.05
    initial_high: float = 0.15
    irregular: bool = False
    max_gap: int = 3
    physics: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.topology not in TOPOLOGY_FAMILIES:
            raise ConfigError(f"unknown topology family '{self.topology}'")
        if self.dynamics not in DYNAMICS_FAMILIES:
            raise ConfigError(f"unknown dynamics family '{self.dynamics}'")
        if not (0.0 <= self.p_add <= 1.0 and 0.0 <= self.p_drop <= 1.0):
            raise ConfigError("churn rates p_add / p_drop must lie in [0, 1]")
        if self.horizon < 2:
            raise ConfigError("horizon must be at least 2")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")
        if self.n_nodes < 1 or self.feature_dim < 1:
            raise ConfigError("n_nodes and feature_dim must be positive")

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Dict) -> "GeneratorConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown generator config keys: {sorted(unknown)}")
        return cls(**payload)


def _initial_topology(config: GeneratorConfig, rng_seed: int) -> np.ndarray:
    n = config.n_nodes
    params = config.topology_params
    if config.topology == "erdos_renyi":
        g = nx.erdos_renyi_graph(n, float(params.get("p", 0.1)), seed=rng_seed)
    elif config.topology == "barabasi_albert":
        g = nx.barabasi_albert_graph(n, int(params.get("m", 2)), seed=rng_seed)
    elif config.topology == "random_regular":
        g = nx.random_regular_graph(int(params.get("k", 4)), n, seed=rng_seed)
    else:
        g = _layered_chain(n, params, rng_seed)
    return nx.to_numpy_array(g, nodelist=range(n))


def _layered_chain(n: int, params: Dict[str, float], rng_seed: int) -> nx.Graph:
    """Upstream -> midstream -> downstream tiers; links between adjacent tiers and within a tier"""
    layers = int(params.get("layers", 3))
    p_inter = float(params.get("p_inter", 0.2))
    p_intra = float(params.get("p_intra", 0.05))
    rng = np.random.default_rng(rng_seed)
    tier = np.minimum(np.arange(n) * layers // max(n, 1), layers - 1)
    g = nx.Graph()
    g.add_nodes_from(range(n))
    rows, cols = np.triu_indices(n, k=1)
    gap = np.abs(tier[rows] - tier[cols])
    prob = np.where(gap == 0, p_intra, np.where(gap == 1, p_inter, 0.0))
    keep = rng.random(rows.size) < prob
    g.add_edges_from(zip(rows[keep].tolist(), cols[keep].tolist()))
    return g


def _churn(adjacency: np.ndarray, config: GeneratorConfig, rng: np.random.Generator) -> Tuple[np.ndarray, int, int]:
    """Drops each edge w.p. p_drop, adds each absent pair w.p. p_add (degree-weighted for BA)"""
    n = adjacency.shape[0]
    rows, cols = np.triu_indices(n, k=1)
    present = adjacency[rows, cols] > 0
    draws = rng.random(rows.size)
    drop = present & (draws < config.p_drop)
    add_prob = np.full(rows.size, config.p_add)
    if config.topology == "barabasi_albert":
        degree = adjacency.sum(axis=1)
        mean_degree = max(degree.mean(), 1e-12)
        add_prob = np.clip(config.p_add * (degree[rows] + 1) * (degree[cols] + 1) / (mean_degree + 1) ** 2, 0.0, 1.0)
    add = ~present & (draws < add_prob)
    upper = present & ~drop | add
    new = np.zeros_like(adjacency)
    new[rows[upper], cols[upper]] = 1.0
    new = new + new.T
    return new, int(drop.sum()), int(add.sum())


def _timestamps(config: GeneratorConfig, rng: np.random.Generator) -> List[int]:
    if not config.irregular:
        return list(range(config.horizon))
    gaps = rng.integers(1, config.max_gap + 1, size=config.horizon - 1)
    if config.horizon > 2 and np.all(gaps == gaps[0]):
        gaps[-1] = gaps[0] % config.max_gap + 1
    return [0] + np.cumsum(gaps).astype(int).tolist()


def generate(config: GeneratorConfig) -> TemporalGraphDataset:
    """
    Builds a temporal graph dataset; fully determined by `config.seed`.
    Disconnected topologies are recorded in metadata, never repaired.
    """
    logger.info("🔄 Generating %s: N=%d M=%d T=%d (%s, %s)", config.name, config.n_nodes, config.feature_dim,
                config.horizon, config.topology, config.dynamics)
    topo_rng = stream(config.seed, "topology")
    noise_rng = stream(config.seed, "noise")
    init_rng = stream(config.seed, "init-state")
    time_rng = stream(config.seed, "timestamps")
    spec = DYNAMICS_FAMILIES[config.dynamics](**config.dynamics_params)

    adjacency = _initial_topology(config, derive_seed(config.seed, "initial-topology") % (2 ** 32))
    timestamps = _timestamps(config, time_rng)
    clean = init_rng.uniform(config.initial_low, config.initial_high, size=(config.n_nodes, config.feature_dim))

    snapshots = []
    disconnected = []
    dropped = added = 0
    for step, t in enumerate(timestamps):
        if step > 0:
            adjacency, n_drop, n_add = _churn(adjacency, config, topo_rng)
            dropped += n_drop
            added += n_add
            span = (t - timestamps[step - 1]) * config.time_scale
            graph = Graph(adjacency)
            clean = integrate(graph, spec, clean, dt=config.sim_dt, t_end=span, record_every=10 ** 9).final
        graph = Graph(adjacency)
        observed = clean + noise_rng.normal(0.0, config.noise_std, size=clean.shape) if config.noise_std > 0 else clean
        if nx.number_connected_components(graph.to_networkx()) > 1:
            disconnected.append(int(t))
        snapshots.append(Snapshot(t=int(t), graph=graph, states=observed))

    metadata = {
        "name": config.name,
        "generator": config.to_dict(),
        "seed": config.seed,
        "dynamics": spec.to_dict(),
        "disconnected_timestamps": disconnected,
        "churn": {"dropped": dropped, "added": added},
        "initial_state": [config.initial_low, config.initial_high],
    }
    if config.physics:
        metadata["physics"] = dict(config.physics)
    if disconnected:
        logger.warning("⚠️ %s: %d snapshots are disconnected", config.name, len(disconnected))
    logger.info("✅ Generated %s (%d edges at the last step)", config.name, snapshots[-1].graph.edge_count())
    return TemporalGraphDataset(name=config.name, snapshots=tuple(snapshots), metadata=metadata)


def split(dataset: TemporalGraphDataset, ratio: float = 0.8, seed: int = 0,
          target_index: int = -1) -> Tuple[List[Tuple[int, int]], List[Tuple[int, int]]]:
    """
    Seeded partition of the edges of the target snapshot (default: the last one)

    Returns:
        (train edges, test edges), each a list of (i, j) with i < j
    """
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"split ratio must lie in (0, 1), got {ratio}")
    edges = [(i, j) for i, j, _ in dataset.snapshots[target_index].graph.edges()]
    n_train = int(round(ratio * len(edges)))
    if len(edges) < 2 or n_train == 0 or n_train == len(edges):
        raise DatasetError(f"too few edges ({len(edges)}) to split at ratio {ratio}")
    train, test = train_test_split(edges, train_size=n_train, random_state=derive_seed(seed, "split") % (2 ** 32),
                                   shuffle=True)
    return sorted(map(tuple, train)), sorted(map(tuple, test))


# ---------------------------------------------------------------------- presets


def _preset_table() -> Dict[str, GeneratorConfig]:
    mutualistic = dict(MUTUALISTIC_DEFAULTS)
    return {
        "manufacturing-mini": GeneratorConfig(
            name="manufacturing-mini", n_nodes=96, feature_dim=8, horizon=30, topology="layered_chain",
            topology_params={"layers": 3, "p_inter": 0.18, "p_intra": 0.08}, p_add=0.002, p_drop=0.02,
            dynamics="mutualistic", dynamics_params=mutualistic, seed=960, time_scale=0.5),
        "electronics-mini": GeneratorConfig(
            name="electronics-mini", n_nodes=70, feature_dim=8, horizon=30, topology="barabasi_albert",
            topology_params={"m": 5}, p_add=0.002, p_drop=0.02,
            dynamics="mutualistic", dynamics_params=mutualistic, seed=700, time_scale=0.5),
        "financial-mini": GeneratorConfig(
            name="financial-mini", n_nodes=150, feature_dim=4, horizon=20, topology="erdos_renyi",
            topology_params={"p": 0.06}, p_add=0.001, p_drop=0.015,
            dynamics="linear_diffusion", dynamics_params={"rate": 0.05, "decay": 0.0},
            seed=1500, time_scale=1.0, initial_low=0.0, initial_high=1.0, irregular=True, max_gap=3),
        "resilient-demo": GeneratorConfig(
            name="resilient-demo", n_nodes=80, feature_dim=1, horizon=30, topology="erdos_renyi",
            topology_params={"p": 0.2}, p_add=0.0025, p_drop=0.01,
            dynamics="mutualistic", dynamics_params=mutualistic, seed=2024, time_scale=0.07, noise_std=0.002,
            initial_low=0.05, initial_high=0.15, physics={"alpha": 0.03, "beta": 0.0, "gamma": 0.0}),
        "sparse-collapse": GeneratorConfig(
            name="sparse-collapse", n_nodes=60, feature_dim=1, horizon=30, topology="random_regular",
            topology_params={"k": 10}, p_add=0.0, p_drop=0.0,
            dynamics="mutualistic", dynamics_params=mutualistic, seed=4242, time_scale=0.5,
            initial_low=0.09, initial_high=0.11),
        # full-size datasets; too heavy for the test suite
        "manufacturing": GeneratorConfig(
            name="manufacturing", n_nodes=960, feature_dim=32, horizon=30, topology="layered_chain",
            topology_params={"layers": 3, "p_inter": 0.5, "p_intra": 0.4}, p_add=0.01, p_drop=0.02,
            seed=9600, time_scale=0.5),
        "electronics": GeneratorConfig(
            name="electronics", n_nodes=700, feature_dim=32, horizon=30, topology="barabasi_albert",
            topology_params={"m": 250}, p_add=0.01, p_drop=0.02, seed=7000, time_scale=0.5),
        "financial": GeneratorConfig(
            name="financial", n_nodes=1500, feature_dim=16, horizon=20, topology="erdos_renyi",
            topology_params={"p": 0.53}, p_add=0.01, p_drop=0.01, dynamics="linear_diffusion",
            dynamics_params={"rate": 0.001, "decay": 0.0}, seed=15000, time_scale=1.0,
            initial_low=0.0, initial_high=1.0, irregular=True),
    }


def presets() -> Dict[str, GeneratorConfig]:
    """Named generator configs (fresh copies on every call)"""
    return _preset_table()


MINI_PRESETS = ("manufacturing-mini", "electronics-mini", "financial-mini", "resilient-demo", "sparse-collapse")


def preset(name: str) -> GeneratorConfig:
    table = _preset_table()
    if name not in table:
        raise ConfigError(f"unknown preset '{name}' (available: {', '.join(sorted(table))})")
    return table[name]
