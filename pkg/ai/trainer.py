"""
Joint training: L = L_phy + L_top, Adam updates, per-epoch negative
resampling, deterministic seeding and atomic JSON checkpoints.
"""

import json
import logging
import os
import tempfile
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ai.model import ResilienceNet, Window, make_window
from ai.physics import PhysicsParams, physics_loss
from ai.state_encoder import StateEncoderConfig
from ai.topo_encoder import TopoEncoderConfig
from core.errors import ConfigError, DatasetError, DivergenceError
from core.graph import TemporalGraphDataset
from core.rng import stream
from core.tensor import Tensor, add, clip, getitem, log, mean, mul, sub, tsum
from simulation.synthetic import split

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
PROB_CLAMP = 1e-7


@dataclass
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    physics: Optional[PhysicsParams] = None
    negative_ratio: float = 1.0
    window: Optional[int] = None
    seed: int = 0
    dataset: Optional[str] = None
    split_ratio: float = 0.8
    sliding_windows: bool = False
    use_true_adjacency: bool = False
    log_every: int = 10
    state: StateEncoderConfig = field(default_factory=StateEncoderConfig)
    topo: TopoEncoderConfig = field(default_factory=TopoEncoderConfig)

    def __post_init__(self):
        if isinstance(self.physics, dict):
            self.physics = PhysicsParams.from_dict(self.physics)
        if isinstance(self.state, dict):
            self.state = StateEncoderConfig.from_dict(self.state)
        if isinstance(self.topo, dict):
            self.topo = TopoEncoderConfig.from_dict(self.topo)
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0) or self.epsilon <= 0:
            raise ConfigError("optimizer decays must lie in [0, 1) and epsilon must be positive")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError("split_ratio must lie in (0, 1)")
        if self.negative_ratio <= 0:
            raise ConfigError("negative_ratio must be positive")
        if self.window is not None and self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1")
        self.topo.negative_ratio = self.negative_ratio

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Dict) -> "TrainConfig":
        unknown = set(payload) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**payload)
        except TypeError as e:
            raise ConfigError(f"invalid config: {e}") from e

    @classmethod
    def from_json(cls, path: str) -> "TrainConfig":
        try:
            with open(path, "r", encoding="utf-8") as f:
                payload = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"malformed config {path}: {e.msg}", line=e.lineno, column=e.colno) from e
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(payload, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        return cls.from_dict(payload)


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


@dataclass(eq=False)
class Checkpoint:
    config: Dict
    params: Dict[str, np.ndarray]
    history: Dict[str, List[float]]
    version: int = CHECKPOINT_VERSION
    meta: Dict = field(default_factory=dict)

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.config)

    def to_model(self) -> ResilienceNet:
        config = self.train_config()
        params = {name: Tensor(data.copy(), requires_grad=True, name=name) for name, data in self.params.items()}
        return ResilienceNet(config.state, config.topo, feature_dim=int(self.meta["feature_dim"]), params=params)


# ---------------------------------------------------------------------- losses


def _pairs(adjacency: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    rows, cols = np.triu_indices(adjacency.shape[0], k=1)
    present = adjacency[rows, cols] > 0
    return np.stack([rows[present], cols[present]], axis=1), np.stack([rows[~present], cols[~present]], axis=1)


def sample_negatives(adjacency: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample of `count` non-edges (i < j) without replacement"""
    _, non_edges = _pairs(adjacency)
    count = min(int(count), len(non_edges))
    if count == 0:
        return np.zeros((0, 2), dtype=np.int64)
    chosen = rng.choice(len(non_edges), size=count, replace=False)
    return non_edges[np.sort(chosen)]


def _bce_terms(a_hat, pairs: np.ndarray, positive: bool) -> Tensor:
    p = clip(getitem(a_hat, (pairs[:, 0], pairs[:, 1])), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return log(p) if positive else log(sub(1.0, p))


def topology_loss(a_hat, a_true: np.ndarray, rng: np.random.Generator, negative_ratio: float = 1.0,
                  positives: Optional[Sequence[Tuple[int, int]]] = None) -> Tensor:
    """
    Binary cross-entropy over the true edges (or the given `positives`) and
    round(negative_ratio * |E|) uniformly sampled non-edges of `a_true`

    Raises:
        DatasetError: no positive edges
    """
    a_true = np.asarray(a_true, dtype=np.float64)
    if positives is None:
        edges, _ = _pairs(a_true)
    else:
        edges = np.asarray(list(positives), dtype=np.int64).reshape(-1, 2)
    if len(edges) == 0:
        raise DatasetError("topology loss is undefined for a target graph with zero edges")
    negatives = sample_negatives(a_true, int(round(negative_ratio * len(edges))), rng)
    total = tsum(_bce_terms(a_hat, edges, True))
    if len(negatives):
        total = add(total, tsum(_bce_terms(a_hat, negatives, False)))
    return mul(total, -1.0 / (len(edges) + len(negatives)))


def exhaustive_topology_loss(a_hat, a_true: np.ndarray, negative_ratio: float = 1.0) -> Tensor:
    """Expected value of `topology_loss` over the negative draw: (m_pos + r m_neg) / (1 + r)"""
    a_true = np.asarray(a_true, dtype=np.float64)
    edges, non_edges = _pairs(a_true)
    if len(edges) == 0:
        raise DatasetError("topology loss is undefined for a target graph with zero edges")
    m_pos = mean(_bce_terms(a_hat, edges, True))
    if not len(non_edges):
        return mul(m_pos, -1.0)
    m_neg = mean(_bce_terms(a_hat, non_edges, False))
    return mul(add(m_pos, mul(m_neg, negative_ratio)), -1.0 / (1.0 + negative_ratio))


def joint_loss(loss_phy, loss_top) -> Tensor:
    return add(loss_phy, loss_top)


# ---------------------------------------------------------------------- optimizer


def optimizer_step(params: Dict[str, Tensor], grads: Dict[str, Optional[np.ndarray]], state: AdamState,
                   config: TrainConfig) -> Dict[str, Tensor]:
    """
    One bias-corrected Adam update, in place

    Raises:
        DivergenceError: a gradient holds NaN/Inf (names the parameter)
    """
    state.step += 1
    lr, b1, b2, eps = config.learning_rate, config.beta1, config.beta2, config.epsilon
    for name in sorted(params):
        p = params[name]
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.data.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient", parameter=name)
        m = state.m.get(name, np.zeros_like(p.data))
        v = state.v.get(name, np.zeros_like(p.data))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1.0 - b1 ** state.step)
        v_hat = v / (1.0 - b2 ** state.step)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


# ---------------------------------------------------------------------- training


def training_windows(dataset: TemporalGraphDataset, config: TrainConfig) -> List[Window]:
    length = config.window or dataset.horizon - 1
    if dataset.horizon < length + 1:
        raise DatasetError(f"dataset has {dataset.horizon} snapshots, training needs window + 1 = {length + 1}")
    last_start = dataset.horizon - 1 - length
    starts = range(0, last_start + 1) if config.sliding_windows else [last_start]
    return [make_window(dataset, s, length) for s in starts]


def resolve_physics(config: TrainConfig, dataset: TemporalGraphDataset) -> PhysicsParams:
    """Gains from the config, else the ones the dataset was generated with, else the defaults"""
    if config.physics is not None:
        return config.physics
    recorded = dataset.metadata.get("physics")
    if recorded:
        return PhysicsParams.from_dict(recorded)
    return PhysicsParams()


def window_losses(model: ResilienceNet, dataset: TemporalGraphDataset, window: Window, config: TrainConfig,
                  rng: np.random.Generator, positives=None) -> Tuple[Tensor, Tensor]:
    """
    (L_phy, L_top) for one window. The physics pair is (observed U^T,
    predicted U^{T+1}), measured in the window's state scale.
    """
    out = model.forward(window, irregular=not dataset.is_regular(), mean_gap=dataset.mean_gap())
    target = dataset.snapshots[window.target_index]
    a_target = np.asarray(target.graph.symmetrized().adjacency)
    adjacency = a_target if config.use_true_adjacency else out.topology
    inv = 1.0 / out.scale
    loss_phy = physics_loss([window.last_state * inv, mul(out.state, inv)], window.states[0] * inv, adjacency,
                            resolve_physics(config, dataset), dt=window.gap)
    loss_top = topology_loss(out.topology, a_target, rng, config.negative_ratio, positives=positives)
    return loss_phy, loss_top


def train(dataset: TemporalGraphDataset, config: TrainConfig,
          train_edges: Optional[Sequence[Tuple[int, int]]] = None) -> Checkpoint:
    """
    Jointly trains the state and topology predictors on `dataset`

    Args:
        train_edges: positives for the final window; by default the seeded
                     split of its target snapshot

    Raises:
        DivergenceError: NaN loss (with epoch) or NaN gradient (with parameter)
    """
    config = replace(config, physics=resolve_physics(config, dataset))
    windows = training_windows(dataset, config)
    final = windows[-1]
    if train_edges is None:
        train_edges, _ = split(dataset, config.split_ratio, config.seed, target_index=final.target_index)
    model = ResilienceNet(config.state, config.topo, feature_dim=dataset.feature_dim, seed=config.seed)
    logger.info("🔄 Training on %s: N=%d, %d window(s) of %d, %d parameters, %d epochs",
                dataset.name, dataset.node_count, len(windows), final.length, model.parameter_count(), config.epochs)
    logger.info("⚙️ Physics gains: %s", config.physics.to_dict())

    adam = AdamState()
    history = {"loss": [], "loss_phy": [], "loss_top": []}
    for epoch in range(config.epochs):
        rng = stream(config.seed, "negatives", epoch)
        model.zero_grad()
        total_phy = total_top = None
        for w in windows:
            positives = train_edges if w is final else None
            loss_phy, loss_top = window_losses(model, dataset, w, config, rng, positives)
            total_phy = loss_phy if total_phy is None else add(total_phy, loss_phy)
            total_top = loss_top if total_top is None else add(total_top, loss_top)
        scale = 1.0 / len(windows)
        loss_phy, loss_top = mul(total_phy, scale), mul(total_top, scale)
        loss = joint_loss(loss_phy, loss_top)
        if not np.isfinite(loss.item()):
            logger.error("❌ Loss became non-finite at epoch %d", epoch)
            raise DivergenceError("training loss is not finite", epoch=epoch)
        loss.backward()
        grads = {name: p.grad for name, p in model.params.items()}
        try:
            optimizer_step(model.params, grads, adam, config)
        except DivergenceError as e:
            raise DivergenceError("non-finite gradient", epoch=epoch, parameter=e.parameter) from e

        history["loss"].append(loss.item())
        history["loss_phy"].append(loss_phy.item())
        history["loss_top"].append(loss_top.item())
        if epoch % config.log_every == 0 or epoch == config.epochs - 1:
            logger.info("📈 epoch %d: loss=%.6f phy=%.6f top=%.6f", epoch, loss.item(), loss_phy.item(),
                        loss_top.item())

    logger.info("✅ Training finished after %d epochs", config.epochs)
    return Checkpoint(
        config=config.to_dict(),
        params=model.snapshot(),
        history=history,
        meta={"feature_dim": dataset.feature_dim, "n_nodes": dataset.node_count, "dataset": dataset.name,
              "window": final.length, "train_edges": [list(map(int, e)) for e in train_edges]},
    )


# ---------------------------------------------------------------------- checkpoints


def checkpoint_to_dict(ckpt: Checkpoint) -> Dict:
    return {
        "version": ckpt.version,
        "config": ckpt.config,
        "meta": ckpt.meta,
        "params": {name: {"shape": list(data.shape), "data": data.reshape(-1).tolist()}
                   for name, data in sorted(ckpt.params.items())},
        "history": ckpt.history,
    }


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    """Atomic write: temp file in the target directory, then rename"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".ckpt-", suffix=".json", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump(checkpoint_to_dict(ckpt), f, sort_keys=True, separators=(",", ":"))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    logger.info("✅ Checkpoint saved to %s", path)


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed checkpoint {path}: {e.msg}", line=e.lineno, column=e.colno) from e
    except OSError as e:
        raise ConfigError(f"cannot read checkpoint {path}: {e}") from e
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {payload.get('version')}")
    params = {}
    for name, entry in payload["params"].items():
        params[name] = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
    return Checkpoint(config=payload["config"], params=params, history=payload["history"],
                      version=payload["version"], meta=payload.get("meta", {}))
