"""
Joint model wiring: one named parameter collection shared by the state
predictor ("state." prefix) and the topology predictor ("topo." prefix),
plus the window bookkeeping both read from a temporal dataset.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from ai.state_encoder import StateEncoderConfig, init_state_params, predict_next_state
from ai.topo_encoder import TopoEncoderConfig, init_topo_params, predict_topology
from core.errors import DatasetError
from core.graph import TemporalGraphDataset
from core.rng import stream
from core.tensor import Tensor, mul

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Window:
    """T observed snapshots and the index of the snapshot to predict"""

    states: List[np.ndarray]
    adjacencies: List[np.ndarray]
    timestamps: List[int]
    target_index: int
    target_t: Optional[int]

    @property
    def length(self) -> int:
        return len(self.states)

    @property
    def last_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def gap(self) -> float:
        """Time between the last observed snapshot and the target (1 when unknown)"""
        if self.target_t is None:
            return 1.0
        return float(self.target_t - self.timestamps[-1])


def make_window(dataset: TemporalGraphDataset, start: int, length: int) -> Window:
    """Snapshots [start, start + length) observed, snapshot start + length as target"""
    end = start + length
    if length < 1 or start < 0 or end > dataset.horizon:
        raise DatasetError(f"window [{start}, {end}) does not fit {dataset.horizon} snapshots")
    snaps = dataset.snapshots[start:end]
    target_t = dataset.snapshots[end].t if end < dataset.horizon else None
    return Window(
        states=[s.states for s in snaps],
        adjacencies=[np.asarray(s.graph.symmetrized().adjacency) for s in snaps],
        timestamps=[s.t for s in snaps],
        target_index=end,
        target_t=target_t,
    )


def window_scale(states: List[np.ndarray]) -> np.ndarray:
    """Per-feature standard deviation over a window's states; constant features get 1"""
    scale = np.stack(states).std(axis=(0, 1))
    scale[scale < 1e-12] = 1.0
    return scale


@dataclass(eq=False)
class ModelOutput:
    state: Tensor
    topology: Tensor
    diagnostics: Dict[str, np.ndarray]
    scale: np.ndarray


class ResilienceNet:
    """
    Neural-symbolic predictor of the next node states and the next topology.
    Parameters live in `params` under "state.*" and "topo.*" names.
    """

    def __init__(self, state_config: StateEncoderConfig, topo_config: TopoEncoderConfig, feature_dim: int,
                 seed: int = 0, params: Optional[Dict[str, Tensor]] = None):
        self.state_config = state_config
        self.topo_config = topo_config
        self.feature_dim = int(feature_dim)
        if params is None:
            rng = stream(seed, "init")
            params = {}
            params.update({f"state.{k}": v for k, v in init_state_params(state_config, self.feature_dim, rng).items()})
            params.update({f"topo.{k}": v for k, v in init_topo_params(topo_config, self.feature_dim, rng).items()})
            for name, tensor in params.items():
                tensor.name = name
        self.params = params

    def _group(self, prefix: str) -> Dict[str, Tensor]:
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def uses_ode(self, irregular: bool) -> bool:
        mode = self.state_config.ode_solver
        return mode == "rk4" or (mode == "auto" and irregular)

    def forward(self, window: Window, irregular: bool = False, mean_gap: float = 1.0) -> ModelOutput:
        if window.states[0].shape[1] != self.feature_dim:
            raise DatasetError(f"model expects feature_dim={self.feature_dim}, "
                               f"window has {window.states[0].shape[1]}")
        scale = window_scale(window.states)
        states = [u / scale for u in window.states]
        t_target = window.gap / mean_gap if self.uses_ode(irregular) else None
        state = predict_next_state(states, window.adjacencies, self._group("state."),
                                   self.state_config, t_target=t_target)
        topology, diagnostics = predict_topology(states, window.adjacencies, self._group("topo."),
                                                 self.topo_config)
        return ModelOutput(state=mul(state, scale), topology=topology, diagnostics=diagnostics, scale=scale)

    def predict(self, dataset: TemporalGraphDataset, start: int, length: int) -> ModelOutput:
        window = make_window(dataset, start, length)
        return self.forward(window, irregular=not dataset.is_regular(), mean_gap=dataset.mean_gap())

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()
