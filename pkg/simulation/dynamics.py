"""
Ground-truth node dynamics on networks.

du_i/dt = F(u_i) + sum_j A_ij G(u_i, u_j), integrated with classical RK4,
plus random node attacks, resilience classification and post-attack
recovery curves.
"""

import functools
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.errors import DivergenceError, ShapeMismatchError
from core.graph import Graph, Snapshot, TemporalGraphDataset
from core.rng import stream

logger = logging.getLogger(__name__)

DEFAULT_DT = 0.01
DEFAULT_T_END = 50.0
DEFAULT_EPS = 1e-4
DEFAULT_THETA_FRACTION = 0.1

MUTUALISTIC_DEFAULTS = {"B": 0.1, "C": 1.0, "K": 5.0, "D": 5.0, "E": 0.9, "H": 0.1}
CURVE_COLUMNS = ["fraction", "t", "mean_state", "std_state"]


@dataclass(frozen=True)
class DynamicsSpec:
    """
    A node-dynamics family. `self_dynamics` maps an (N, M) state array to rates;
    `interaction(ui, uj)` is evaluated on broadcast (N, 1, M) x (1, N, M) arrays.
    `coupling`, when given, computes sum_j A_ij G(u_i, u_j) directly.
    """

    id: str
    self_dynamics: Callable[[np.ndarray], np.ndarray]
    interaction: Callable[[np.ndarray, np.ndarray], np.ndarray]
    params: Dict[str, float] = field(default_factory=dict)
    nonnegative: bool = False
    coupling: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def rate(self, adjacency: np.ndarray, states: np.ndarray) -> np.ndarray:
        if self.coupling is not None:
            pair = self.coupling(adjacency, states)
        else:
            g = self.interaction(states[:, None, :], states[None, :, :])
            pair = np.einsum("ij,ijm->im", adjacency, g)
        return self.self_dynamics(states) + pair

    def to_dict(self) -> Dict:
        return {"id": self.id, "params": dict(self.params)}


def mutualistic(B: float = 0.1, C: float = 1.0, K: float = 5.0, D: float = 5.0, E: float = 0.9,
                H: float = 0.1) -> DynamicsSpec:
    """F(x) = B + x(1 - x/K)(x/C - 1),  G(x_i, x_j) = x_i x_j / (D + E x_i + H x_j)"""

    def self_dynamics(x):
        return B + x * (1.0 - x / K) * (x / C - 1.0)

    def interaction(xi, xj):
        return xi * xj / (D + E * xi + H * xj)

    return DynamicsSpec("mutualistic", self_dynamics, interaction,
                        params={"B": B, "C": C, "K": K, "D": D, "E": E, "H": H}, nonnegative=True)


def linear_diffusion(rate: float = 0.1, decay: float = 0.0) -> DynamicsSpec:
    """F(x) = -decay x,  G(x_i, x_j) = rate (x_j - x_i)"""

    def self_dynamics(x):
        return -decay * x

    def interaction(xi, xj):
        return rate * (xj - xi)

    def coupling(adjacency, x):
        return rate * (adjacency @ x - adjacency.sum(axis=1)[:, None] * x)

    return DynamicsSpec("linear_diffusion", self_dynamics, interaction,
                        params={"rate": rate, "decay": decay}, coupling=coupling)


def custom(self_dynamics: Callable, interaction: Callable, **params) -> DynamicsSpec:
    return DynamicsSpec("custom", self_dynamics, interaction, params=dict(params))


def zero_dynamics() -> DynamicsSpec:
    return custom(lambda x: np.zeros_like(x), lambda xi, xj: np.zeros(np.broadcast_shapes(xi.shape, xj.shape)))


DYNAMICS_FAMILIES = {"mutualistic": mutualistic, "linear_diffusion": linear_diffusion}


def dynamics_from_dict(payload: Dict) -> DynamicsSpec:
    family = payload.get("id", "mutualistic")
    if family not in DYNAMICS_FAMILIES:
        raise ValueError(f"unknown dynamics family '{family}' (custom dynamics cannot be serialized)")
    return DYNAMICS_FAMILIES[family](**payload.get("params", {}))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    States sampled at increasing times. `active` marks nodes that take part in
    mean-state statistics (attacked nodes are excluded).
    """

    times: np.ndarray
    states: np.ndarray
    provenance: Dict = field(default_factory=dict)
    active: Optional[np.ndarray] = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", np.asarray(self.states, dtype=np.float64))

    def _tracked(self) -> np.ndarray:
        if self.active is None or not np.any(self.active):
            return self.states
        return self.states[:, np.asarray(self.active, dtype=bool), :]

    def mean_state(self) -> np.ndarray:
        """Cross-node (and channel) mean at every sample"""
        return self._tracked().mean(axis=(1, 2))

    def std_state(self) -> np.ndarray:
        return self._tracked().std(axis=(1, 2))

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class ResilienceVerdict:
    resilient: bool
    steady_mean: float
    converged: bool
    derivative_norm_at_end: float

    def to_dict(self) -> Dict:
        return {
            "resilient": self.resilient,
            "steady_mean": self.steady_mean,
            "converged": self.converged,
            "derivative_norm_at_end": self.derivative_norm_at_end,
        }


def _rk4_step(rate: Callable[[np.ndarray], np.ndarray], u: np.ndarray, dt: float) -> np.ndarray:
    k1 = rate(u)
    k2 = rate(u + 0.5 * dt * k1)
    k3 = rate(u + 0.5 * dt * k2)
    k4 = rate(u + dt * k3)
    return u + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


def integrate(g: Graph, spec: DynamicsSpec, u0: np.ndarray, dt: float = DEFAULT_DT,
              t_end: float = DEFAULT_T_END, record_every: int = 1) -> Trajectory:
    """
    Fixed-step RK4 integration of the network dynamics

    Args:
        g: network (symmetrized for the coupling)
        spec: dynamics family
        u0: initial states (N, M) or (N,)
        dt: step size
        t_end: final time; the last sample lies within dt of it
        record_every: keep every k-th step (the final step is always kept)

    Raises:
        DivergenceError: a state became non-finite
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if t_end < 0:
        raise ValueError(f"t_end must be non-negative, got {t_end}")
    u = np.array(u0, dtype=np.float64)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape[0] != g.n:
        raise ShapeMismatchError("integrate", (g.n, g.n), u.shape)
    if not np.all(np.isfinite(u)):
        raise DivergenceError("initial state is not finite", time=0.0)

    adjacency = np.asarray(g.symmetrized().adjacency)
    rate = functools.partial(spec.rate, adjacency)
    n_steps = int(round(t_end / dt))
    times = [0.0]
    states = [u.copy()]
    for step in range(1, n_steps + 1):
        u = _rk4_step(rate, u, dt)
        if spec.nonnegative:
            np.maximum(u, 0.0, out=u)
        if not np.all(np.isfinite(u)):
            bad_node = int(np.argwhere(~np.isfinite(u))[0][0])
            logger.error("❌ Integration diverged at t=%.4f (node %d)", step * dt, bad_node)
            raise DivergenceError("integration diverged", time=step * dt, node=bad_node)
        if step % record_every == 0 or step == n_steps:
            times.append(step * dt)
            states.append(u.copy())
    return Trajectory(np.asarray(times), np.stack(states),
                      provenance={"dynamics": spec.id, "dt": dt, "integrator": "rk4"})


# ---------------------------------------------------------------------- attacks


def attacked_nodes(n: int, fraction: float, rng_seed: Optional[int]) -> np.ndarray:
    """
    round(fraction * N) distinct nodes, uniformly chosen. For one seed the
    selections are nested: a larger fraction removes a superset.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"attack fraction must be in [0, 1], got {fraction}")
    count = int(np.floor(fraction * n + 0.5))
    order = stream(rng_seed, "attack").permutation(n)
    return np.sort(order[:count])


def _attack_arrays(adjacency: np.ndarray, states: np.ndarray, removed: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    adjacency = np.array(adjacency, dtype=np.float64)
    states = np.array(states, dtype=np.float64)
    adjacency[removed, :] = 0.0
    adjacency[:, removed] = 0.0
    states[removed] = 0.0
    return adjacency, states


@dataclass(frozen=True, eq=False)
class AttackResult:
    graph: Graph
    states: np.ndarray
    removed: np.ndarray

    @property
    def active(self) -> np.ndarray:
        mask = np.ones(self.graph.n, dtype=bool)
        mask[self.removed] = False
        return mask


@functools.singledispatch
def attack(subject, fraction: float, rng_seed: Optional[int] = None, states: Optional[np.ndarray] = None):
    """
    Removes round(fraction * N) random nodes: their states are zeroed and all
    incident edges dropped; node count is unchanged.

    Accepts a Graph (with `states`) or a whole TemporalGraphDataset, in which
    case the same node set is removed from every snapshot.
    """
    raise TypeError(f"cannot attack a {type(subject).__name__}")


@attack.register
def _(subject: Graph, fraction: float, rng_seed: Optional[int] = None, states: Optional[np.ndarray] = None) -> AttackResult:
    if states is None:
        states = np.zeros((subject.n, 1))
    states = np.asarray(states, dtype=np.float64)
    if states.ndim == 1:
        states = states[:, None]
    removed = attacked_nodes(subject.n, fraction, rng_seed)
    adjacency, new_states = _attack_arrays(subject.adjacency, states, removed)
    return AttackResult(Graph(adjacency, directed=subject.directed), new_states, removed)


@attack.register
def _(subject: TemporalGraphDataset, fraction: float, rng_seed: Optional[int] = None,
      states: Optional[np.ndarray] = None) -> TemporalGraphDataset:
    removed = attacked_nodes(subject.node_count, fraction, rng_seed)
    snapshots = []
    for snap in subject.snapshots:
        adjacency, new_states = _attack_arrays(snap.graph.adjacency, snap.states, removed)
        snapshots.append(Snapshot(t=snap.t, graph=Graph(adjacency, directed=snap.graph.directed), states=new_states))
    metadata = dict(subject.metadata)
    metadata.update({"attack_fraction": fraction, "attack_seed": rng_seed, "removed_nodes": removed.tolist()})
    return TemporalGraphDataset(name=subject.name, snapshots=tuple(snapshots), metadata=metadata)


# ---------------------------------------------------------------------- resilience


def derivative_norm_at_end(traj: Trajectory) -> float:
    if len(traj.times) < 2:
        raise ValueError("trajectory needs at least 2 samples")
    du = (traj.states[-1] - traj.states[-2]) / (traj.times[-1] - traj.times[-2])
    return float(np.linalg.norm(du))


def classify_resilience(traj: Trajectory, theta: float, eps: float = DEFAULT_EPS) -> ResilienceVerdict:
    """
    converged := ||du/dt|| at the final sample < eps (backward difference);
    resilient := converged and the final mean state exceeds theta
    """
    norm = derivative_norm_at_end(traj)
    steady = float(traj.mean_state()[-1])
    converged = bool(norm < eps)
    return ResilienceVerdict(resilient=bool(converged and steady > theta), steady_mean=steady,
                             converged=converged, derivative_norm_at_end=norm)


def time_to_recovery(times: np.ndarray, mean_state: np.ndarray, level: float = 0.9) -> float:
    """First time the curve reaches `level` x its own final value (inf if never)"""
    target = level * mean_state[-1]
    hits = np.nonzero(mean_state >= target)[0]
    return float(times[hits[0]]) if hits.size else float("inf")


@dataclass(frozen=True, eq=False)
class RecoveryCurve:
    fraction: float
    trajectory: Trajectory
    removed: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.trajectory.times

    @property
    def mean_state(self) -> np.ndarray:
        return self.trajectory.mean_state()

    @property
    def std_state(self) -> np.ndarray:
        return self.trajectory.std_state()

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "fraction": np.full(len(self.times), self.fraction),
            "t": self.times,
            "mean_state": self.mean_state,
            "std_state": self.std_state,
        }, columns=CURVE_COLUMNS)


def recovery_curve(g: Graph, spec: DynamicsSpec, u0: np.ndarray, attack_fractions: Sequence[float],
                   dt: float = DEFAULT_DT, t_end: float = DEFAULT_T_END, rng_seed: Optional[int] = 0,
                   record_every: int = 1) -> List[RecoveryCurve]:
    """
    One curve per attack fraction: attack, then integrate from the attacked u0.
    Mean states are taken over the surviving nodes.
    """
    curves = []
    for fraction in attack_fractions:
        hit = attack(g, fraction, rng_seed, states=u0)
        logger.info("🔄 Integrating recovery after %.0f%% attack (%d nodes removed)", 100 * fraction, len(hit.removed))
        traj = integrate(hit.graph, spec, hit.states, dt=dt, t_end=t_end, record_every=record_every)
        traj = Trajectory(traj.times, traj.states, provenance={**traj.provenance, "fraction": fraction},
                          active=hit.active)
        curves.append(RecoveryCurve(fraction=float(fraction), trajectory=traj, removed=hit.removed))
    return curves


def curves_to_frame(curves: Sequence[RecoveryCurve]) -> pd.DataFrame:
    if not curves:
        return pd.DataFrame(columns=CURVE_COLUMNS)
    return pd.concat([c.to_frame() for c in curves], ignore_index=True)


def export_curves_csv(curves: Sequence[RecoveryCurve], path: str) -> None:
    curves_to_frame(curves).to_csv(path, index=False, float_format="%.12g")
    logger.info("✅ Curves saved to %s", path)
