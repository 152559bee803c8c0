"""
Node-dynamics right-hand side and the physics residual loss.

    du_i/dt = alpha (u_i - u_i^0)
            + beta  (L U)_i
            + gamma sum_{j in N(i)} sum_{k in N(j)} A_jk / sqrt(D~_j D~_k) (u_k - u_j)

D~ are self-loop augmented degrees, so isolated nodes never divide by zero.
Every function accepts plain arrays or tracked Tensors; with a Tensor
adjacency the rhs stays differentiable w.r.t. the predicted topology.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, Sequence, Union

import numpy as np

from core.errors import ConfigError, ShapeMismatchError
from core.graph import Graph
from core.tensor import Tensor, add, as_tensor, matmul, mean, mul, power, reshape, sub, tsum

logger = logging.getLogger(__name__)

ArrayOrTensor = Union[np.ndarray, Tensor]


@dataclass
class PhysicsParams:
    """Signed gains; the negative beta default makes the Laplacian term diffusive"""

    alpha: float = -0.2
    beta: float = -0.5
    gamma: float = -0.1

    def __post_init__(self):
        for key, value in asdict(self).items():
            if not np.isfinite(value):
                raise ConfigError(f"physics.{key} must be finite, got {value}")

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Dict) -> "PhysicsParams":
        unknown = set(payload) - {"alpha", "beta", "gamma"}
        if unknown:
            raise ConfigError(f"unknown physics keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in payload.items()})


def _adjacency(g) -> Tensor:
    if isinstance(g, Graph):
        return Tensor(g.symmetrized().adjacency)
    return as_tensor(g)


def node_dynamics_rhs(u_t: ArrayOrTensor, u_0: ArrayOrTensor, g, params: PhysicsParams) -> Tensor:
    """
    Evaluates the node-dynamics ODE

    Args:
        u_t: current states (N, M)
        u_0: initial states (N, M)
        g: Graph, dense (N, N) array, or an (N, N) Tensor of edge probabilities
        params: alpha / beta / gamma gains

    Returns:
        (N, M) rates as a Tensor
    """
    u_t, u_0 = as_tensor(u_t), as_tensor(u_0)
    a = _adjacency(g)
    n = a.shape[0]
    if u_t.ndim != 2 or u_t.shape[0] != n:
        raise ShapeMismatchError("node_dynamics_rhs", a.shape, u_t.shape)
    if u_0.shape != u_t.shape:
        raise ShapeMismatchError("node_dynamics_rhs", u_t.shape, u_0.shape)

    degree = reshape(tsum(a, axis=1), (n, 1))
    a_u = matmul(a, u_t)
    out = mul(params.alpha, sub(u_t, u_0))
    if params.beta != 0.0:
        # (L U)_i = D_ii u_i - sum_j A_ij u_j
        out = add(out, mul(params.beta, sub(mul(degree, u_t), a_u)))
    if params.gamma != 0.0:
        inv_sqrt = power(add(degree, 1.0), -0.5)
        s = mul(mul(a, inv_sqrt), reshape(inv_sqrt, (1, n)))
        s_row = reshape(tsum(s, axis=1), (n, 1))
        # sum_k S_jk (u_k - u_j), then summed over the neighbours j of i
        inner = sub(matmul(s, u_t), mul(s_row, u_t))
        out = add(out, mul(params.gamma, matmul(a, inner)))
    return out


def node_dynamics_rhs_array(u_t: np.ndarray, u_0: np.ndarray, adjacency: np.ndarray,
                            params: PhysicsParams) -> np.ndarray:
    """Plain-array version for integration and diagnostics"""
    return node_dynamics_rhs(np.asarray(u_t, dtype=np.float64), np.asarray(u_0, dtype=np.float64),
                             np.asarray(adjacency, dtype=np.float64), params).data


def integrate_rhs(adjacency: np.ndarray, u_0: np.ndarray, params: PhysicsParams, dt: float,
                  steps: int, u_start: np.ndarray = None) -> np.ndarray:
    """
    RK4 integration of the node-dynamics ODE; returns (steps + 1, N, M) samples
    """
    u_0 = np.asarray(u_0, dtype=np.float64)
    u = u_0.copy() if u_start is None else np.array(u_start, dtype=np.float64)
    adjacency = np.asarray(adjacency, dtype=np.float64)
    out = [u.copy()]
    for _ in range(steps):
        k1 = node_dynamics_rhs_array(u, u_0, adjacency, params)
        k2 = node_dynamics_rhs_array(u + 0.5 * dt * k1, u_0, adjacency, params)
        k3 = node_dynamics_rhs_array(u + 0.5 * dt * k2, u_0, adjacency, params)
        k4 = node_dynamics_rhs_array(u + dt * k3, u_0, adjacency, params)
        u = u + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        out.append(u.copy())
    return np.stack(out)


def physics_residual(u_t: ArrayOrTensor, u_next: ArrayOrTensor, u_0: ArrayOrTensor, g,
                     params: PhysicsParams, dt: float = 1.0) -> Tensor:
    """R = (U^{t+1} - U^t) / dt - rhs(U^t)"""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    u_t, u_next = as_tensor(u_t), as_tensor(u_next)
    if u_t.shape != u_next.shape:
        raise ShapeMismatchError("physics_residual", u_t.shape, u_next.shape)
    derivative = mul(sub(u_next, u_t), 1.0 / dt)
    return sub(derivative, node_dynamics_rhs(u_t, u_0, g, params))


def physics_loss(states: Sequence[ArrayOrTensor], u_0: ArrayOrTensor, g, params: PhysicsParams,
                 dt: float = 1.0) -> Tensor:
    """
    Mean squared forward-difference residual, averaged over every consecutive
    pair in `states` (at least two snapshots)

    Raises:
        ValueError: dt <= 0 or fewer than two states
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    states = list(states)
    if len(states) < 2:
        raise ValueError("physics_loss needs at least two consecutive states")
    total = None
    for u_t, u_next in zip(states[:-1], states[1:]):
        r = physics_residual(u_t, u_next, u_0, g, params, dt)
        term = mean(mul(r, r))
        total = term if total is None else add(total, term)
    return mul(total, 1.0 / (len(states) - 1))
