"""
Node-state predictor: a two-layer GCN per snapshot, sinusoidal positional
embeddings, a stacked transformer encoder running along the time axis of
every node, and an affine readout to the next state. The readout also
carries a learned linear skip from the last observed state, initialised to
the identity, so an untrained predictor starts at persistence. For irregular
timestamps the last contextual embedding is first rolled forward by a
learned vector field with RK4.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import ConfigError, DivergenceError, ShapeMismatchError
from core.graph import Graph, sym_normalized_adjacency
from core.nn import glorot_uniform, linear, ones_param, zeros_param
from core.tensor import (Tensor, add, as_tensor, getitem, layer_norm, matmul, mul, relu, reshape,
                         softmax, stack, tanh, transpose)

logger = logging.getLogger(__name__)

ODE_SOLVERS = ("auto", "rk4", "none")


@dataclass
class StateEncoderConfig:
    d_e: int = 16
    n_heads: int = 2
    d_k: int = 8
    n_layers: int = 1
    gcn_hidden: int = 16
    d_ff: int = 32
    ode_solver: str = "auto"
    ode_dt: float = 0.25
    ode_hidden: int = 16

    def __post_init__(self):
        for key in ("d_e", "n_heads", "d_k", "n_layers", "gcn_hidden", "d_ff", "ode_hidden"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"state.{key} must be >= 1")
        if self.n_heads * self.d_k != self.d_e:
            raise ConfigError(f"state: n_heads * d_k ({self.n_heads} * {self.d_k}) must equal d_e ({self.d_e})")
        if self.ode_solver not in ODE_SOLVERS:
            raise ConfigError(f"state.ode_solver must be one of {ODE_SOLVERS}, got '{self.ode_solver}'")
        if self.ode_dt <= 0:
            raise ConfigError("state.ode_dt must be positive")

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Dict) -> "StateEncoderConfig":
        unknown = set(payload) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown state encoder keys: {sorted(unknown)}")
        return cls(**payload)


def init_state_params(config: StateEncoderConfig, feature_dim: int,
                      rng: np.random.Generator) -> Dict[str, Tensor]:
    """Glorot-uniform weights, zero biases, unit LayerNorm gains, identity skip"""
    d, h, dk = config.d_e, config.n_heads, config.d_k
    params = {
        "gcn.W1": glorot_uniform(rng, (feature_dim, config.gcn_hidden)),
        "gcn.W2": glorot_uniform(rng, (config.gcn_hidden, d)),
    }
    for layer in range(config.n_layers):
        p = f"layer{layer}."
        for proj in ("WQ", "WK", "WV"):
            params[p + proj] = glorot_uniform(rng, (h, d, dk))
        params[p + "WO"] = glorot_uniform(rng, (d, d))
        params[p + "ln1.gain"] = ones_param((d,))
        params[p + "ln1.bias"] = zeros_param((d,))
        params[p + "ffn.W1"] = glorot_uniform(rng, (d, config.d_ff))
        params[p + "ffn.b1"] = zeros_param((config.d_ff,))
        params[p + "ffn.W2"] = glorot_uniform(rng, (config.d_ff, d))
        params[p + "ffn.b2"] = zeros_param((d,))
        params[p + "ln2.gain"] = ones_param((d,))
        params[p + "ln2.bias"] = zeros_param((d,))
    params["readout.W"] = glorot_uniform(rng, (d, feature_dim))
    params["readout.W"].data *= 0.01
    params["readout.b"] = zeros_param((feature_dim,))
    params["readout.skip"] = Tensor(np.eye(feature_dim), requires_grad=True)
    params["ode.W1"] = glorot_uniform(rng, (d, config.ode_hidden))
    params["ode.b1"] = zeros_param((config.ode_hidden,))
    params["ode.W2"] = glorot_uniform(rng, (config.ode_hidden, d))
    for name, tensor in params.items():
        tensor.name = name
    return params


# ---------------------------------------------------------------------- building blocks


def gcn_embed(u_t, g, params: Dict[str, Tensor]) -> Tensor:
    """
    E_t = A_sym relu(A_sym U_t W1) W2 with the self-loop normalized adjacency

    Args:
        u_t: (N, M) states
        g: Graph or dense (N, N) adjacency
    """
    adjacency = g.symmetrized().adjacency if isinstance(g, Graph) else np.asarray(g, dtype=np.float64)
    u_t = as_tensor(u_t)
    if u_t.ndim != 2 or u_t.shape[0] != adjacency.shape[0]:
        raise ShapeMismatchError("gcn_embed", adjacency.shape, u_t.shape)
    a_sym = Tensor(sym_normalized_adjacency(adjacency))
    hidden = relu(matmul(a_sym, matmul(u_t, params["gcn.W1"])))
    return matmul(a_sym, matmul(hidden, params["gcn.W2"]))


def positional_embedding(t: int, d_e: int) -> np.ndarray:
    """PE(t, 2n) = sin(t / 10000^(2n/d_e)),  PE(t, 2n+1) = cos(t / 10000^(2n/d_e))"""
    if t < 0:
        raise ValueError(f"position must be non-negative, got {t}")
    pe = np.zeros(d_e)
    pairs = np.arange(0, d_e, 2)
    angle = t / np.power(10000.0, pairs / d_e)
    pe[0::2] = np.sin(angle)
    pe[1::2] = np.cos(angle[: d_e // 2])
    return pe


def encoder_layer(x: Tensor, params: Dict[str, Tensor], layer: int, config: StateEncoderConfig) -> Tuple[Tensor, np.ndarray]:
    """
    One transformer encoder block over x of shape (N, T, d_e); attention runs
    along T independently for every node

    Returns:
        (output (N, T, d_e), attention weights (N, h, T, T))
    """
    p = f"layer{layer}."
    n, t_len, d = x.shape
    x4 = reshape(x, (n, 1, t_len, d))
    q = matmul(x4, params[p + "WQ"])
    k = matmul(x4, params[p + "WK"])
    v = matmul(x4, params[p + "WV"])
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(config.d_k))
    weights = softmax(scores, axis=-1)
    heads = matmul(weights, v)
    merged = reshape(transpose(heads, (0, 2, 1, 3)), (n, t_len, config.n_heads * config.d_k))
    x = layer_norm(add(x, matmul(merged, params[p + "WO"])), params[p + "ln1.gain"], params[p + "ln1.bias"])
    hidden = relu(linear(x, params[p + "ffn.W1"], params[p + "ffn.b1"]))
    ffn = linear(hidden, params[p + "ffn.W2"], params[p + "ffn.b2"])
    x = layer_norm(add(x, ffn), params[p + "ln2.gain"], params[p + "ln2.bias"])
    return x, weights.data


def transformer_encode(sequence: Tensor, params: Dict[str, Tensor],
                       config: StateEncoderConfig) -> Tuple[Tensor, List[np.ndarray]]:
    """Stacked encoder blocks; returns the contextual sequence and per-layer attention"""
    sequence = as_tensor(sequence)
    if sequence.ndim != 3 or sequence.shape[-1] != config.d_e:
        raise ShapeMismatchError("transformer_encode", (None, None, config.d_e), sequence.shape)
    attention = []
    for layer in range(config.n_layers):
        sequence, weights = encoder_layer(sequence, params, layer, config)
        attention.append(weights)
    return sequence, attention


# ---------------------------------------------------------------------- ODE head


def learned_field(params: Dict[str, Tensor]) -> Callable[[Tensor], Tensor]:
    """g(E) = tanh(E W1 + b1) W2"""

    def field(e: Tensor) -> Tensor:
        return matmul(tanh(linear(e, params["ode.W1"], params["ode.b1"])), params["ode.W2"])

    return field


def ode_rollout(field: Callable[[Tensor], Tensor], e_0, t_target: float, dt: float = 0.25) -> Tensor:
    """
    e(t_target) = e_0 + integral of field(e) dt, by RK4 with steps of at most `dt`

    Raises:
        DivergenceError: the rollout produced non-finite embeddings
    """
    if t_target < 0:
        raise ValueError(f"t_target must be non-negative, got {t_target}")
    e = as_tensor(e_0)
    if t_target == 0:
        return e
    n_steps = max(1, int(math.ceil(t_target / dt - 1e-12)))
    h = t_target / n_steps
    for step in range(n_steps):
        k1 = as_tensor(field(e))
        k2 = as_tensor(field(add(e, mul(k1, 0.5 * h))))
        k3 = as_tensor(field(add(e, mul(k2, 0.5 * h))))
        k4 = as_tensor(field(add(e, mul(k3, h))))
        incr = add(add(k1, mul(k2, 2.0)), add(mul(k3, 2.0), k4))
        e = add(e, mul(incr, h / 6.0))
        if not np.all(np.isfinite(e.data)):
            raise DivergenceError("ODE rollout diverged", time=(step + 1) * h)
    return e


# ---------------------------------------------------------------------- prediction


def encode_window(states: Sequence[np.ndarray], graphs: Sequence, params: Dict[str, Tensor],
                  config: StateEncoderConfig) -> Tuple[Tensor, List[np.ndarray]]:
    """GCN + positional embeddings per step, then the transformer; returns (N, T, d_e)"""
    if len(states) < 1 or len(states) != len(graphs):
        raise ValueError("window needs at least one snapshot and one graph per snapshot")
    steps = []
    for t, (u_t, g) in enumerate(zip(states, graphs)):
        steps.append(add(gcn_embed(u_t, g, params), positional_embedding(t, config.d_e)))
    return transformer_encode(stack(steps, axis=1), params, config)


def predict_next_state(states: Sequence[np.ndarray], graphs: Sequence, params: Dict[str, Tensor],
                       config: StateEncoderConfig, t_target: Optional[float] = None) -> Tensor:
    """
    Predicted U^{T+1} (N, M) from a window of T snapshots:
    readout(E_T) + U^T S with the learned skip S

    Args:
        t_target: rollout horizon for the ODE head in units of the mean step;
                  None skips the head
    """
    context, _ = encode_window(states, graphs, params, config)
    last = getitem(context, (slice(None), -1, slice(None)))
    if t_target is not None:
        last = ode_rollout(learned_field(params), last, t_target, dt=config.ode_dt)
    skip = matmul(as_tensor(states[-1]), params["readout.skip"])
    return add(linear(last, params["readout.W"], params["readout.b"]), skip)
