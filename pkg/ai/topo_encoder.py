"""
Topology predictor: neighbour attention per snapshot (stacked L times),
an LSTM over each node's spatial embeddings, attention fusion of all
spatiotemporal embeddings into q_i, and a two-layer MLP edge decoder on
[q_i, q_j, a_ij] where a_ij is the last observed link.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from core.errors import ConfigError, ShapeMismatchError
from core.graph import Graph
from core.nn import glorot_uniform, linear, masked_softmax, zeros_param
from core.tensor import (Tensor, add, as_tensor, concat, getitem, matmul, mul, relu, reshape, sigmoid,
                         softmax, stack, tanh, tsum)

logger = logging.getLogger(__name__)


@dataclass
class TopoEncoderConfig:
    d_z: int = 8
    L_hops: int = 2
    d_h: int = 8
    d_att: int = 8
    d_q: int = 8
    mlp_hidden: int = 16
    negative_ratio: float = 1.0

    def __post_init__(self):
        for key in ("d_z", "L_hops", "d_h", "d_att", "d_q", "mlp_hidden"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"topo.{key} must be >= 1")
        if self.d_h != self.d_z:
            raise ConfigError(f"topo.d_h ({self.d_h}) must equal topo.d_z ({self.d_z})")
        if self.negative_ratio <= 0:
            raise ConfigError("topo.negative_ratio must be positive")

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Dict) -> "TopoEncoderConfig":
        unknown = set(payload) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown topology encoder keys: {sorted(unknown)}")
        return cls(**payload)


def init_topo_params(config: TopoEncoderConfig, feature_dim: int,
                     rng: np.random.Generator) -> Dict[str, Tensor]:
    params = {}
    d_in = feature_dim
    for hop in range(config.L_hops):
        p = f"spatial{hop}."
        # W_z1 acting on [u_i, u_j, e_ij], stored as its three column blocks
        params[p + "Wz1.self"] = glorot_uniform(rng, (d_in, config.d_att))
        params[p + "Wz1.nbr"] = glorot_uniform(rng, (d_in, config.d_att))
        params[p + "Wz1.edge"] = glorot_uniform(rng, (1, config.d_att))
        params[p + "vz"] = glorot_uniform(rng, (config.d_att, 1))
        params[p + "Wz2"] = glorot_uniform(rng, (d_in + 1, config.d_z))
        params[p + "bz2"] = zeros_param((config.d_z,))
        params[p + "Wz3"] = glorot_uniform(rng, (d_in + config.d_z, config.d_z))
        params[p + "bz3"] = zeros_param((config.d_z,))
        d_in = config.d_z
    params["lstm.Wx"] = glorot_uniform(rng, (config.d_z, 4 * config.d_h))
    params["lstm.Wh"] = glorot_uniform(rng, (config.d_h, 4 * config.d_h))
    params["lstm.b"] = zeros_param((4 * config.d_h,))
    params["fuse.ve2"] = glorot_uniform(rng, (config.d_z, 1))
    params["fuse.Ve1"] = glorot_uniform(rng, (config.d_z, config.d_q))
    params["mlp.W1.i"] = glorot_uniform(rng, (config.d_q, config.mlp_hidden))
    params["mlp.W1.j"] = glorot_uniform(rng, (config.d_q, config.mlp_hidden))
    params["mlp.W1.edge"] = glorot_uniform(rng, (1, config.mlp_hidden))
    params["mlp.b1"] = zeros_param((config.mlp_hidden,))
    params["mlp.W2"] = glorot_uniform(rng, (config.mlp_hidden, 1))
    params["mlp.b2"] = zeros_param((1,))
    for name, tensor in params.items():
        tensor.name = name
    return params


def _dense(g) -> np.ndarray:
    return g.symmetrized().adjacency if isinstance(g, Graph) else np.asarray(g, dtype=np.float64)


def spatial_layer(u, adjacency: np.ndarray, params: Dict[str, Tensor], hop: int) -> Tuple[Tensor, Tensor]:
    """
    a_ij = softmax_j over neighbours of v_z . sigmoid(W_z1 [u_i, u_j, e_ij])
    z'_i = sigmoid(W_z2 sum_j a_ij [u_j, e_ij])   (zero for isolated nodes)
    z_i  = sigmoid(W_z3 [u_i, z'_i])

    Returns:
        (z (N, d_z), attention (N, N))
    """
    p = f"spatial{hop}."
    u = as_tensor(u)
    n = adjacency.shape[0]
    if u.ndim != 2 or u.shape[0] != n:
        raise ShapeMismatchError("spatial_aggregate", adjacency.shape, u.shape)
    d_att = params[p + "vz"].shape[0]
    mask = (adjacency > 0).astype(np.float64)
    has_neighbour = mask.sum(axis=1, keepdims=True) > 0

    pre = add(add(reshape(matmul(u, params[p + "Wz1.self"]), (n, 1, d_att)),
                  reshape(matmul(u, params[p + "Wz1.nbr"]), (1, n, d_att))),
              mul(adjacency.reshape(n, n, 1), reshape(params[p + "Wz1.edge"], (1, 1, d_att))))
    scores = reshape(matmul(sigmoid(pre), params[p + "vz"]), (n, n))
    attention = masked_softmax(scores, mask, axis=1)

    message = concat([matmul(attention, u), reshape(tsum(mul(attention, adjacency), axis=1), (n, 1))], axis=1)
    z_prime = mul(sigmoid(linear(message, params[p + "Wz2"], params[p + "bz2"])), has_neighbour.astype(np.float64))
    z = sigmoid(linear(concat([u, z_prime], axis=1), params[p + "Wz3"], params[p + "bz3"]))
    return z, attention


def spatial_aggregate(u_t, g, params: Dict[str, Tensor], config: TopoEncoderConfig) -> Tuple[Tensor, List[np.ndarray]]:
    """Stacks `L_hops` spatial layers on one snapshot; z has an L-hop receptive field"""
    adjacency = _dense(g)
    z = as_tensor(u_t)
    attention = []
    for hop in range(config.L_hops):
        z, weights = spatial_layer(z, adjacency, params, hop)
        attention.append(weights.data)
    return z, attention


def temporal_aggregate(z_seq: Sequence[Tensor], params: Dict[str, Tensor]) -> List[Tensor]:
    """Standard LSTM (input, forget, cell, output gates) over each node's sequence"""
    if not z_seq:
        raise ValueError("temporal_aggregate needs a non-empty sequence")
    n = z_seq[0].shape[0]
    d_h = params["lstm.Wh"].shape[0]
    h = Tensor(np.zeros((n, d_h)))
    c = Tensor(np.zeros((n, d_h)))
    hidden = []
    for z in z_seq:
        gates = add(add(matmul(as_tensor(z), params["lstm.Wx"]), matmul(h, params["lstm.Wh"])), params["lstm.b"])
        i = sigmoid(getitem(gates, (slice(None), slice(0, d_h))))
        f = sigmoid(getitem(gates, (slice(None), slice(d_h, 2 * d_h))))
        g = tanh(getitem(gates, (slice(None), slice(2 * d_h, 3 * d_h))))
        o = sigmoid(getitem(gates, (slice(None), slice(3 * d_h, 4 * d_h))))
        c = add(mul(f, c), mul(i, g))
        h = mul(o, tanh(c))
        hidden.append(h)
    return hidden


def fuse(members: Sequence[Tensor], params: Dict[str, Tensor]) -> Tuple[Tensor, np.ndarray]:
    """
    q_i = sigmoid(Ve1^T sum_e delta_e e), delta = softmax_e(ve2 . sigmoid(e))

    Args:
        members: spatiotemporal embeddings, each (N, d_z)

    Returns:
        (q (N, d_q), delta (N, |E|))
    """
    if not members:
        raise ValueError("fuse needs at least one embedding")
    e = stack(members, axis=1)
    n, count, _ = e.shape
    delta = softmax(reshape(matmul(sigmoid(e), params["fuse.ve2"]), (n, count)), axis=1)
    pooled = reshape(matmul(reshape(delta, (n, 1, count)), e), (n, e.shape[-1]))
    return sigmoid(matmul(pooled, params["fuse.Ve1"])), delta.data


def decode_edges(q, params: Dict[str, Tensor], symmetric: bool = True, adjacency=None) -> Tensor:
    """
    A_ij = sigmoid(MLP([q_i, q_j, a_ij])), symmetrized, with a zero diagonal

    Args:
        adjacency: last observed (N, N) adjacency; None decodes from q alone
    """
    q = as_tensor(q)
    n = q.shape[0]
    width = params["mlp.b1"].shape[0]
    pre = add(add(reshape(matmul(q, params["mlp.W1.i"]), (n, 1, width)),
                  reshape(matmul(q, params["mlp.W1.j"]), (1, n, width))), params["mlp.b1"])
    if adjacency is not None:
        adjacency = np.asarray(adjacency, dtype=np.float64)
        if adjacency.shape != (n, n):
            raise ShapeMismatchError("decode_edges", (n, n), adjacency.shape)
        pre = add(pre, mul(adjacency.reshape(n, n, 1), reshape(params["mlp.W1.edge"], (1, 1, width))))
    hidden = relu(pre)
    logits = add(reshape(matmul(hidden, params["mlp.W2"]), (n, n)), params["mlp.b2"])
    probs = sigmoid(logits)
    if symmetric:
        probs = mul(add(probs, probs.T), 0.5)
    return mul(probs, 1.0 - np.eye(n))


def predict_topology(states: Sequence[np.ndarray], graphs: Sequence, params: Dict[str, Tensor],
                     config: TopoEncoderConfig) -> Tuple[Tensor, Dict[str, np.ndarray]]:
    """Full pipeline over a window; returns predicted A^{T+1} and diagnostics"""
    if len(states) < 1 or len(states) != len(graphs):
        raise ValueError("window needs at least one snapshot and one graph per snapshot")
    z_seq = [spatial_aggregate(u_t, g, params, config)[0] for u_t, g in zip(states, graphs)]
    h_seq = temporal_aggregate(z_seq, params)
    q, delta = fuse(z_seq + h_seq, params)
    return decode_edges(q, params, adjacency=_dense(graphs[-1])), {"delta": delta, "q": q.data}
