"""
Node-dynamics rhs and the physics residual loss.
"""

import networkx as nx
import numpy as np
import pytest

from ai.physics import (PhysicsParams, integrate_rhs, node_dynamics_rhs, node_dynamics_rhs_array, physics_loss,
                        physics_residual)
from core.errors import ConfigError, ShapeMismatchError
from core.graph import Graph
from core.nn import check_gradients
from core.tensor import Tensor

ZERO = PhysicsParams(alpha=0.0, beta=0.0, gamma=0.0)


def triangle() -> Graph:
    return Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])


def five_nodes() -> Graph:
    return Graph.from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 2), (1, 4)])


def test_zero_gains_give_zero_rhs():
    rng = np.random.default_rng(0)
    out = node_dynamics_rhs(rng.normal(size=(3, 2)), rng.normal(size=(3, 2)), triangle(), ZERO)
    assert np.array_equal(out.data, np.zeros((3, 2)))


def test_uniform_states_are_annihilated_by_diffusion():
    params = PhysicsParams(alpha=0.0, beta=-0.7, gamma=0.4)
    u = np.full((5, 2), 3.25)
    out = node_dynamics_rhs(u, np.zeros((5, 2)), five_nodes(), params).data
    assert np.allclose(out, 0.0, atol=1e-12)


def test_triangle_hand_evaluation():
    params = PhysicsParams(alpha=1.0, beta=1.0, gamma=0.0)
    out = node_dynamics_rhs(np.array([[1.0], [0.0], [0.0]]), np.zeros((3, 1)), triangle(), params)
    assert np.allclose(out.data[:, 0], [3.0, -1.0, -1.0])


def test_two_hop_term_on_path():
    # path 0-1-2, only the gamma term; D~ = [2, 3, 2]
    g = Graph.from_edges(3, [(0, 1), (1, 2)])
    u = np.array([[1.0], [0.0], [0.0]])
    out = node_dynamics_rhs(u, np.zeros((3, 1)), g, PhysicsParams(alpha=0.0, beta=0.0, gamma=1.0)).data[:, 0]
    s01 = 1.0 / np.sqrt(6.0)
    # inner_j = sum_k S_jk (u_k - u_j): inner_0 = -s01, inner_1 = s01, inner_2 = 0
    assert np.allclose(out, [s01, -s01, s01])


def test_graph_and_dense_inputs_agree():
    rng = np.random.default_rng(1)
    u, u0 = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    params = PhysicsParams()
    via_graph = node_dynamics_rhs(u, u0, five_nodes(), params).data
    via_array = node_dynamics_rhs_array(u, u0, five_nodes().adjacency, params)
    assert np.array_equal(via_graph, via_array)


def test_rhs_is_permutation_equivariant():
    g = Graph.from_networkx(nx.gnp_random_graph(8, 0.4, seed=2), 8)
    rng = np.random.default_rng(2)
    u, u0 = rng.normal(size=(8, 3)), rng.normal(size=(8, 3))
    p = np.eye(8)[rng.permutation(8)]
    params = PhysicsParams()
    base = node_dynamics_rhs(u, u0, g, params).data
    permuted = node_dynamics_rhs(p @ u, p @ u0, p @ g.adjacency @ p.T, params).data
    assert np.allclose(permuted, p @ base, atol=1e-12)


def test_rhs_shape_checks():
    with pytest.raises(ShapeMismatchError):
        node_dynamics_rhs(np.zeros((4, 1)), np.zeros((4, 1)), triangle(), ZERO)
    with pytest.raises(ShapeMismatchError):
        node_dynamics_rhs(np.zeros((3, 1)), np.zeros((3, 2)), triangle(), ZERO)


# ---------------------------------------------------------------------- loss


def test_constant_states_with_zero_gains_have_zero_loss():
    u = np.ones((3, 1))
    assert physics_loss([u, u, u], u, triangle(), ZERO).item() == 0.0


def test_explicit_euler_step_has_zero_residual():
    params = PhysicsParams(alpha=1.0, beta=-0.5, gamma=-0.1)
    u0 = np.array([[1.0], [2.0], [-3.0]])
    u_t = np.zeros((3, 1))
    dt = 0.5
    u_next = u_t + dt * node_dynamics_rhs_array(u_t, u0, triangle().adjacency, params)
    assert physics_loss([u_t, u_next], u0, triangle(), params, dt=dt).item() == 0.0
    assert np.array_equal(physics_residual(u_t, u_next, u0, triangle(), params, dt).data, np.zeros((3, 1)))


def test_rk4_trajectory_has_tiny_loss():
    params = PhysicsParams(alpha=-0.05, beta=-0.1, gamma=-0.02)
    u0 = np.random.default_rng(3).uniform(0, 1, size=(5, 2))
    states = integrate_rhs(five_nodes().adjacency, u0, params, dt=1e-3, steps=20)
    assert states.shape == (21, 5, 2)
    assert physics_loss(list(states), u0, five_nodes(), params, dt=1e-3).item() < 1e-6


def test_loss_is_non_negative_and_validates_arguments():
    rng = np.random.default_rng(4)
    states = [rng.normal(size=(3, 1)) for _ in range(3)]
    assert physics_loss(states, states[0], triangle(), PhysicsParams()).item() >= 0.0
    with pytest.raises(ValueError):
        physics_loss(states, states[0], triangle(), PhysicsParams(), dt=0.0)
    with pytest.raises(ValueError):
        physics_loss(states[:1], states[0], triangle(), PhysicsParams())


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    raw = rng.uniform(0.1, 0.9, size=(5, 5))
    adjacency = Tensor(np.triu(raw, 1) + np.triu(raw, 1).T, requires_grad=True)
    u_t = Tensor(rng.normal(size=(5, 2)), requires_grad=True)
    u_next = Tensor(rng.normal(size=(5, 2)), requires_grad=True)
    u0 = Tensor(rng.normal(size=(5, 2)), requires_grad=True)
    params = PhysicsParams()
    report = check_gradients(lambda: physics_loss([u_t, u_next], u0, adjacency, params, dt=0.5),
                             {"adjacency": adjacency, "u_t": u_t, "u_next": u_next, "u0": u0}, floor=1e-3)
    assert max(report.values()) < 1e-3, report


def test_physics_params_validation():
    with pytest.raises(ConfigError):
        PhysicsParams(alpha=float("nan"))
    with pytest.raises(ConfigError):
        PhysicsParams.from_dict({"delta": 1.0})
    assert PhysicsParams.from_dict({"beta": -1}).to_dict() == {"alpha": -0.2, "beta": -1.0, "gamma": -0.1}
