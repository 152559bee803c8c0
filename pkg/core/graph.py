"""
Graph and temporal-graph data model.

Holds the immutable `Graph` / `TemporalGraphDataset` types, the degree /
Laplacian / symmetric-normalisation operators, connectivity analysis and
the on-disk dataset format (meta.json + snapshots.jsonl).
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from core.errors import DatasetError, ShapeMismatchError

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12
META_FILE = "meta.json"
SNAPSHOTS_FILE = "snapshots.jsonl"


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Graph:
    """
    Weighted graph on n nodes given by its adjacency matrix.
    Undirected graphs (default) must be symmetric with a zero diagonal.
    """

    adjacency: np.ndarray
    directed: bool = False

    def __post_init__(self):
        adjacency = np.asarray(self.adjacency, dtype=np.float64)
        if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
            raise DatasetError(f"adjacency must be square, got shape {adjacency.shape}")
        if not np.all(np.isfinite(adjacency)) or np.any(adjacency < 0):
            raise DatasetError("adjacency weights must be finite and non-negative")
        if np.any(np.diag(adjacency) != 0):
            raise DatasetError("adjacency diagonal must be zero (no self-loops)")
        if not self.directed and not np.allclose(adjacency, adjacency.T, atol=SYMMETRY_TOL, rtol=0):
            raise DatasetError("undirected graph requires a symmetric adjacency")
        object.__setattr__(self, "adjacency", _frozen(adjacency))

    @classmethod
    def empty(cls, n: int) -> "Graph":
        return cls(np.zeros((n, n)))

    @classmethod
    def from_edges(cls, n: int, edges: Sequence[Sequence[float]], directed: bool = False) -> "Graph":
        """Edges are (i, j) or (i, j, w); undirected edges are mirrored"""
        adjacency = np.zeros((n, n))
        for edge in edges:
            i, j = int(edge[0]), int(edge[1])
            w = float(edge[2]) if len(edge) > 2 else 1.0
            if not (0 <= i < n and 0 <= j < n):
                raise DatasetError(f"edge ({i}, {j}) out of range for {n} nodes")
            adjacency[i, j] = w
            if not directed:
                adjacency[j, i] = w
        return cls(adjacency, directed=directed)

    @classmethod
    def from_networkx(cls, g: nx.Graph, n: Optional[int] = None) -> "Graph":
        n = g.number_of_nodes() if n is None else n
        return cls(nx.to_numpy_array(g, nodelist=range(n), weight="weight"))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def symmetrized(self) -> "Graph":
        if not self.directed:
            return self
        a = self.adjacency
        return Graph((a + a.T) / 2.0)

    def edges(self) -> List[Tuple[int, int, float]]:
        """Undirected edge list (i < j, weight)"""
        a = self.symmetrized().adjacency
        rows, cols = np.nonzero(np.triu(a, k=1))
        return [(int(i), int(j), float(a[i, j])) for i, j in zip(rows, cols)]

    def edge_count(self) -> int:
        return int(np.count_nonzero(np.triu(self.symmetrized().adjacency, k=1)))

    def degrees(self) -> np.ndarray:
        return self.symmetrized().adjacency.sum(axis=1)

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.n))
        g.add_weighted_edges_from(self.edges())
        return g


@dataclass(frozen=True, eq=False)
class LaplacianBundle:
    degree: np.ndarray
    laplacian: np.ndarray
    sym_norm_adjacency: np.ndarray


def degree_matrix(adjacency: np.ndarray) -> np.ndarray:
    return np.diag(np.asarray(adjacency, dtype=np.float64).sum(axis=1))


def sym_normalized_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """D~^{-1/2} (A + I) D~^{-1/2}; the self-loop keeps every degree positive"""
    augmented = np.asarray(adjacency, dtype=np.float64) + np.eye(len(adjacency))
    inv_sqrt = 1.0 / np.sqrt(augmented.sum(axis=1))
    return augmented * inv_sqrt[:, None] * inv_sqrt[None, :]


def laplacian(g: Graph) -> LaplacianBundle:
    """
    L = D - A for the (symmetrized) graph, plus the self-loop normalized adjacency

    Raises:
        DatasetError: asymmetric adjacency flagged as undirected
    """
    if not isinstance(g, Graph):
        g = Graph(np.asarray(g))
    a = g.symmetrized().adjacency
    d = degree_matrix(a)
    return LaplacianBundle(degree=_frozen(d), laplacian=_frozen(d - a),
                           sym_norm_adjacency=_frozen(sym_normalized_adjacency(a)))


def graph_laplacian_apply(lap: np.ndarray, states: np.ndarray) -> np.ndarray:
    """Row i of the result is D_ii u_i - sum_j A_ij u_j"""
    lap = np.asarray(lap, dtype=np.float64)
    states = np.asarray(states, dtype=np.float64)
    squeeze = states.ndim == 1
    if squeeze:
        states = states[:, None]
    if lap.ndim != 2 or lap.shape[1] != states.shape[0]:
        raise ShapeMismatchError("graph_laplacian_apply", lap.shape, states.shape)
    out = lap @ states
    return out[:, 0] if squeeze else out


def connected_components(g: Graph) -> Tuple[int, np.ndarray]:
    """
    Structural component count and per-node labels.
    Labels are numbered in order of each component's smallest node index.
    """
    components = sorted(nx.connected_components(g.symmetrized().to_networkx()), key=min)
    labels = np.empty(g.n, dtype=np.int64)
    for label, members in enumerate(components):
        labels[list(members)] = label
    return len(components), labels


def jacobi_eigenvalues(matrix: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> np.ndarray:
    """
    Eigenvalues of a symmetric matrix by cyclic Jacobi rotations (ascending).
    Intended for desk-scale diagnostics.
    """
    a = np.array(matrix, dtype=np.float64)
    n = a.shape[0]
    if n == 0:
        return np.zeros(0)
    scale = max(np.linalg.norm(a), 1.0)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(a, k=1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = a[:, p].copy()
                rot_q = a[:, q].copy()
                a[:, p] = c * rot_p - s * rot_q
                a[:, q] = s * rot_p + c * rot_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
    return np.sort(np.diag(a))


def zero_eigenvalue_multiplicity(g: Graph, tol: float = 1e-8) -> int:
    return int(np.sum(np.abs(jacobi_eigenvalues(laplacian(g).laplacian)) < tol))


# ---------------------------------------------------------------------- temporal datasets


@dataclass(frozen=True, eq=False)
class Snapshot:
    t: int
    graph: Graph
    states: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.float64)
        if states.ndim == 1:
            states = states[:, None]
        if states.ndim != 2 or states.shape[0] != self.graph.n:
            raise DatasetError(f"snapshot t={self.t}: states shape {states.shape} does not match {self.graph.n} nodes")
        if not np.all(np.isfinite(states)):
            raise DatasetError(f"snapshot t={self.t}: non-finite node states")
        object.__setattr__(self, "states", _frozen(states))


@dataclass(frozen=True, eq=False)
class TemporalGraphDataset:
    """
    Time-ordered snapshots sharing node count N and feature dimension M.
    `metadata` keeps generator provenance (seed, generator, dynamics, ...).
    """

    name: str
    snapshots: Tuple[Snapshot, ...]
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        snapshots = tuple(self.snapshots)
        if not snapshots:
            raise DatasetError("dataset has no snapshots")
        n, m = snapshots[0].states.shape
        previous = None
        for snap in snapshots:
            if snap.states.shape != (n, m):
                raise DatasetError(f"snapshot t={snap.t} has shape {snap.states.shape}, expected {(n, m)}")
            if previous is not None and snap.t <= previous:
                raise DatasetError("snapshot timestamps must be strictly increasing")
            previous = snap.t
        object.__setattr__(self, "snapshots", snapshots)

    @property
    def node_count(self) -> int:
        return self.snapshots[0].states.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.snapshots[0].states.shape[1]

    @property
    def horizon(self) -> int:
        return len(self.snapshots)

    @property
    def timestamps(self) -> List[int]:
        return [s.t for s in self.snapshots]

    def is_regular(self) -> bool:
        gaps = np.diff(self.timestamps)
        return bool(gaps.size == 0 or np.all(gaps == gaps[0]))

    def mean_gap(self) -> float:
        gaps = np.diff(self.timestamps)
        return float(gaps.mean()) if gaps.size else 1.0

    def states_array(self) -> np.ndarray:
        """(T, N, M)"""
        return np.stack([s.states for s in self.snapshots])

    def adjacency_array(self) -> np.ndarray:
        """(T, N, N)"""
        return np.stack([s.graph.adjacency for s in self.snapshots])


def save_dataset(dataset: TemporalGraphDataset, out_dir: str) -> None:
    """Writes meta.json and snapshots.jsonl (edges once per pair, i < j)"""
    os.makedirs(out_dir, exist_ok=True)
    meta = dict(dataset.metadata)
    meta.update({
        "name": dataset.name,
        "n_nodes": dataset.node_count,
        "feature_dim": dataset.feature_dim,
        "horizon": dataset.horizon,
        "timestamps": dataset.timestamps,
    })
    for key in ("generator", "seed", "dynamics"):
        meta.setdefault(key, None)
    with open(os.path.join(out_dir, META_FILE), "w", encoding="utf-8") as f:
        json.dump(meta, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")
    with open(os.path.join(out_dir, SNAPSHOTS_FILE), "w", encoding="utf-8") as f:
        for snap in dataset.snapshots:
            record = {
                "t": int(snap.t),
                "edges": [[i, j, w] for i, j, w in snap.graph.edges()],
                "states": snap.states.tolist(),
            }
            f.write(json.dumps(record, separators=(",", ":")) + "\n")
    logger.info("✅ Dataset %s saved to %s (%d snapshots)", dataset.name, out_dir, dataset.horizon)


def load_dataset(path: str) -> TemporalGraphDataset:
    meta_path = os.path.join(path, META_FILE)
    snaps_path = os.path.join(path, SNAPSHOTS_FILE)
    if not os.path.exists(meta_path) or not os.path.exists(snaps_path):
        raise DatasetError(f"{path} is not a dataset directory ({META_FILE} / {SNAPSHOTS_FILE} missing)")
    try:
        with open(meta_path, "r", encoding="utf-8") as f:
            meta = json.load(f)
        n = int(meta["n_nodes"])
        snapshots = []
        with open(snaps_path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, 1):
                if not line.strip():
                    continue
                record = json.loads(line)
                graph = Graph.from_edges(n, record["edges"])
                snapshots.append(Snapshot(t=int(record["t"]), graph=graph, states=np.asarray(record["states"])))
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise DatasetError(f"cannot parse dataset at {path}: {e}") from e
    dataset = TemporalGraphDataset(name=meta.get("name", os.path.basename(path)), snapshots=tuple(snapshots), metadata=meta)
    if dataset.feature_dim != int(meta.get("feature_dim", dataset.feature_dim)):
        raise DatasetError(f"feature_dim {meta.get('feature_dim')} in meta does not match states")
    if dataset.horizon != int(meta.get("horizon", dataset.horizon)):
        raise DatasetError(f"horizon {meta.get('horizon')} in meta does not match {dataset.horizon} snapshots")
    logger.info("✅ Loaded dataset %s: N=%d M=%d T=%d", dataset.name, dataset.node_count,
                dataset.feature_dim, dataset.horizon)
    return dataset
