"""Undirected graph container and the walk / hop structures derived from it."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractError

DEFAULT_LOG_EPS = 1e-6


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    """Simple undirected graph with node features and optional labels.

    ``edges`` is an (m, 2) int array of unique pairs with ``u < v``.
    """

    n: int
    edges: np.ndarray
    X: np.ndarray
    labels: np.ndarray | None = None
    name: str = "graph"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if edges.size:
            if edges.min() < 0 or edges.max() >= self.n:
                raise GraphError(f"edge endpoint out of range for n={self.n}")
            if np.any(edges[:, 0] == edges[:, 1]):
                raise GraphError("self-loops are not allowed")
            edges = np.sort(edges, axis=1)
            if len(np.unique(edges, axis=0)) != len(edges):
                raise GraphError("duplicate edges")
            edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
        object.__setattr__(self, "edges", edges)
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] != self.n:
            raise GraphError(f"feature rows {X.shape[0]} != node count {self.n}")
        object.__setattr__(self, "X", X)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (self.n,):
                raise GraphError(f"labels shape {labels.shape} != ({self.n},)")
            if labels.min(initial=0) < 0:
                raise GraphError("labels must be non-negative class ids")
            object.__setattr__(self, "labels", labels)

    @classmethod
    def from_edge_list(cls, n, pairs, X=None, labels=None, name="graph") -> Graph:
        """Build from arbitrary pairs: symmetrizes, drops self-loops and duplicates."""
        pairs = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
        pairs = pairs[pairs[:, 0] != pairs[:, 1]]
        pairs = np.unique(np.sort(pairs, axis=1), axis=0) if len(pairs) else pairs
        if X is None:
            X = np.eye(n)
        return cls(n, pairs, X, labels, name)

    @property
    def m(self) -> int:
        return len(self.edges)

    @property
    def num_classes(self) -> int:
        return 0 if self.labels is None else int(self.labels.max()) + 1

    def adjacency(self) -> np.ndarray:
        if "A" not in self._cache:
            A = np.zeros((self.n, self.n))
            if self.m:
                A[self.edges[:, 0], self.edges[:, 1]] = 1.0
                A[self.edges[:, 1], self.edges[:, 0]] = 1.0
            A.setflags(write=False)
            self._cache["A"] = A
        return self._cache["A"]

    def neighbors(self) -> list[np.ndarray]:
        if "nbrs" not in self._cache:
            adj: list[list[int]] = [[] for _ in range(self.n)]
            for u, v in self.edges:
                adj[u].append(int(v))
                adj[v].append(int(u))
            self._cache["nbrs"] = [np.array(sorted(a), dtype=np.int64) for a in adj]
        return self._cache["nbrs"]

    def permuted(self, perm: np.ndarray) -> Graph:
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        labels = None if self.labels is None else self.labels[inv]
        return Graph(self.n, perm[self.edges], self.X[inv], labels, self.name)


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    P: np.ndarray
    k: int = 1


@dataclass(frozen=True, eq=False)
class LogTransitionSet:
    matrices: list[np.ndarray]
    eps: float

    def __len__(self):
        return len(self.matrices)


def degrees(g: Graph) -> np.ndarray:
    deg = np.zeros(g.n, dtype=np.int64)
    if g.m:
        np.add.at(deg, g.edges.ravel(), 1)
    return deg


def transition_matrix(g: Graph) -> TransitionMatrix:
    """Random walk ``D^-1 A``; isolated nodes keep an all-zero row."""
    A = g.adjacency()
    deg = A.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        P = np.where(deg > 0, A / deg, 0.0)
    return TransitionMatrix(P, 1)


def k_step(P: TransitionMatrix, k: int) -> TransitionMatrix:
    if k < 1:
        raise ContractError(f"k_step: k must be >= 1, got {k}")
    return TransitionMatrix(np.linalg.matrix_power(P.P, k), P.k * k)


def hop_distances(g: Graph, source: int, max_hops: int | None = None) -> dict[int, int]:
    """BFS distances from ``source`` (only nodes within ``max_hops``)."""
    nbrs = g.neighbors()
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        if max_hops is not None and dist[u] >= max_hops:
            continue
        for v in nbrs[u]:
            v = int(v)
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def khop_set(g: Graph, v: int, k: int, include_self: bool = True) -> set[int]:
    if not 0 <= v < g.n:
        raise ContractError(f"khop_set: node {v} out of range")
    if k < 1:
        raise ContractError(f"khop_set: k must be >= 1, got {k}")
    found = set(hop_distances(g, v, k))
    if not include_self:
        found.discard(v)
    return found


def reachability(g: Graph, k: int) -> np.ndarray:
    """Boolean n x n matrix: hop distance <= k, diagonal included."""
    if k < 1:
        raise ContractError(f"reachability: k must be >= 1, got {k}")
    key = ("reach", k)
    if key not in g._cache:
        step = (g.adjacency() + np.eye(g.n)).astype(np.float32)
        R = step
        for _ in range(k - 1):
            R = ((R @ step) > 0).astype(np.float32)
        out = R > 0
        out.setflags(write=False)
        g._cache[key] = out
    return g._cache[key]


def log_transitions(P: TransitionMatrix, P_max: int = 3, eps: float = DEFAULT_LOG_EPS) -> LogTransitionSet:
    if P_max < 1:
        raise ContractError(f"log_transitions: P_max must be >= 1, got {P_max}")
    if eps <= 0:
        raise ContractError(f"log_transitions: eps must be positive, got {eps}")
    mats = []
    power = P.P
    for p in range(1, P_max + 1):
        if p > 1:
            power = power @ P.P
        mats.append(np.log(power + eps))
    return LogTransitionSet(mats, eps)
