"""Communication topologies, connectivity and gossip averaging."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .stats import RngStream


@dataclass(frozen=True)
class CommGraph:
    """Undirected communication graph with Metropolis mixing weights.

    ``edges`` is an ``E x 2`` array with ``i < j``; ``intermittent`` flags the
    edges whose availability is random per iteration (inter-plane links).
    """

    n: int
    edges: np.ndarray
    radius_r: float | None = None
    intermittent: np.ndarray | None = None

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        flags = (np.zeros(len(e), dtype=bool) if self.intermittent is None
                 else np.asarray(self.intermittent, dtype=bool).ravel())
        if flags.shape != (len(e),):
            raise ValueError("intermittent flags must match the edge count")
        if e.size:
            e = np.sort(e, axis=1)
            if np.any(e[:, 0] == e[:, 1]):
                raise ValueError("self-loops are not allowed")
            if e.min() < 0 or e.max() >= self.n:
                raise ValueError("edge endpoint out of range")
            e, first = np.unique(e, axis=0, return_index=True)
            flags = flags[first]
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "intermittent", flags)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def degrees(self, mask: np.ndarray | None = None) -> np.ndarray:
        e = self.edges if mask is None else self.edges[mask]
        return np.bincount(e.ravel(), minlength=self.n)

    def mean_degree(self) -> float:
        return float(self.degrees().mean()) if self.n else 0.0

    def neighbors(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in self.edges:
            adj[i].append(int(j))
            adj[j].append(int(i))
        return [sorted(a) for a in adj]

    def edge_weights(self) -> np.ndarray:
        """Metropolis weight ``1 / (1 + max(deg_i, deg_j))`` per edge."""
        deg = self.degrees()
        return 1.0 / (1.0 + np.maximum(deg[self.edges[:, 0]], deg[self.edges[:, 1]]))

    def mixing_matrix(self, mask: np.ndarray | None = None) -> sparse.csr_matrix:
        """Symmetric doubly stochastic mixing matrix.

        Edges switched off by ``mask`` keep their weight on the diagonal, so
        rows still sum to one.
        """
        w = self.edge_weights()
        if mask is not None:
            w = np.where(mask, w, 0.0)
        i, j = self.edges[:, 0], self.edges[:, 1]
        diag = 1.0 - np.bincount(i, weights=w, minlength=self.n) \
            - np.bincount(j, weights=w, minlength=self.n)
        rows = np.concatenate([i, j, np.arange(self.n)])
        cols = np.concatenate([j, i, np.arange(self.n)])
        vals = np.concatenate([w, w, diag])
        return sparse.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "edges": self.edges.tolist(),
            "radius": self.radius_r,
            "intermittent": self.edges[self.intermittent].tolist(),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n", encoding="utf-8")


def load_graph(path) -> CommGraph:
    """Load a graph from a JSON edge list ``{"n", "edges", ["radius"], ["intermittent"]}``."""
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    return graph_from_dict(d)


def graph_from_dict(d: dict) -> CommGraph:
    n = int(d["n"])
    edges = np.asarray(d.get("edges", []), dtype=np.int64).reshape(-1, 2)
    g = CommGraph(n, edges, d.get("radius"))
    flagged = {tuple(sorted(map(int, e))) for e in d.get("intermittent", [])}
    if flagged:
        flags = np.array([tuple(e) in flagged for e in g.edges.tolist()], dtype=bool)
        g = CommGraph(n, g.edges, g.radius_r, flags)
    return g


def build_geometric(positions, radius: float) -> CommGraph:
    """Random geometric graph: edge iff Euclidean distance <= ``radius``."""
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    if radius <= 0:
        return CommGraph(len(pos), np.empty((0, 2), dtype=np.int64), float(radius))
    pairs = cKDTree(pos).query_pairs(r=radius, output_type="ndarray")
    return CommGraph(len(pos), pairs, float(radius))


def radius_for_degree(n: int, target_degree: float) -> float:
    """Radius giving roughly ``target_degree`` neighbors for ``n`` uniform points
    in the unit square (ignores boundary losses)."""
    if n < 2:
        return 0.0
    return float(np.sqrt(target_degree / (np.pi * (n - 1))))


def components(g: CommGraph, mask: np.ndarray | None = None) -> np.ndarray:
    """Component label per node, via BFS over the (optionally masked) edges."""
    adj: list[list[int]] = [[] for _ in range(g.n)]
    edges = g.edges if mask is None else g.edges[mask]
    for i, j in edges:
        adj[i].append(int(j))
        adj[j].append(int(i))
    label = np.full(g.n, -1, dtype=np.int64)
    current = 0
    for start in range(g.n):
        if label[start] >= 0:
            continue
        label[start] = current
        queue = deque([start])
        while queue:
            v = queue.popleft()
            for w in adj[v]:
                if label[w] < 0:
                    label[w] = current
                    queue.append(w)
        current += 1
    return label


def is_connected(g: CommGraph, mask: np.ndarray | None = None) -> bool:
    if g.n <= 1:
        return True
    return bool(np.all(components(g, mask) == 0))


def gossip_average(g: CommGraph, values, k_rounds: int, dropout_mask=None,
                   mixing: sparse.csr_matrix | None = None) -> np.ndarray:
    """Apply ``k_rounds`` synchronous neighbor-averaging rounds.

    ``values`` is ``n x S`` (one row per node). ``dropout_mask`` is a boolean
    vector over edges, True where the link is up. Without dropout the global
    average is preserved exactly (up to round-off).
    """
    if k_rounds < 1:
        raise ValueError("k_rounds must be >= 1")
    x = np.asarray(values, dtype=float)
    w = mixing if mixing is not None else g.mixing_matrix(dropout_mask)
    for _ in range(k_rounds):
        x = w @ x
    return np.asarray(x)


@dataclass(frozen=True)
class DropoutSchedule:
    """Per-iteration link availability.

    Flagged (intermittent) edges are up with probability ``up_prob``;
    ``extra_drop_prob`` then drops each flagged edge, or every edge when the
    graph has no flagged ones. Draws come from ``RngStream(seed, iteration)``.
    """

    graph: CommGraph
    up_prob: float = 1.0
    seed: int = 0

    def mask(self, iteration: int, extra_drop_prob: float = 0.0) -> np.ndarray:
        g = self.graph
        up = np.ones(g.n_edges, dtype=bool)
        if g.n_edges == 0:
            return up
        rng = RngStream(self.seed, 1_000_003 + iteration).generator()
        draws = rng.random((2, g.n_edges))
        flagged = g.intermittent
        if self.up_prob < 1.0:
            up &= ~flagged | (draws[0] < self.up_prob)
        if extra_drop_prob > 0.0:
            target = flagged if flagged.any() else np.ones(g.n_edges, dtype=bool)
            up &= ~target | (draws[1] >= extra_drop_prob)
        return up


def build_constellation(planes: int, per_plane: int, interplane_up_prob: float = 1.0,
                        seed: int = 0) -> tuple[CommGraph, DropoutSchedule]:
    """Ring inside each orbital plane plus same-slot links to adjacent planes.

    Node ``p * per_plane + k`` is slot ``k`` of plane ``p``. Planes form a ring
    when there are at least three of them. Inter-plane links are flagged
    intermittent and are up with probability ``interplane_up_prob`` per
    iteration.
    """
    if planes < 1 or per_plane < 1:
        raise ValueError("planes and per_plane must be >= 1")
    edges, flags = [], []
    for p in range(planes):
        base = p * per_plane
        if per_plane == 2:
            edges.append((base, base + 1))
            flags.append(False)
        elif per_plane > 2:
            for k in range(per_plane):
                edges.append((base + k, base + (k + 1) % per_plane))
                flags.append(False)
    plane_pairs = [(p, p + 1) for p in range(planes - 1)]
    if planes >= 3:
        plane_pairs.append((planes - 1, 0))
    for p, q in plane_pairs:
        for k in range(per_plane):
            edges.append((p * per_plane + k, q * per_plane + k))
            flags.append(True)
    g = CommGraph(planes * per_plane, np.array(edges, dtype=np.int64).reshape(-1, 2), None,
                  np.array(flags, dtype=bool))
    return g, DropoutSchedule(g, float(interplane_up_prob), seed)
