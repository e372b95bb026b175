"""Sensor graphs and the symmetric degree-normalised adjacency."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

DENSE_LIMIT = 4096
MAX_WALK_DEPTH = 6


class GraphIngestError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SpatialGraph:
    n_nodes: int
    edges: tuple  # sorted (u, v) pairs with u <= v
    costs: tuple = ()
    self_loops: bool = False

    @cached_property
    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_nodes, dtype=np.int64)
        for u, v in self.edges:
            deg[u] += 1
            if u != v:
                deg[v] += 1
        return deg

    @cached_property
    def neighbors(self) -> tuple:
        nb = [[] for _ in range(self.n_nodes)]
        for u, v in self.edges:
            nb[u].append(v)
            if u != v:
                nb[v].append(u)
        return tuple(tuple(sorted(x)) for x in nb)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def _sparse(self) -> sp.csr_matrix:
        if not self.edges:
            return sp.csr_matrix((self.n_nodes, self.n_nodes))
        e = np.asarray(self.edges, dtype=np.int64)
        deg = self.degrees.astype(np.float64)
        w = 1.0 / np.sqrt(deg[e[:, 0]] * deg[e[:, 1]])
        off = e[:, 0] != e[:, 1]
        rows = np.concatenate([e[:, 0], e[off, 1]])
        cols = np.concatenate([e[:, 1], e[off, 0]])
        vals = np.concatenate([w, w[off]])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n_nodes, self.n_nodes))

    @cached_property
    def _dense(self) -> np.ndarray:
        return self._sparse.toarray()

    def normalized_adjacency(self, sparse: bool | None = None, dtype=np.float64):
        """D^-1/2 A D^-1/2, dense up to ``DENSE_LIMIT`` nodes, CSR above.

        Isolated nodes get all-zero rows and columns.
        """
        if sparse is None:
            sparse = self.n_nodes > DENSE_LIMIT
        if sparse:
            return self._sparse.astype(dtype)
        return self._dense.astype(dtype, copy=False)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_nodes, self.n_nodes))
        for u, v in self.edges:
            a[u, v] = a[v, u] = 1.0
        return a

    def has_edge(self, n: int, j: int) -> bool:
        return j in self.neighbors[n]

    def pair_weight(self, n: int, j: int) -> float:
        """Degree normalisation 1/sqrt(d_n d_j) for an adjacent pair."""
        if not (0 <= n < self.n_nodes and 0 <= j < self.n_nodes) or not self.has_edge(n, j):
            raise KeyError(f"nodes {n} and {j} are not adjacent")
        return 1.0 / np.sqrt(float(self.degrees[n]) * float(self.degrees[j]))

    def with_extra_edges(self, extra) -> "SpatialGraph":
        return build_graph(list(self.edges) + list(extra), self.n_nodes, self_loops=self.self_loops)


def build_graph(edge_list, n_nodes: int, self_loops: bool = False, lines=None) -> SpatialGraph:
    """Undirected binary graph from ``(u, v)`` or ``(u, v, cost)`` tuples.

    Reversed and repeated edges collapse to one; the first cost seen is kept
    as metadata. Self-loops are dropped unless ``self_loops`` is set.
    ``lines`` optionally gives the source line of each edge for error messages.
    """
    if n_nodes < 1:
        raise GraphIngestError("graph needs at least one node")
    seen: dict = {}
    for i, edge in enumerate(edge_list):
        u, v = int(edge[0]), int(edge[1])
        where = f"line {lines[i]}" if lines is not None else f"edge {i}"
        if not (0 <= u < n_nodes and 0 <= v < n_nodes):
            raise GraphIngestError(f"{where}: node id out of range [0, {n_nodes}): ({u}, {v})")
        if u == v and not self_loops:
            continue
        key = (min(u, v), max(u, v))
        if key not in seen:
            seen[key] = float(edge[2]) if len(edge) > 2 and edge[2] is not None else 1.0
    keys = sorted(seen)
    g = SpatialGraph(n_nodes, tuple(keys), tuple(seen[k] for k in keys), self_loops)
    isolated = np.flatnonzero(g.degrees == 0)
    if len(isolated):
        warnings.warn(f"{len(isolated)} isolated node(s), e.g. {isolated[:5].tolist()}; "
                      "they receive no neighbour messages", stacklevel=2)
    return g


def load_adjacency_csv(path, n_nodes: int) -> SpatialGraph:
    """Read a ``from,to,cost`` edge file (0-based ids, header required)."""
    edges, lines = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["from", "to"]:
            raise GraphIngestError(f"{path}: expected header 'from,to,cost', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                u, v = int(float(row[0])), int(float(row[1]))
                cost = float(row[2]) if len(row) > 2 and row[2].strip() else None
            except (ValueError, IndexError) as exc:
                raise GraphIngestError(f"{path}: line {lineno}: cannot parse {row!r}") from exc
            edges.append((u, v, cost))
            lines.append(lineno)
    return build_graph(edges, n_nodes, lines=lines)


def write_adjacency_csv(g: SpatialGraph, path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["from", "to", "cost"])
        costs = g.costs or (1.0,) * len(g.edges)
        for (u, v), c in zip(g.edges, costs):
            w.writerow([u, v, repr(float(c))])


def path_expansion_oracle(g: SpatialGraph, depth: int, e0: np.ndarray,
                          cumulative: bool = False, max_depth: int = MAX_WALK_DEPTH) -> np.ndarray:
    """Propagate ``e0`` by enumerating every walk explicitly.

    Each walk of exactly ``depth`` edges from node n to node j contributes the
    product of 1/sqrt(d_u d_v) over its consecutive edges times ``e0[j]``.
    With ``cumulative`` the walks of every length 0..depth are summed, which
    matches the cross-layer embedding sum in the linear regime.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if depth > max_depth:
        raise ValueError(f"walk depth {depth} exceeds cap {max_depth}")
    e0 = np.asarray(e0, dtype=np.float64)
    deg = g.degrees.astype(np.float64)
    nbrs = g.neighbors
    out = np.zeros_like(e0)

    for start in range(g.n_nodes):
        # stack of (current node, walk length so far, accumulated weight)
        stack = [(start, 0, 1.0)]
        while stack:
            node, length, w = stack.pop()
            if length == depth or cumulative:
                out[start] += w * e0[node]
            if length == depth:
                continue
            for nxt in nbrs[node]:
                stack.append((nxt, length + 1, w / np.sqrt(deg[node] * deg[nxt])))
    return out
