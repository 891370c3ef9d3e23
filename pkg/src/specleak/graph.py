"""Undirected simple graphs, Laplacians, neighborhoods and partitioning."""

from __future__ import annotations

import io
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


class GraphFormatError(ValueError):
    """Raised when an edge list cannot be parsed."""


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph on dense node ids ``0..n-1``.

    Attributes
    ----------
    n : int
        Number of nodes.
    edges : ndarray, shape (m, 2)
        Sorted, duplicate-free pairs with ``u < v``.
    adjacency : scipy.sparse.csr_matrix
        Symmetric 0/1 adjacency.
    labels : ndarray or None
        Original ids when the graph came from a file (``labels[i]`` is the
        external id of node ``i``).
    dropped_self_loops, dropped_duplicates : int
        Counts reported by :func:`load_edge_list`.
    """

    n: int
    edges: np.ndarray
    adjacency: sp.csr_matrix = field(repr=False)
    labels: np.ndarray | None = field(default=None, repr=False)
    dropped_self_loops: int = 0
    dropped_duplicates: int = 0

    @classmethod
    def from_edges(cls, n: int, edges, **extra) -> "Graph":
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise ValueError("edge endpoint outside [0, n)")
        e = e[e[:, 0] != e[:, 1]]
        e = np.sort(e, axis=1)
        e = np.unique(e, axis=0) if len(e) else e.reshape(0, 2)
        data = np.ones(2 * len(e), dtype=np.int8)
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        adj = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
        adj.sort_indices()
        return cls(n=int(n), edges=e, adjacency=adj, **extra)

    @property
    def m(self) -> int:
        return len(self.edges)

    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)

    def neighbors(self, u: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[u]:a.indptr[u + 1]]

    def induced_adjacency(self, nodes) -> np.ndarray:
        """Dense 0/1 adjacency of the subgraph induced on sorted ``nodes``."""
        idx = np.asarray(nodes, dtype=np.int64)
        return self.adjacency[idx][:, idx].toarray().astype(float)

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(u), int(v)) for u, v in self.edges}


def as_node_set(ids, n: int | None = None) -> np.ndarray:
    """Sorted unique int64 id array, checked against ``n`` when given."""
    out = np.unique(np.asarray(ids, dtype=np.int64))
    if n is not None and out.size and (out[0] < 0 or out[-1] >= n):
        raise ValueError("node id outside parent graph")
    return out


def load_edge_list(source, format: str = "whitespace") -> Graph:
    """Parse an edge list from a path, bytes, or a binary/text stream.

    Node ids may be arbitrary non-negative integers; they are remapped to
    ``0..n-1`` in ascending order of the original id. Lines starting with
    ``#`` are skipped. ``format`` is ``"whitespace"`` or ``"csv"``.
    """
    if format not in ("whitespace", "csv"):
        raise ValueError(f"unknown edge-list format {format!r}")
    text = _read_text(source)
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith("%"):
            continue
        parts = line.split(",") if format == "csv" else line.split()
        if len(parts) < 2:
            raise GraphFormatError(f"line {lineno}: expected two node ids, got {raw!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphFormatError(f"line {lineno}: non-integer node id in {raw!r}") from None
        if u < 0 or v < 0:
            raise GraphFormatError(f"line {lineno}: negative node id")
        pairs.append((u, v))
    if not pairs:
        raise GraphFormatError("empty edge list")
    raw_pairs = np.array(pairs, dtype=np.int64)
    labels, dense = np.unique(raw_pairs, return_inverse=True)
    dense = dense.reshape(-1, 2)
    loops = int(np.count_nonzero(dense[:, 0] == dense[:, 1]))
    kept = np.sort(dense[dense[:, 0] != dense[:, 1]], axis=1)
    uniq = np.unique(kept, axis=0) if len(kept) else kept
    return Graph.from_edges(
        len(labels), uniq, labels=labels,
        dropped_self_loops=loops, dropped_duplicates=len(kept) - len(uniq),
    )


def _read_text(source) -> str:
    # bytes are content, str/PathLike are paths
    if isinstance(source, (bytes, bytearray)):
        return bytes(source).decode("utf-8")
    if hasattr(source, "read"):
        data = source.read()
        return data.decode("utf-8") if isinstance(data, bytes) else data
    with open(source, "rb") as fh:
        return fh.read().decode("utf-8")


def save_edge_list(g: Graph, dest=None) -> str:
    """Write sorted unique ``u v`` lines; returns the text as well."""
    buf = io.StringIO()
    for u, v in g.edges:
        buf.write(f"{u} {v}\n")
    text = buf.getvalue()
    if dest is not None:
        if hasattr(dest, "write"):
            dest.write(text)
        else:
            with open(dest, "w", encoding="utf-8") as fh:
                fh.write(text)
    return text


def normalized_laplacian_from_adjacency(adj: np.ndarray) -> np.ndarray:
    """``I - D^{-1/2} A D^{-1/2}``; isolated nodes keep identity rows."""
    a = np.asarray(adj, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise ValueError("need a non-empty square adjacency")
    deg = a.sum(axis=1)
    inv = np.zeros_like(deg)
    nz = deg > 0
    inv[nz] = 1.0 / np.sqrt(deg[nz])
    lap = -(inv[:, None] * a * inv[None, :])
    np.fill_diagonal(lap, 1.0)
    return 0.5 * (lap + lap.T)


def normalized_laplacian(g: Graph, nodes=None) -> np.ndarray:
    """Normalized Laplacian of the subgraph induced on ``nodes`` (all if None)."""
    idx = np.arange(g.n) if nodes is None else as_node_set(nodes, g.n)
    if idx.size == 0:
        raise ValueError("empty node set")
    return normalized_laplacian_from_adjacency(g.induced_adjacency(idx))


def combinatorial_laplacian(g: Graph, nodes=None) -> np.ndarray:
    """``D - A`` on the induced subgraph."""
    idx = np.arange(g.n) if nodes is None else as_node_set(nodes, g.n)
    if idx.size == 0:
        raise ValueError("empty node set")
    a = g.induced_adjacency(idx)
    return np.diag(a.sum(axis=1)) - a


def d_hop_neighborhood(g: Graph, center: int, d: int) -> np.ndarray:
    """Sorted ids within shortest-path distance ``d`` of ``center``."""
    if not 0 <= center < g.n:
        raise ValueError("center outside graph")
    if d < 0:
        raise ValueError("radius must be non-negative")
    seen = {int(center)}
    frontier = deque([(int(center), 0)])
    indptr, indices = g.adjacency.indptr, g.adjacency.indices
    while frontier:
        u, dist = frontier.popleft()
        if dist == d:
            continue
        for w in indices[indptr[u]:indptr[u + 1]]:
            w = int(w)
            if w not in seen:
                seen.add(w)
                frontier.append((w, dist + 1))
    return np.array(sorted(seen), dtype=np.int64)


def components(adjacency, nodes=None) -> list[np.ndarray]:
    """Connected components as sorted id arrays, ordered by smallest id."""
    a = sp.csr_matrix(adjacency)
    if nodes is not None:
        nodes = np.asarray(nodes, dtype=np.int64)
        a = a[nodes][:, nodes]
    k, lab = connected_components(a, directed=False)
    ids = np.arange(a.shape[0]) if nodes is None else nodes
    groups = [ids[lab == c] for c in range(k)]
    groups.sort(key=lambda c: int(c[0]))
    return groups


@dataclass(frozen=True)
class Partition:
    """Cluster assignment ``node -> [0, n_clusters)``."""

    assignments: np.ndarray
    n_clusters: int

    def cluster(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == i).astype(np.int64)


def default_cluster_count(n: int) -> int:
    return max(2, math.ceil(n / 150))


def spectral_bisection_partition(g: Graph, n_parts: int) -> Partition:
    """Split ``g`` into ``n_parts`` clusters by recursive Fiedler bisection.

    The largest remaining part is bisected each round. Disconnected parts are
    split along component boundaries first. A Fiedler sign split that leaves
    one side under a third of the part is replaced by a median split, which
    keeps degenerate spectra (complete graphs, for instance) balanced.
    """
    if n_parts < 2:
        raise ValueError("need at least two parts")
    if n_parts > g.n:
        raise ValueError(f"cannot split {g.n} nodes into {n_parts} parts")
    parts = [np.arange(g.n, dtype=np.int64)]
    while len(parts) < n_parts:
        j = max(range(len(parts)), key=lambda i: (len(parts[i]), -int(parts[i][0])))
        left, right = _bisect(g, parts.pop(j))
        parts.extend([left, right])
    parts.sort(key=lambda p: int(p[0]))
    assign = np.empty(g.n, dtype=np.int64)
    for i, p in enumerate(parts):
        assign[p] = i
    return Partition(assignments=assign, n_clusters=len(parts))


def _bisect(g: Graph, part: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sub = g.adjacency[part][:, part]
    comps = components(sub)
    if len(comps) > 1:
        a_bin, b_bin = [], []
        for c in sorted(comps, key=lambda c: (-len(c), int(c[0]))):
            (a_bin if sum(map(len, a_bin)) <= sum(map(len, b_bin)) else b_bin).append(c)
        left = np.sort(part[np.concatenate(a_bin)])
        right = np.sort(part[np.concatenate(b_bin)])
        return left, right
    fied = _fiedler_vector(sub)
    size = len(part)
    pos, neg = fied > 1e-12, fied < -1e-12
    zero = ~(pos | neg)
    if pos.sum() <= neg.sum():
        pos = pos | zero
    else:
        neg = neg | zero
    if min(pos.sum(), neg.sum()) < math.ceil(size / 3):
        order = np.lexsort((np.arange(size), fied))
        neg = np.zeros(size, dtype=bool)
        neg[order[: size // 2]] = True
        pos = ~neg
    return np.sort(part[neg]), np.sort(part[pos])


def _fiedler_vector(sub: sp.csr_matrix) -> np.ndarray:
    from specleak.spectral import symmetric_eigendecompose

    q = sub.shape[0]
    if q <= 2000:
        lap = normalized_laplacian_from_adjacency(sub.toarray())
        return symmetric_eigendecompose(lap, q_max=None).eigenvectors[:, 1]
    from scipy.sparse.linalg import eigsh

    deg = np.asarray(sub.sum(axis=1)).ravel().astype(float)
    inv = 1.0 / np.sqrt(deg)
    s = sp.diags(inv) @ sub.astype(float) @ sp.diags(inv)
    # the top of I + D^{-1/2} A D^{-1/2} is the bottom of the Laplacian
    shifted = (sp.identity(q) + s).tocsr()
    vals, vecs = eigsh(shifted, k=2, which="LA", v0=np.sqrt(deg), tol=1e-10)
    v = vecs[:, np.argsort(vals)[0]]
    i = int(np.argmax(np.abs(v)))
    return v if v[i] > 0 else -v


def expand_with_boundary(g: Graph, p: Partition, i: int) -> np.ndarray:
    """Cluster ``i`` plus its one-hop neighbors outside the cluster."""
    if not 0 <= i < p.n_clusters:
        raise ValueError("cluster index out of range")
    core = p.cluster(i)
    nbrs = g.adjacency[core].indices
    return np.union1d(core, nbrs).astype(np.int64)
