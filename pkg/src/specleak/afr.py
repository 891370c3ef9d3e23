"""Fidelity-gated reconstruction from local spectral patches.

Three stages:

1. every patch is turned into a local adjacency by thresholding its
   truncated heat kernel, and scored by a fidelity value that mixes the
   spectral gap ratio with the degree entropy of that adjacency;
2. high-fidelity ("core") patches are stitched into islands in priority
   order, each stitch verified by RANSAC-Procrustes on the shared nodes;
3. per-patch rotations inside an island are refined jointly on O(k), and
   node pairs that keep co-occurring across islands are voted in as cross
   edges.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.sparse as sp

from specleak.alignment import procrustes, ransac_procrustes
from specleak.graph import components, normalized_laplacian_from_adjacency
from specleak.reconstruction import Reconstruction
from specleak.rng import substream
from specleak.spectral import (
    PatchObservation,
    SpectralQuantities,
    heat_kernel_from_parts,
    spectral_quantities,
    truncated_heat_kernel,
)

_GAMMA_TABLE = ((16, 30.0), (32, 70.0), (64, 140.0))


def gamma_for_width(k: int) -> float:
    """Adaptive-threshold slope for embedding width ``k``.

    Tabulated at 16, 32 and 64; linear in between and proportional outside.
    """
    ks = [a for a, _ in _GAMMA_TABLE]
    gs = [b for _, b in _GAMMA_TABLE]
    if k <= ks[0]:
        return gs[0] * k / ks[0]
    if k >= ks[-1]:
        return gs[-1] * k / ks[-1]
    return float(np.interp(k, ks, gs))


@dataclass(frozen=True)
class AfrConfig:
    t: float = 0.8
    alpha: float = 0.7
    s_min: float = 0.6
    delta_min: float = 0.1
    k_base: float = 5.0
    gamma: float | None = None
    ransac_iters: int = 300
    ransac_inlier_tol: float | None = None
    C0: float = 2.0
    kappa: float = 1.0
    top_k_output: int = 5
    ba_max_iters: int = 200
    ba_armijo_c: float = 1e-4
    ba_shrink: float = 0.5
    ba_rel_tol: float = 1e-8
    threshold_candidates: int = 8
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        for name in ("t", "s_min", "delta_min", "C0", "kappa"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.top_k_output < 1 or self.ransac_iters < 1:
            raise ValueError("top_k_output and ransac_iters must be >= 1")
        if not 0 < self.ba_shrink < 1:
            raise ValueError("ba_shrink must lie in (0, 1)")

    def resolved_gamma(self, k: int) -> float:
        return float(self.gamma) if self.gamma is not None else gamma_for_width(k)


# ---------------------------------------------------------------- stage 1

def _truncated_graph_kernel(adj: np.ndarray, width: int, t: float) -> np.ndarray:
    lap = normalized_laplacian_from_adjacency(adj)
    vals, vecs = np.linalg.eigh(lap)
    return heat_kernel_from_parts(vecs[:, :width], vals[:width], t)


def threshold_kernel(h: np.ndarray, width: int, t: float, n_candidates: int = 8) -> np.ndarray:
    """Split the off-diagonal kernel entries into edges and non-edges.

    Candidate cuts are the midpoints of the ``n_candidates`` largest gaps in
    the sorted upper-triangle values, plus "no edges" and "all edges". Each
    candidate graph is pushed back through the same truncated heat kernel
    and the one that reproduces ``h`` best wins. On exact data the true graph
    reproduces ``h`` exactly, so it is picked whenever it is a candidate.
    """
    q = h.shape[0]
    if q < 2:
        return np.zeros((q, q), dtype=bool)
    iu = np.triu_indices(q, 1)
    vals = h[iu]
    order = np.sort(vals)
    gaps = np.diff(order)
    cuts = []
    for j in np.argsort(-gaps, kind="stable")[:n_candidates]:
        if gaps[j] > 0:
            cuts.append(0.5 * (order[j] + order[j + 1]))
    cuts.append(np.inf)    # no edges
    cuts.append(-np.inf)   # every pair
    best, best_err = None, np.inf
    for cut in cuts:
        upper = vals > cut
        adj = np.zeros((q, q))
        adj[iu] = upper
        adj = adj + adj.T
        err = float(np.linalg.norm(_truncated_graph_kernel(adj, width, t) - h))
        if err < best_err - 1e-12:
            best, best_err = adj, err
    return best.astype(bool)


def local_reconstruct(obs: PatchObservation, cfg: AfrConfig = AfrConfig()) -> np.ndarray:
    """Boolean adjacency of one patch from its (noisy) truncated basis."""
    if obs.q < 2:
        return np.zeros((obs.q, obs.q), dtype=bool)
    h = truncated_heat_kernel(obs, cfg.t)
    return threshold_kernel(h, obs.width, cfg.t, cfg.threshold_candidates)


def score_patch(obs: PatchObservation, local_adj, cfg: AfrConfig = AfrConfig()) -> SpectralQuantities:
    return spectral_quantities(obs, local_adj, cfg.t, cfg.alpha)


def is_core(sq: SpectralQuantities, cfg: AfrConfig) -> bool:
    return sq.fidelity >= cfg.s_min and sq.delta >= cfg.delta_min


@dataclass
class CorePatch:
    index: int
    nodes: np.ndarray
    adjacency: np.ndarray
    fidelity: float
    delta: float


@dataclass
class LocalResult:
    """Stage-1 output for one patch."""

    adjacency: np.ndarray
    quantities: SpectralQuantities
    kernel: np.ndarray
    core: bool


def stage_one(patches: list[PatchObservation], cfg: AfrConfig) -> list[LocalResult]:
    out = []
    for obs in patches:
        adj = local_reconstruct(obs, cfg)
        sq = score_patch(obs, adj, cfg)
        h = truncated_heat_kernel(obs, cfg.t) if obs.q else np.zeros((0, 0))
        out.append(LocalResult(adj, sq, h, is_core(sq, cfg)))
    return out


# ---------------------------------------------------------------- stage 2

def adaptive_threshold(s_v: float, s_w: float, k: int, k_base: float, gamma: float) -> int:
    """Overlap needed before a stitch is attempted.

    ``max(k + 1, ceil(k_base + gamma * (1 - min(s_v, s_w))))``
    """
    need = math.ceil(k_base + gamma * (1.0 - min(s_v, s_w)) - 1e-12)
    return int(max(k + 1, need))


def stitch_priority(s_v: float, s_w: float, overlap: int) -> float:
    return min(s_v, s_w) + 0.001 * min(overlap, 1000)


@dataclass
class Stitch:
    a: int
    b: int
    shared: np.ndarray
    consensus: np.ndarray
    rotation: np.ndarray
    d_adaptive: int
    priority: float

    def summary(self, iters: int, beta: float = 0.05) -> dict:
        width = self.rotation.shape[0]
        frac = len(self.consensus) / len(self.shared)
        return {
            "patches": [self.a, self.b],
            "shared": int(len(self.shared)),
            "consensus": int(len(self.consensus)),
            "d_adaptive": int(self.d_adaptive),
            "priority": round(float(self.priority), 12),
            "inlier_fraction": round(frac, 12),
            "iters_needed": required_iterations(frac, width + 1, beta),
            "iters_used": iters,
        }


def required_iterations(p: float, m: int, beta: float = 0.05) -> int | None:
    """Iterations so that an all-inlier sample appears with probability 1-beta."""
    hit = p ** m
    if hit >= 1.0:
        return 1
    if hit <= 0.0:
        return None
    needed = math.log(beta) / math.log1p(-hit)
    return int(math.ceil(needed)) if math.isfinite(needed) else None


@dataclass
class Island:
    members: list[int]
    nodes: np.ndarray
    edges: np.ndarray
    rotations: dict[int, np.ndarray]
    coords: np.ndarray
    stitches: list[Stitch] = field(default_factory=list)
    fidelity: dict[int, float] = field(default_factory=dict)
    ba_history: list[float] = field(default_factory=list)


def _padded(obs: PatchObservation, width: int) -> np.ndarray:
    out = np.zeros((obs.q, width))
    out[:, : obs.width] = obs.embedding
    return out


def _rows(nodes: np.ndarray, ids: np.ndarray) -> np.ndarray:
    return np.searchsorted(nodes, ids)


def _overlap_connected(adj_a, rows_a, adj_b, rows_b) -> bool:
    sub = adj_a[np.ix_(rows_a, rows_a)] | adj_b[np.ix_(rows_b, rows_b)]
    return len(components(sp.csr_matrix(sub))) == 1


def assemble_islands(core: list[CorePatch], patches: list[PatchObservation], cfg: AfrConfig,
                     k: int | None = None) -> tuple[list[Island], list[dict]]:
    """Greedy priority-ordered stitching of core patches into islands.

    ``k`` is the alignment width; by default the widest core embedding.
    Returns the islands and an audit log of every decision.
    """
    audit: list[dict] = []
    if not core:
        return [], audit
    width = k if k is not None else max(patches[c.index].width for c in core)
    gamma = cfg.resolved_gamma(width)
    padded = {c.index: _padded(patches[c.index], width) for c in core}
    by_index = {c.index: c for c in core}

    queue = _candidate_pairs(core, width + 1)
    heap = []
    for a, b, shared in queue:
        ca, cb = by_index[a], by_index[b]
        d_adapt = adaptive_threshold(ca.fidelity, cb.fidelity, width, cfg.k_base, gamma)
        prio = stitch_priority(ca.fidelity, cb.fidelity, len(shared))
        heap.append((-prio, a, b, d_adapt, shared))
    heapq.heapify(heap)

    parent = {c.index: c.index for c in core}
    rot = {c.index: np.eye(width) for c in core}
    members = {c.index: [c.index] for c in core}
    stitches: dict[int, list[Stitch]] = {c.index: [] for c in core}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    n_total = max(by_index) + 1
    while heap:
        negp, a, b, d_adapt, shared = heapq.heappop(heap)
        ra, rb = find(a), find(b)
        if ra == rb:
            continue
        entry = {"patches": [a, b], "shared": int(len(shared)), "d_adaptive": d_adapt}
        if len(shared) < d_adapt:
            audit.append({**entry, "decision": "skip-overlap"})
            continue
        ca, cb = by_index[a], by_index[b]
        rows_a, rows_b = _rows(ca.nodes, shared), _rows(cb.nodes, shared)
        if not _overlap_connected(ca.adjacency, rows_a, cb.adjacency, rows_b):
            audit.append({**entry, "decision": "skip-disconnected"})
            continue
        res = ransac_procrustes(padded[a][rows_a], padded[b][rows_b], d_adapt, cfg.ransac_iters,
                                substream(cfg.seed, "ransac", a * n_total + b),
                                tol=cfg.ransac_inlier_tol)
        if not res.accepted:
            audit.append({**entry, "decision": "reject", "consensus": int(res.size)})
            continue
        # a ~ b Q in patch frames, hence R_b = Q R_a in the shared frame
        q = res.rotation
        t = rot[b].T @ q @ rot[a]
        for p in members[rb]:
            rot[p] = rot[p] @ t
        parent[rb] = ra
        members[ra].extend(members.pop(rb))
        st = Stitch(a, b, shared, shared[res.consensus], q, d_adapt, -negp)
        stitches[ra].extend(stitches.pop(rb))
        stitches[ra].append(st)
        audit.append({**entry, "decision": "accept", **st.summary(cfg.ransac_iters)})

    islands = []
    for root in sorted(members, key=lambda r: min(members[r])):
        mem = sorted(members[root])
        isl = _build_island(mem, {p: rot[p] for p in mem}, stitches[root], by_index, padded)
        islands.append(isl)
    return islands, audit


def _candidate_pairs(core: list[CorePatch], min_shared: int):
    idx = np.array([c.index for c in core])
    rows = np.concatenate([np.full(len(c.nodes), i) for i, c in enumerate(core)])
    cols = np.concatenate([c.nodes for c in core])
    n = int(cols.max()) + 1 if cols.size else 0
    inc = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(core), n))
    ov = sp.triu(inc @ inc.T, k=1).tocoo()
    keep = ov.data >= min_shared
    out = []
    for i, j in sorted(zip(ov.row[keep].tolist(), ov.col[keep].tolist())):
        shared = np.intersect1d(core[i].nodes, core[j].nodes)
        out.append((int(idx[i]), int(idx[j]), shared))
    return out


def _build_island(mem, rotations, stitches, by_index, padded) -> Island:
    nodes = np.unique(np.concatenate([by_index[p].nodes for p in mem]))
    edge_keys = []
    for p in mem:
        c = by_index[p]
        iu, ju = np.nonzero(np.triu(c.adjacency, 1))
        edge_keys.append(np.stack([c.nodes[iu], c.nodes[ju]], axis=1))
    edges = np.unique(np.concatenate(edge_keys), axis=0) if edge_keys else np.zeros((0, 2), int)
    coords = fuse_coordinates(mem, nodes, rotations, by_index, padded)
    fid = {p: by_index[p].fidelity for p in mem}
    return Island(members=mem, nodes=nodes, edges=edges.reshape(-1, 2).astype(np.int64),
                  rotations=rotations, coords=coords, stitches=list(stitches), fidelity=fid)


def fuse_coordinates(mem, nodes, rotations, by_index, padded) -> np.ndarray:
    """Average of every member's aligned embedding rows per node.

    ``by_index`` maps a patch index to anything with a ``nodes`` array.
    """
    width = next(iter(rotations.values())).shape[0]
    acc = np.zeros((len(nodes), width))
    cnt = np.zeros(len(nodes))
    for p in mem:
        rows = np.searchsorted(nodes, by_index[p].nodes)
        acc[rows] += padded[p] @ rotations[p]
        cnt[rows] += 1
    return acc / cnt[:, None]


# ---------------------------------------------------------------- stage 3

def _skew(x):
    return 0.5 * (x - x.T)


def _cayley(r, omega, step):
    k = omega.shape[0]
    eye = np.eye(k)
    return r @ np.linalg.solve(eye + 0.5 * step * omega, eye - 0.5 * step * omega)


def ba_objective(rotations: dict, terms: list) -> float:
    return float(sum(np.sum((A @ rotations[a] - B @ rotations[b]) ** 2) for a, b, A, B in terms))


def bundle_adjust_rotations(rotations: dict, terms: list, cfg: AfrConfig = AfrConfig(),
                            max_iters: int | None = None):
    """Riemannian gradient descent on O(k)^n with Armijo backtracking.

    ``terms`` holds ``(a, b, A, B)`` for ``sum ||A R_a - B R_b||^2``.
    Returns the refined rotations and the objective after every iteration
    (entry 0 is the warm start). Rejected steps leave the iterate unchanged,
    so the sequence never increases.
    """
    rot = {p: r.copy() for p, r in rotations.items()}
    f = ba_objective(rot, terms)
    history = [f]
    iters = cfg.ba_max_iters if max_iters is None else max_iters
    step = 1.0
    for _ in range(iters):
        if f <= 1e-30:
            break
        grad = {p: np.zeros_like(r) for p, r in rot.items()}
        for a, b, A, B in terms:
            d = A @ rot[a] - B @ rot[b]
            grad[a] += 2.0 * A.T @ d
            grad[b] -= 2.0 * B.T @ d
        omega = {p: _skew(rot[p].T @ grad[p]) for p in rot}
        gnorm2 = float(sum(np.sum(o * o) for o in omega.values()))
        if gnorm2 <= 1e-30:
            break
        step = min(step * 2.0, 1e6)
        accepted = None
        while step > 1e-20:
            trial = {p: _cayley(rot[p], omega[p], step) for p in rot}
            ft = ba_objective(trial, terms)
            if ft <= f - cfg.ba_armijo_c * step * gnorm2:
                accepted = (trial, ft)
                break
            step *= cfg.ba_shrink
        if accepted is None:
            break
        rot, f_new = accepted
        history.append(f_new)
        rel = (f - f_new) / max(f, 1e-300)
        f = f_new
        if rel < cfg.ba_rel_tol:
            break
    return rot, history


def stitch_terms(island: Island, patches: list[PatchObservation], width: int) -> list:
    terms = []
    for st in island.stitches:
        pa, pb = patches[st.a], patches[st.b]
        A = _padded(pa, width)[_rows(pa.nodes, st.consensus)]
        B = _padded(pb, width)[_rows(pb.nodes, st.consensus)]
        terms.append((st.a, st.b, A, B))
    return terms


def bundle_adjust(island: Island, patches: list[PatchObservation], cfg: AfrConfig = AfrConfig()) -> Island:
    """Refine the member rotations of a multi-patch island in place."""
    if len(island.members) < 2 or not island.stitches:
        return island
    width = next(iter(island.rotations.values())).shape[0]
    terms = stitch_terms(island, patches, width)
    rot, hist = bundle_adjust_rotations(island.rotations, terms, cfg)
    island.rotations = rot
    island.ba_history = hist
    padded = {p: _padded(patches[p], width) for p in island.members}
    island.coords = fuse_coordinates(island.members, island.nodes, rot, patches, padded)
    return island


@dataclass(frozen=True)
class CrossEdge:
    u: int
    w: int
    votes: int
    probability: float


def vote_probability(votes: float, C0: float, kappa: float) -> float:
    return 1.0 / (1.0 + math.exp(-kappa * (votes - C0)))


def _incidence(node_sets, n):
    if not node_sets:
        return sp.csr_matrix((0, n))
    rows = np.concatenate([np.full(len(s), i) for i, s in enumerate(node_sets)])
    cols = np.concatenate([np.asarray(s, dtype=np.int64) for s in node_sets])
    return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(node_sets), n))


def cross_vote(island_nodes: list[np.ndarray], patch_nodes: list[np.ndarray], n: int,
               cfg: AfrConfig = AfrConfig()) -> list[CrossEdge]:
    """Pairs seen together in more than ``C0`` patches but never in one island.

    Nodes outside every island count as islands of their own.
    """
    co = sp.triu(_incidence(patch_nodes, n).T @ _incidence(patch_nodes, n), k=1).tocsr()
    same = (_incidence(island_nodes, n).T @ _incidence(island_nodes, n)).tocsr()
    co = co.tocoo()
    keep = co.data > cfg.C0
    u, w, c = co.row[keep], co.col[keep], co.data[keep]
    if len(u):
        together = np.asarray(same[u, w]).ravel() > 0
        u, w, c = u[~together], w[~together], c[~together]
    order = np.lexsort((w, u))
    return [CrossEdge(int(u[i]), int(w[i]), int(round(c[i])),
                      vote_probability(float(c[i]), cfg.C0, cfg.kappa)) for i in order]


def heat_cosine(h: np.ndarray) -> np.ndarray:
    """Kernel entries normalized by the diagonal, a scale-free affinity."""
    d = np.sqrt(np.maximum(np.diag(h), 1e-12))
    return h / d[:, None] / d[None, :]


def island_edge_scores(island: Island, patches: list[PatchObservation], kernels: dict) -> np.ndarray:
    """Mean heat-cosine of each island edge over the members holding both ends."""
    if len(island.edges) == 0:
        return np.zeros(0)
    n_key = int(island.nodes[-1]) + 1
    keys = island.edges[:, 0] * n_key + island.edges[:, 1]
    total = np.zeros(len(keys))
    count = np.zeros(len(keys))
    for p in island.members:
        nodes = patches[p].nodes
        cos = heat_cosine(kernels[p])
        iu, ju = np.triu_indices(len(nodes), 1)
        pk = nodes[iu] * n_key + nodes[ju]
        pos = np.searchsorted(keys, pk)
        pos[pos >= len(keys)] = 0
        hit = keys[pos] == pk
        np.add.at(total, pos[hit], cos[iu[hit], ju[hit]])
        np.add.at(count, pos[hit], 1)
    return total / np.maximum(count, 1)


def top_k_filter(edges: np.ndarray, scores: np.ndarray, top_k: int) -> np.ndarray:
    """Keep an edge when it ranks in the top ``top_k`` of either endpoint."""
    if len(edges) == 0:
        return np.zeros(len(edges), dtype=bool)
    m = len(edges)
    node = np.concatenate([edges[:, 0], edges[:, 1]])
    other = np.concatenate([edges[:, 1], edges[:, 0]])
    sc = np.concatenate([scores, scores])
    eid = np.concatenate([np.arange(m), np.arange(m)])
    order = np.lexsort((other, -sc, node))
    node_sorted = node[order]
    start = np.r_[0, np.flatnonzero(np.diff(node_sorted)) + 1]
    rank = np.arange(2 * m) - np.repeat(start, np.diff(np.r_[start, 2 * m]))
    keep = np.zeros(m, dtype=bool)
    keep[eid[order][rank < top_k]] = True
    return keep


def finalize_prediction(islands: list[Island], cross: list[CrossEdge], patches, kernels,
                        cfg: AfrConfig = AfrConfig()) -> np.ndarray:
    """Top-k filtered island edges plus confident cross edges, sorted and unique."""
    keys, scores = [], []
    for isl in islands:
        if len(isl.edges):
            keys.append(isl.edges)
            scores.append(island_edge_scores(isl, patches, kernels))
    if keys:
        e = np.concatenate(keys)
        s = np.concatenate(scores)
        # an edge seen in several islands keeps its best score
        order = np.lexsort((-s, e[:, 1], e[:, 0]))
        e, s = e[order], s[order]
        first = np.r_[True, np.any(np.diff(e, axis=0) != 0, axis=1)]
        e, s = e[first], s[first]
        intra = e[top_k_filter(e, s, cfg.top_k_output)]
    else:
        intra = np.zeros((0, 2), dtype=np.int64)
    extra = np.array([(c.u, c.w) for c in cross if c.probability >= 0.5], dtype=np.int64).reshape(-1, 2)
    out = np.concatenate([intra, extra]) if len(extra) else intra
    return np.unique(out, axis=0).reshape(-1, 2).astype(np.int64) if len(out) else out.reshape(0, 2)


def _summary(isl: Island) -> dict:
    return {
        "members": [int(p) for p in isl.members],
        "n_nodes": int(len(isl.nodes)),
        "n_edges": int(len(isl.edges)),
        "stitches": len(isl.stitches),
        "ba_objective": [float(isl.ba_history[0]), float(isl.ba_history[-1])] if isl.ba_history else None,
    }


def afr_reconstruct(patches: list[PatchObservation], n: int, cfg: AfrConfig = AfrConfig(),
                    k: int | None = None) -> Reconstruction:
    """Run all three stages on the patches of one instance.

    ``n`` is the node count of the attacked graph (ids must be below it).
    """
    local = stage_one(patches, cfg)
    core = [CorePatch(i, patches[i].nodes, r.adjacency, r.quantities.fidelity, r.quantities.delta)
            for i, r in enumerate(local) if r.core]
    width = k
    if width is None and core:
        width = max(patches[c.index].width for c in core)
    islands, audit = assemble_islands(core, patches, cfg, width)
    for isl in islands:
        bundle_adjust(isl, patches, cfg)
    cross = cross_vote([isl.nodes for isl in islands], [p.nodes for p in patches], n, cfg)
    kernels = {i: r.kernel for i, r in enumerate(local)}
    edges = finalize_prediction(islands, cross, patches, kernels, cfg)
    node_parts = [isl.nodes for isl in islands] + [np.array([c.u, c.w]) for c in cross]
    nodes = np.unique(np.concatenate(node_parts)) if node_parts else np.zeros(0, dtype=np.int64)
    header = {
        "method": "afr",
        "config": asdict(cfg),
        "alignment_width": width,
        "n_patches": len(patches),
        "n_core": len(core),
        "islands": [_summary(isl) for isl in islands],
        "audit": audit,
        "edge_scores": "mean normalized heat-kernel affinity over member patches",
    }
    return Reconstruction(
        method="afr", n=n, nodes=nodes.astype(np.int64), edges=edges,
        cross_edges=[(c.u, c.w, c.votes, c.probability) for c in cross],
        header=header,
    )
