"""Benchmark instance generation: observe, decompose, embed, perturb, package."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from specleak._version import __version__
from specleak.archive import InstanceArchive
from specleak.graph import (
    Graph,
    d_hop_neighborhood,
    default_cluster_count,
    expand_with_boundary,
    normalized_laplacian,
    save_edge_list,
    spectral_bisection_partition,
)
from specleak.rng import RNG_ID, substream
from specleak.spectral import (
    DEFAULT_Q_MAX,
    PatchObservation,
    PatchTooLargeError,
    add_gaussian_noise,
    symmetric_eigendecompose,
    truncate_embedding,
)

STRATEGIES = ("d_hop", "cluster", "random")


@dataclass(frozen=True)
class InstanceParams:
    """Generation settings for one instance.

    ``n_clusters`` (cluster strategy) and ``n_seeds`` (random strategy) are
    filled with their defaults when left as None.
    """

    strategy: str = "d_hop"
    d: int = 1
    k: int = 32
    sigma: float = 0.0
    p: float = 1.0
    seed: int = 0
    n_clusters: int | None = None
    n_seeds: int | None = None
    q_max: int = DEFAULT_Q_MAX

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not 0 < self.p <= 1:
            raise ValueError("p must lie in (0, 1]")


class PatchGenerationError(RuntimeError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"patch {index}: {cause}")
        self.index = index
        self.cause = cause


def select_observed(g: Graph, p: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample of ``round(p n)`` nodes without replacement, sorted."""
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    size = int(round(p * g.n))
    if size >= g.n:
        return np.arange(g.n, dtype=np.int64)
    return np.sort(rng.choice(g.n, size=size, replace=False)).astype(np.int64)


def decompose(g: Graph, params: InstanceParams, observed: np.ndarray) -> list[np.ndarray]:
    """Patch node sets for the chosen strategy, in generation order."""
    observed = np.asarray(observed, dtype=np.int64)
    if params.strategy == "d_hop":
        return [d_hop_neighborhood(g, int(v), params.d) for v in observed]
    if params.strategy == "random":
        s = resolved_seed_count(params, len(observed))
        rng = substream(params.seed, "random-seeds")
        seeds = np.sort(rng.choice(observed, size=s, replace=False))
        return [d_hop_neighborhood(g, int(v), params.d) for v in seeds]
    n_parts = resolved_cluster_count(params, g.n)
    part = spectral_bisection_partition(g, n_parts)
    keep = np.zeros(g.n, dtype=bool)
    keep[observed] = True
    patches = []
    for i in range(part.n_clusters):
        nodes = expand_with_boundary(g, part, i)
        nodes = nodes[keep[nodes]]
        if nodes.size:
            patches.append(nodes)
    return patches


def resolved_cluster_count(params: InstanceParams, n: int) -> int:
    ell = params.n_clusters if params.n_clusters is not None else default_cluster_count(n)
    return min(ell, n)


def resolved_seed_count(params: InstanceParams, n_observed: int) -> int:
    s = params.n_seeds if params.n_seeds is not None else int(round(0.3 * n_observed))
    return max(1, min(s, n_observed))


def observe_patch(g: Graph, nodes: np.ndarray, k: int, sigma: float,
                  rng: np.random.Generator, q_max: int = DEFAULT_Q_MAX) -> PatchObservation:
    """Embed one patch: induced Laplacian, bottom-k basis, additive noise."""
    es = symmetric_eigendecompose(normalized_laplacian(g, nodes), q_max=q_max)
    emb, lam_next, vals = truncate_embedding(es, k)
    emb = add_gaussian_noise(emb, sigma, rng)
    return PatchObservation(nodes=np.asarray(nodes, dtype=np.int64), embedding=emb,
                            lambda_next=lam_next, eigenvalues=vals)


def graph_digest(g: Graph) -> str:
    return hashlib.sha256(save_edge_list(g).encode("utf-8")).hexdigest()


def generate_instance(g: Graph, params: InstanceParams, dataset: str = "graph") -> InstanceArchive:
    """Build an instance archive (in memory) from a ground-truth graph."""
    observed = select_observed(g, params.p, substream(params.seed, "observe"))
    node_sets = decompose(g, params, observed)
    patches = []
    for i, nodes in enumerate(node_sets):
        try:
            patches.append(observe_patch(g, nodes, params.k, params.sigma,
                                         substream(params.seed, "noise", i), params.q_max))
        except (PatchTooLargeError, ValueError) as exc:
            raise PatchGenerationError(i, exc) from exc
    resolved = asdict(params)
    if params.strategy == "cluster":
        resolved["n_clusters"] = resolved_cluster_count(params, g.n)
    if params.strategy == "random":
        resolved["n_seeds"] = resolved_seed_count(params, len(observed))
    manifest = {
        "format": "specleak-instance",
        "format_version": 1,
        "generator": f"specleak {__version__}",
        "rng": RNG_ID,
        "dataset": {"name": dataset, "n": g.n, "m": g.m, "edges_sha256": graph_digest(g)},
        "params": resolved,
        "embedding": {
            "laplacian": "normalized, isolated nodes as identity rows",
            "sign_convention": "largest-magnitude entry positive, first index on ties",
            "k_ge_q": "all q columns kept, lambda_next sentinel 0",
            "noise": "iid gaussian added to the sign-canonical basis",
        },
        "n_observed": int(len(observed)),
    }
    return InstanceArchive(manifest=manifest, patches=patches, observed=observed)


def overlap_audit(g: Graph, patches: list[PatchObservation], k: int) -> dict:
    """Share of true edges covered by some patch pair overlapping in >= k+1 nodes.

    A warning statistic only; alignment needs such pairs to stitch across an
    edge.
    """
    if not patches:
        return {"edges": g.m, "covered": 0, "fraction": 0.0}
    rows = np.concatenate([np.full(p.q, i) for i, p in enumerate(patches)])
    cols = np.concatenate([p.nodes for p in patches])
    inc = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(patches), g.n))
    overlap = (inc @ inc.T).tocsr()
    inc_t = inc.T.tocsr()
    covered = 0
    for u, w in g.edges:
        both = np.intersect1d(inc_t[u].indices, inc_t[w].indices)
        if len(both) < 2:
            continue
        sub = overlap[both][:, both].toarray()
        np.fill_diagonal(sub, 0)
        if sub.max() >= k + 1:
            covered += 1
    return {"edges": g.m, "covered": covered, "fraction": covered / g.m if g.m else 1.0}
