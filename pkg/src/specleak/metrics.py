"""Edge-level scores, island cohesion and the inter-island link benchmark."""

from __future__ import annotations

from dataclasses import dataclass, asdict, field

import numpy as np
import scipy.sparse as sp
from scipy.stats import rankdata

from specleak.graph import Graph, components


@dataclass(frozen=True)
class EdgeMetrics:
    node_coverage: float
    precision: float
    recall: float
    f1: float
    island_cohesion: float
    boundary_ratio: float
    flags: tuple = field(default_factory=tuple)
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flags"] = list(self.flags)
        return d


def _pair_keys(edges: np.ndarray, n: int) -> np.ndarray:
    e = np.sort(np.asarray(edges, dtype=np.int64).reshape(-1, 2), axis=1)
    return np.unique(e[:, 0] * n + e[:, 1])


def _as_labels(islands, nodes: np.ndarray, n: int) -> np.ndarray:
    lab = np.full(n, -1, dtype=np.int64)
    for i, isl in enumerate(islands):
        isl = np.asarray(isl, dtype=np.int64)
        if np.any(lab[isl] >= 0):
            raise ValueError("islands must be disjoint")
        lab[isl] = i
    if np.any(lab[nodes] < 0):
        raise ValueError("every recovered node needs an island")
    return lab


def predicted_components(n: int, nodes: np.ndarray, edges: np.ndarray) -> list[np.ndarray]:
    """Connected components of the prediction restricted to ``nodes``."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    adj = sp.csr_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    return components(adj + adj.T, nodes)


def edge_metrics(truth: Graph, predicted, islands=None, nodes=None) -> EdgeMetrics:
    """Coverage, precision/recall/F1, island cohesion and boundary ratio.

    Precision and recall are taken against the truth edges induced on the
    recovered node set. ``nodes`` defaults to the endpoints of ``predicted``
    plus the island nodes; ``islands`` defaults to the connected components
    of the prediction.
    """
    n = truth.n
    pred = np.sort(np.asarray(predicted, dtype=np.int64).reshape(-1, 2), axis=1)
    if pred.size and (pred.min() < 0 or pred.max() >= n):
        raise ValueError("predicted node outside the truth graph")
    if np.any(pred[:, 0] == pred[:, 1]):
        raise ValueError("self-loop in prediction")
    parts = [pred.ravel()]
    if islands is not None:
        parts += [np.asarray(i, dtype=np.int64) for i in islands]
    if nodes is not None:
        vhat = np.unique(np.asarray(nodes, dtype=np.int64))
        if pred.size and not np.isin(pred.ravel(), vhat).all():
            raise ValueError("predicted edge touches a node outside the recovered set")
    else:
        vhat = np.unique(np.concatenate(parts)) if parts else np.zeros(0, np.int64)
    if vhat.size and (vhat[0] < 0 or vhat[-1] >= n):
        raise ValueError("recovered node outside the truth graph")
    if islands is None:
        islands = predicted_components(n, vhat, pred)
    lab = _as_labels(islands, vhat, n)

    inside = np.zeros(n, dtype=bool)
    inside[vhat] = True
    te = truth.edges
    te = te[inside[te[:, 0]] & inside[te[:, 1]]]
    tkeys = te[:, 0] * n + te[:, 1]
    pkeys = _pair_keys(pred, n)
    hit = np.isin(pkeys, tkeys)
    tp = int(hit.sum())
    flags = []
    precision = tp / len(pkeys) if len(pkeys) else (1.0 if len(tkeys) == 0 else 0.0)
    if len(tkeys):
        recall = tp / len(tkeys)
    else:
        recall = 1.0
        flags.append("no-truth-edges-on-recovered-nodes")
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)

    same = lab[te[:, 0]] == lab[te[:, 1]]
    internal_truth = int(same.sum())
    tp_mask = np.isin(tkeys, pkeys)
    internal_tp = int((tp_mask & same).sum())
    if internal_truth:
        cohesion = internal_tp / internal_truth
    else:
        cohesion = 1.0
        flags.append("cohesion-undefined-no-internal-truth-edges")
    boundary = len(te) - internal_truth
    rho_b = boundary / len(te) if len(te) else 0.0
    return EdgeMetrics(
        node_coverage=len(vhat) / n if n else 0.0,
        precision=float(precision), recall=float(recall), f1=float(f1),
        island_cohesion=float(cohesion), boundary_ratio=float(rho_b), flags=tuple(flags),
        counts={"recovered_nodes": int(len(vhat)), "predicted_edges": int(len(pkeys)),
                "true_positives": tp, "truth_edges_induced": int(len(tkeys)),
                "boundary_edges": int(boundary), "islands": len(islands)},
    )


def island_recalls(truth: Graph, predicted, islands) -> list[tuple[int, float]]:
    """Per-island ``(internal truth edges, recall)``; islands without truth edges are skipped."""
    n = truth.n
    pkeys = _pair_keys(predicted, n)
    out = []
    for isl in islands:
        isl = np.asarray(isl, dtype=np.int64)
        mask = np.zeros(n, dtype=bool)
        mask[isl] = True
        te = truth.edges[mask[truth.edges[:, 0]] & mask[truth.edges[:, 1]]]
        if len(te) == 0:
            continue
        keys = te[:, 0] * n + te[:, 1]
        out.append((len(te), float(np.isin(keys, pkeys).mean())))
    return out


def cohesion_recall_bounds_check(truth: Graph, predicted, islands, tol: float = 1e-12) -> bool:
    """``(1-rho_B) Coh <= Recall <= rho_B + (1-rho_B) Coh``."""
    m = edge_metrics(truth, predicted, islands)
    rho, coh, rec = m.boundary_ratio, m.island_cohesion, m.recall
    return (1 - rho) * coh <= rec + tol and rec <= rho + (1 - rho) * coh + tol


@dataclass
class LinkEvalSet:
    positives: np.ndarray
    negatives: np.ndarray
    applicable: bool = True

    @property
    def pairs(self) -> np.ndarray:
        return np.concatenate([self.positives, self.negatives])

    @property
    def labels(self) -> np.ndarray:
        return np.r_[np.ones(len(self.positives)), np.zeros(len(self.negatives))]


INAPPLICABLE = "inapplicable"


def build_link_eval(truth: Graph, islands, rng: np.random.Generator) -> LinkEvalSet:
    """True cross-island edges and an equal number of absent cross-island pairs."""
    islands = [np.asarray(i, dtype=np.int64) for i in islands if len(i)]
    if len(islands) < 2:
        return LinkEvalSet(np.zeros((0, 2), np.int64), np.zeros((0, 2), np.int64), applicable=False)
    n = truth.n
    nodes = np.unique(np.concatenate(islands))
    lab = _as_labels(islands, nodes, n)
    te = truth.edges
    ok = (lab[te[:, 0]] >= 0) & (lab[te[:, 1]] >= 0)
    te = te[ok]
    pos = te[lab[te[:, 0]] != lab[te[:, 1]]]
    if len(pos) == 0:
        return LinkEvalSet(np.zeros((0, 2), np.int64), np.zeros((0, 2), np.int64), applicable=False)
    truth_keys = set((te[:, 0] * n + te[:, 1]).tolist())
    sizes = np.array([len(i) for i in islands], dtype=float)
    total_cross = (sizes.sum() ** 2 - (sizes ** 2).sum()) / 2
    if total_cross - len(pos) < len(pos):
        raise ValueError("not enough absent cross-island pairs to sample negatives")
    chosen: list[int] = []
    seen: set[int] = set()
    if total_cross <= 2_000_000:
        u, w = np.triu_indices(len(nodes), 1)
        a, b = nodes[u], nodes[w]
        cross = lab[a] != lab[b]
        keys = a[cross] * n + b[cross]
        keys = keys[~np.isin(keys, list(truth_keys))]
        pick = rng.choice(len(keys), size=len(pos), replace=False)
        chosen = sorted(keys[pick].tolist())
    else:
        while len(chosen) < len(pos):
            a, b = rng.choice(nodes, size=2, replace=False)
            a, b = min(a, b), max(a, b)
            key = int(a * n + b)
            if lab[a] == lab[b] or key in truth_keys or key in seen:
                continue
            seen.add(key)
            chosen.append(key)
        chosen.sort()
    neg = np.array([[k // n, k % n] for k in chosen], dtype=np.int64).reshape(-1, 2)
    return LinkEvalSet(positives=pos.astype(np.int64), negatives=neg)


def auroc(scores_pos, scores_neg) -> float:
    """Rank-based area under the ROC curve, ties counted as one half."""
    sp_ = np.asarray(scores_pos, dtype=float)
    sn = np.asarray(scores_neg, dtype=float)
    if sp_.size == 0 or sn.size == 0:
        raise ValueError("need at least one positive and one negative")
    ranks = rankdata(np.concatenate([sp_, sn]))  # midranks
    r_pos = ranks[: sp_.size].sum()
    return float((r_pos - sp_.size * (sp_.size + 1) / 2) / (sp_.size * sn.size))


def score_pairs(pairs: np.ndarray, probabilities: dict | None = None,
                embedding: np.ndarray | None = None, nodes: np.ndarray | None = None) -> np.ndarray:
    """Pair scores from cross-edge probabilities (missing pairs score 0) or
    from cosine similarity of a per-node embedding."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if probabilities is not None:
        return np.array([probabilities.get((int(min(u, w)), int(max(u, w))), 0.0) for u, w in pairs])
    if embedding is None or nodes is None:
        raise ValueError("need probabilities or an embedding")
    rows = {int(v): i for i, v in enumerate(nodes)}
    norms = np.linalg.norm(embedding, axis=1)
    out = np.zeros(len(pairs))
    for j, (u, w) in enumerate(pairs):
        iu, iw = rows.get(int(u)), rows.get(int(w))
        if iu is None or iw is None or norms[iu] == 0 or norms[iw] == 0:
            continue
        out[j] = float(embedding[iu] @ embedding[iw] / (norms[iu] * norms[iw]))
    return out
