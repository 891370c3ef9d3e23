"""Eigenvector-synchronization baseline.

Pairwise Procrustes rotations between overlapping patches are assembled into
a weighted block matrix whose top eigenvectors give one rotation per patch.
The synchronized patch embeddings are averaged per node and a cosine kNN
graph over the averaged rows is the prediction.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from specleak.afr import AfrConfig, local_reconstruct
from specleak.alignment import procrustes
from specleak.reconstruction import Reconstruction
from specleak.spectral import PatchObservation

DENSE_LIMIT = 3000


def _pad(obs: PatchObservation, width: int) -> np.ndarray:
    out = np.zeros((obs.q, width))
    out[:, : obs.width] = obs.embedding
    return out


def overlapping_pairs(patches: list[PatchObservation], min_shared: int = 2):
    """``(i, j, shared ids)`` for every patch pair sharing ``min_shared`` nodes."""
    if not patches:
        return []
    rows = np.concatenate([np.full(p.q, i) for i, p in enumerate(patches)])
    cols = np.concatenate([p.nodes for p in patches])
    n = int(cols.max()) + 1
    inc = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(patches), n))
    ov = sp.triu(inc @ inc.T, k=1).tocoo()
    keep = ov.data >= min_shared
    pairs = sorted(zip(ov.row[keep].tolist(), ov.col[keep].tolist()))
    return [(i, j, np.intersect1d(patches[i].nodes, patches[j].nodes)) for i, j in pairs]


def pairwise_rotations(patches, width, pairs):
    """``R_ij`` with ``P_i[S] R_ij ~ P_j[S]`` for every overlapping pair."""
    padded = [_pad(p, width) for p in patches]
    out = []
    for i, j, shared in pairs:
        a = padded[i][np.searchsorted(patches[i].nodes, shared)]
        b = padded[j][np.searchsorted(patches[j].nodes, shared)]
        out.append(procrustes(b, a))
    return out


def synchronize(n_patches: int, width: int, pairs, rotations) -> np.ndarray:
    """Global rotations, shape (n_patches, width, width), from the block matrix.

    Patches without any overlap keep the identity.
    """
    k = width
    rows, cols, vals = [], [], []
    base = np.arange(k)
    rr, cc = np.meshgrid(base, base, indexing="ij")
    for (i, j, shared), r in zip(pairs, rotations):
        w = float(len(shared))
        rows += [i * k + rr.ravel(), j * k + rr.ravel()]
        cols += [j * k + cc.ravel(), i * k + cc.ravel()]
        vals += [w * r.ravel(), w * r.T.ravel()]
    dim = n_patches * k
    mat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(dim, dim))
    if dim <= DENSE_LIMIT:
        ev, vecs = np.linalg.eigh(mat.toarray())
        top = vecs[:, np.argsort(ev)[::-1][:k]]
    else:
        ev, vecs = eigsh(mat, k=k, which="LA", v0=np.ones(dim), tol=1e-10)
        top = vecs[:, np.argsort(ev)[::-1]]
    involved = np.zeros(n_patches, dtype=bool)
    for i, j, _ in pairs:
        involved[i] = involved[j] = True
    out = np.empty((n_patches, k, k))
    for i in range(n_patches):
        if not involved[i]:
            out[i] = np.eye(k)
            continue
        q, r = np.linalg.qr(top[i * k:(i + 1) * k])
        sign = np.sign(np.diag(r))
        sign[sign == 0] = 1
        out[i] = q * sign[None, :]
    return out


def cosine_knn_edges(emb: np.ndarray, ids: np.ndarray, k_nn: int, block: int = 1024) -> np.ndarray:
    """Undirected union of each row's ``k_nn`` most cosine-similar rows.

    Zero rows take no part. Ties go to the smaller id.
    """
    norms = np.linalg.norm(emb, axis=1)
    live = norms > 1e-12
    x = emb[live] / norms[live, None]
    lid = ids[live]
    m = len(lid)
    if m < 2:
        return np.zeros((0, 2), dtype=np.int64)
    kk = min(k_nn, m - 1)
    src, dst = [], []
    for s in range(0, m, block):
        sim = x[s:s + block] @ x.T
        sim[np.arange(sim.shape[0]), np.arange(s, s + sim.shape[0])] = -np.inf
        # stable sort on the negated similarity keeps the lower index on ties
        order = np.argsort(-sim, axis=1, kind="stable")[:, :kk]
        src.append(np.repeat(np.arange(s, s + sim.shape[0]), kk))
        dst.append(order.ravel())
    a, b = lid[np.concatenate(src)], lid[np.concatenate(dst)]
    pairs = np.sort(np.stack([a, b], axis=1), axis=1)
    return np.unique(pairs, axis=0).astype(np.int64)


def eigensync_reconstruct(patches: list[PatchObservation], n: int, k_nn: int = 10,
                          t: float = 0.8) -> Reconstruction:
    if not patches:
        raise ValueError("need at least one patch")
    width = max(p.width for p in patches)
    pairs = overlapping_pairs(patches, 2)
    header = {"method": "eigensync", "k_nn": k_nn, "alignment_width": width,
              "block_diagonal": "zero", "weights": "raw overlap size", "n_pairs": len(pairs)}
    nodes = np.unique(np.concatenate([p.nodes for p in patches]))
    if not pairs:
        cfg = AfrConfig(t=t)
        keys = []
        for p in patches:
            adj = local_reconstruct(p, cfg)
            iu, ju = np.nonzero(np.triu(adj, 1))
            keys.append(np.stack([p.nodes[iu], p.nodes[ju]], axis=1))
        edges = np.unique(np.concatenate(keys), axis=0) if keys else np.zeros((0, 2), int)
        header["fallback"] = "no overlapping patch pair; local heat-kernel edges"
        return Reconstruction("eigensync", n, nodes, edges.reshape(-1, 2).astype(np.int64), header=header)
    rots = pairwise_rotations(patches, width, pairs)
    glob = synchronize(len(patches), width, pairs, rots)
    acc = np.zeros((n, width))
    cnt = np.zeros(n)
    for i, p in enumerate(patches):
        acc[p.nodes] += _pad(p, width) @ glob[i]
        cnt[p.nodes] += 1
    z = acc[nodes] / cnt[nodes, None]
    edges = cosine_knn_edges(z, nodes, k_nn)
    return Reconstruction("eigensync", n, nodes, edges, header=header, embedding=z)
