import numpy as np
from hypothesis import given, settings, strategies as st
from scipy.stats import ortho_group

from specleak.afr import local_reconstruct
from specleak.alignment import procrustes
from specleak.eigensync import (
    cosine_knn_edges,
    eigensync_reconstruct,
    overlapping_pairs,
    pairwise_rotations,
    synchronize,
)
from specleak.generate import observe_patch
from specleak.graph import Graph
from specleak.rng import substream
from specleak.spectral import PatchObservation


def planted(seed=0, k=3, n=30, window=12, stride=6):
    rng = np.random.default_rng(seed)
    coords = rng.standard_normal((n, k))
    patches = []
    for i, a in enumerate(range(0, n - window + 1, stride)):
        nodes = np.arange(a, a + window)
        rot = ortho_group.rvs(k, random_state=seed * 100 + i)
        patches.append(PatchObservation(nodes, coords[nodes] @ rot, 0.0, np.zeros(k)))
    return coords, patches


def test_single_patch_falls_back_to_local_edges():
    g = Graph.from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)])
    obs = observe_patch(g, np.arange(5), 5, 0.0, substream(0, "x"))
    rec = eigensync_reconstruct([obs], 5)
    local = local_reconstruct(obs)
    iu, ju = np.nonzero(np.triu(local, 1))
    assert rec.edges.tolist() == np.stack([iu, ju], 1).tolist()
    assert "fallback" in rec.header


def test_identical_patches_align_to_identity():
    _, patches = planted()
    twin = [patches[0], PatchObservation(patches[0].nodes, patches[0].embedding.copy(), 0.0, np.zeros(3))]
    pairs = overlapping_pairs(twin)
    rot = pairwise_rotations(twin, 3, pairs)[0]
    assert np.allclose(np.abs(rot), np.eye(3), atol=1e-8)
    rec = eigensync_reconstruct(twin, 30)
    z = rec.embedding
    emb = patches[0].embedding
    assert np.linalg.norm(z - emb @ procrustes(z, emb)) <= 1e-8


def test_planted_rotations_synchronize_to_one_frame():
    coords, patches = planted(seed=3)
    pairs = overlapping_pairs(patches)
    glob = synchronize(len(patches), 3, pairs, pairwise_rotations(patches, 3, pairs))
    for r in glob:
        assert np.allclose(r.T @ r, np.eye(3), atol=1e-8)
    frames = [p.embedding @ g for p, g in zip(patches, glob)]
    q = procrustes(frames[0], coords[patches[0].nodes])
    for p, f in zip(patches, frames):
        assert np.allclose(f, coords[p.nodes] @ q, atol=1e-8)


def test_uninvolved_patch_keeps_identity():
    _, patches = planted()
    lonely = PatchObservation(np.array([100, 101, 102]), np.eye(3), 0.0, np.zeros(3))
    allp = patches + [lonely]
    pairs = overlapping_pairs(allp)
    glob = synchronize(len(allp), 3, pairs, pairwise_rotations(allp, 3, pairs))
    assert np.array_equal(glob[-1], np.eye(3))


def brute_knn(emb, ids, k):
    x = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    sim = x @ x.T
    out = set()
    for i in range(len(ids)):
        order = sorted((j for j in range(len(ids)) if j != i), key=lambda j: (-sim[i, j], j))
        for j in order[:k]:
            out.add((min(ids[i], ids[j]), max(ids[i], ids[j])))
    return out


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 25), st.integers(1, 5), st.integers(0, 10_000))
def test_knn_matches_brute_force(n, k, seed):
    rng = np.random.default_rng(seed)
    emb = rng.standard_normal((n, 3))
    ids = np.sort(rng.choice(1000, size=n, replace=False))
    got = {tuple(e) for e in cosine_knn_edges(emb, ids, k, block=7).tolist()}
    assert got == brute_knn(emb, ids, min(k, n - 1))


def test_zero_rows_are_ignored():
    emb = np.array([[1.0, 0.0], [0.0, 0.0], [0.9, 0.1]])
    assert cosine_knn_edges(emb, np.array([0, 1, 2]), 2).tolist() == [[0, 2]]


def test_reconstruction_header_and_determinism():
    _, patches = planted(seed=5)
    a = eigensync_reconstruct(patches, 30, k_nn=4)
    b = eigensync_reconstruct(patches, 30, k_nn=4)
    assert a.to_bytes() == b.to_bytes()
    assert a.header["n_pairs"] == len(overlapping_pairs(patches))
