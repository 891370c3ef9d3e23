import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from oracles import jacobi_eigh, nx_normalized_laplacian
from specleak.rng import substream
from specleak.spectral import (
    PatchObservation,
    PatchTooLargeError,
    add_gaussian_noise,
    canonical_signs,
    degree_entropy,
    gap_ratio,
    heat_kernel_from_parts,
    proxy_threshold,
    separating_heat_time,
    spectral_quantities,
    symmetric_eigendecompose,
    truncate_embedding,
    truncated_heat_kernel,
)

P2 = np.array([[1.0, -1.0], [-1.0, 1.0]])
K3 = nx_normalized_laplacian([(0, 1), (1, 2), (0, 2)], 3)


def obs_from(lap, k, nodes=None):
    es = symmetric_eigendecompose(lap)
    emb, lam, vals = truncate_embedding(es, k)
    nodes = np.arange(lap.shape[0]) if nodes is None else nodes
    return PatchObservation(nodes, emb, lam, vals)


def test_p2_spectrum():
    es = symmetric_eigendecompose(P2)
    assert np.allclose(es.eigenvalues, [0, 2], atol=1e-12)


def test_k3_spectrum_matches_jacobi():
    es = symmetric_eigendecompose(K3)
    assert np.allclose(es.eigenvalues, [0.0, 1.5, 1.5], atol=1e-12)
    assert np.allclose(es.eigenvalues, jacobi_eigh(K3)[0], atol=1e-12)


def test_identity_gives_canonical_basis():
    es = symmetric_eigendecompose(np.eye(4))
    assert np.allclose(es.eigenvalues, 1)
    assert np.allclose(es.eigenvectors, np.eye(4))


def test_asymmetric_and_oversized_rejected():
    with pytest.raises(ValueError):
        symmetric_eigendecompose(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(PatchTooLargeError, match="q_max"):
        symmetric_eigendecompose(np.eye(5), q_max=4)


def test_sign_convention_largest_entry_positive():
    v = canonical_signs(np.array([[0.1, -0.6], [-0.8, 0.6], [0.2, 0.1]]))
    assert v[1, 0] > 0
    # exact magnitude tie: the first index decides
    assert v[0, 1] > 0


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 10), st.floats(0.2, 0.9), st.integers(0, 10_000))
def test_eigendecomposition_against_jacobi(n, p, seed):
    lap = nx_normalized_laplacian(list(nx.gnp_random_graph(n, p, seed=seed).edges), n)
    es = symmetric_eigendecompose(lap)
    ref_vals, _ = jacobi_eigh(lap)
    assert np.allclose(es.eigenvalues, ref_vals, atol=1e-9)
    v = es.eigenvectors
    assert np.allclose(v.T @ v, np.eye(n), atol=1e-10)
    assert np.allclose(lap @ v, v * es.eigenvalues[None, :], atol=1e-9)
    top = np.argmax(np.abs(v) >= np.abs(v).max(axis=0) * (1 - 1e-10), axis=0)
    assert np.all(v[top, np.arange(n)] > 0)


def test_truncation_examples():
    emb, lam, vals = truncate_embedding(symmetric_eigendecompose(P2), 1)
    assert emb.shape == (2, 1) and lam == pytest.approx(2.0)
    assert np.allclose(np.abs(emb[:, 0]), 1 / math.sqrt(2))
    emb, lam, vals = truncate_embedding(symmetric_eigendecompose(P2), 5)
    assert emb.shape == (2, 2) and lam == 0.0
    _, lam, _ = truncate_embedding(symmetric_eigendecompose(K3), 2)
    assert lam == pytest.approx(1.5)
    with pytest.raises(ValueError):
        truncate_embedding(symmetric_eigendecompose(P2), 0)


def test_p2_heat_kernel():
    h = truncated_heat_kernel(obs_from(P2, 2), 0.8)
    assert np.allclose(h, [[0.6009, 0.3991], [0.3991, 0.6009]], atol=1e-4)
    assert np.allclose(h, expm(-0.8 * P2), atol=1e-12)


def test_p2_rank_one_kernel():
    assert np.allclose(truncated_heat_kernel(obs_from(P2, 1), 0.8), 0.5 * np.ones((2, 2)))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.floats(0.2, 0.9), st.integers(0, 10_000), st.floats(0.05, 3.0))
def test_full_kernel_equals_matrix_exponential(n, p, seed, t):
    lap = nx_normalized_laplacian(list(nx.gnp_random_graph(n, p, seed=seed).edges), n)
    h = truncated_heat_kernel(obs_from(lap, n), t)
    assert np.allclose(h, expm(-t * lap), atol=1e-9)


def test_heat_time_must_be_positive():
    with pytest.raises(ValueError):
        heat_kernel_from_parts(np.eye(2), np.zeros(2), 0.0)


def test_quantities_for_truncated_triangle():
    obs = obs_from(K3, 1)  # next eigenvalue 1.5, kept eigenvalue 0
    sq = spectral_quantities(obs, np.ones((3, 3)) - np.eye(3), 0.8, 0.7)
    assert sq.delta == pytest.approx(1.5)
    assert sq.eta == pytest.approx(0.3012, abs=1e-4)
    assert sq.rho == pytest.approx(0.8328, abs=1e-4)
    assert sq.entropy == 0.0
    assert sq.fidelity == pytest.approx(0.7 * sq.rho)


def test_untruncated_patch_has_unit_ratio():
    sq = spectral_quantities(obs_from(K3, 3), np.zeros((3, 3)), 0.8, 0.7)
    assert math.isinf(sq.delta) and sq.eta == 1.0 and sq.rho == 1.0


def test_degree_entropy_examples():
    c4 = np.roll(np.eye(4), 1, axis=1) + np.roll(np.eye(4), -1, axis=1)
    assert degree_entropy(c4) == 0.0
    star = np.zeros((4, 4))
    star[0, 1:] = star[1:, 0] = 1
    assert degree_entropy(star) == pytest.approx(0.4056, abs=1e-4)
    assert degree_entropy(np.zeros((1, 1))) == 0.0


def test_gap_ratio_edge_cases():
    assert gap_ratio(0.0, 0.5) == 0.0
    assert gap_ratio(math.inf, 0.5) == 1.0


@given(st.floats(0, 5), st.floats(0, 5), st.floats(1e-6, 1))
def test_gap_ratio_monotone(d1, d2, eta):
    lo, hi = sorted((d1, d2))
    assert 0 <= gap_ratio(lo, eta) <= gap_ratio(hi, eta) <= 1


def test_noise_zero_and_determinism():
    x = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(add_gaussian_noise(x, 0.0, substream(0, "n")), x)
    a = add_gaussian_noise(x, 0.05, substream(3, "n", 1))
    b = add_gaussian_noise(x, 0.05, substream(3, "n", 1))
    assert a.tobytes() == b.tobytes() and not np.array_equal(a, x)
    with pytest.raises(ValueError):
        add_gaussian_noise(x, -1.0, substream(0, "n"))


@pytest.mark.parametrize("decay,C,alpha,eps,want", [
    ("polynomial", 1, 0.5, 0.1, 99),
    ("exponential", 1, 1, math.exp(-3), 2),
    ("polynomial", 1, 1, 0.1, 9),
    ("exp", 1, 1, 0.0497871, 2),
    ("poly", 1, 1, 2.0, 0),
])
def test_proxy_threshold(decay, C, alpha, eps, want):
    assert proxy_threshold(decay, C, alpha, eps) == want


def test_proxy_threshold_rejects_unknown_decay():
    with pytest.raises(ValueError):
        proxy_threshold("cubic", 1, 1, 0.1)


def test_separating_heat_time_respects_degree_bound():
    for q, dmax in [(5, 4), (12, 3), (30, 29), (2, 1)]:
        for prefer in ("largest", "smallest"):
            t = separating_heat_time(q, dmax, prefer)
            assert 0 < t and t * dmax <= 0.25 + 1e-12
    assert separating_heat_time(12, 3, "smallest") <= separating_heat_time(12, 3, "largest")
