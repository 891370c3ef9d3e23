import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import orthogonal_procrustes
from scipy.stats import ortho_group

from specleak.alignment import (
    draw_minimal_samples,
    is_orthogonal,
    procrustes,
    procrustes_batch,
    procrustes_residual,
    ransac_procrustes,
)
from specleak.rng import substream


def rotation(k, seed):
    return ortho_group.rvs(k, random_state=seed)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_procrustes_matches_scipy(k, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((k + 5, k))
    b = rng.standard_normal((k + 5, k))
    q = procrustes(a, b)
    ref, _ = orthogonal_procrustes(b, a)  # argmin ||b R - a||
    assert np.allclose(q, ref, atol=1e-8)
    assert is_orthogonal(q)
    assert procrustes_residual(a, b) == pytest.approx(np.sum((a - b @ q) ** 2), abs=1e-9)


def test_procrustes_batch_agrees_with_single():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((7, 4, 3))
    b = rng.standard_normal((7, 4, 3))
    qs = procrustes_batch(a, b)
    for i in range(7):
        assert np.allclose(qs[i], procrustes(a[i], b[i]))


def test_minimal_samples_have_distinct_rows():
    s = draw_minimal_samples(substream(0, "s"), 5, 4, 500)
    assert s.shape == (500, 4)
    assert all(len(set(row)) == 4 for row in s.tolist())
    with pytest.raises(ValueError):
        draw_minimal_samples(substream(0, "s"), 3, 4, 1)


def test_noiseless_ransac_recovers_rotation():
    rng = np.random.default_rng(2)
    q = rotation(4, 3)
    a = rng.standard_normal((20, 4))
    b = a @ q.T  # a = b q
    res = ransac_procrustes(a, b, 5, 50, substream(0, "r"))
    assert res.accepted and res.size == 20
    assert np.linalg.norm(res.rotation - q) <= 1e-8


def test_outliers_are_excluded():
    rng = np.random.default_rng(5)
    k, m = 3, 40
    q = rotation(k, 9)
    b = rng.standard_normal((m, k))
    a = b @ q + 0.01 * rng.standard_normal((m, k))
    bad = rng.choice(m, size=12, replace=False)
    a[bad] += rng.normal(0, 5.0, size=(12, k))
    res = ransac_procrustes(a, b, k + 1, 300, substream(1, "r"))
    good = np.setdiff1d(np.arange(m), bad)
    assert set(good.tolist()) <= set(res.consensus.tolist())
    clean_err = np.linalg.norm(procrustes(a[good], b[good]) - q)
    assert np.linalg.norm(res.rotation - q) <= 10 * clean_err


def test_too_few_inliers_always_rejected():
    rng = np.random.default_rng(8)
    k, m = 3, 30
    q = rotation(k, 1)
    b = rng.standard_normal((m, k))
    a = rng.standard_normal((m, k)) * 3
    a[:6] = b[:6] @ q  # 6 planted inliers, gate needs 10
    for seed in range(20):
        res = ransac_procrustes(a, b, 10, 100, substream(seed, "r"), tol=1e-6)
        assert not res.accepted
        assert set(res.consensus.tolist()) <= set(range(6))


def test_needs_k_plus_one_rows():
    with pytest.raises(ValueError):
        ransac_procrustes(np.zeros((3, 3)), np.zeros((3, 3)), 4, 10, substream(0, "r"))


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 5), st.integers(0, 1000))
def test_returned_rotations_orthogonal(k, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((k + 6, k))
    b = rng.standard_normal((k + 6, k))
    res = ransac_procrustes(a, b, k + 1, 30, substream(seed, "r"))
    assert np.max(np.abs(res.rotation.T @ res.rotation - np.eye(k))) <= 1e-8
