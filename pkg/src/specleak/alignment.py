"""Orthogonal Procrustes fits and a RANSAC wrapper around them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def procrustes(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Orthogonal ``Q`` minimizing ``||A - B Q||_F`` (reflections allowed).

    With ``B^T A = U S V^T`` the minimizer is ``U V^T``.
    """
    u, _, vt = np.linalg.svd(B.T @ A)
    return u @ vt


def procrustes_batch(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Stacked version of :func:`procrustes` for arrays of shape (M, r, k)."""
    u, _, vt = np.linalg.svd(np.einsum("mri,mrj->mij", B, A))
    return u @ vt


def procrustes_residual(A: np.ndarray, B: np.ndarray) -> float:
    """Closed-form ``min_Q ||A - B Q||_F^2``."""
    s = np.linalg.svd(B.T @ A, compute_uv=False)
    return float(max(0.0, (A * A).sum() + (B * B).sum() - 2.0 * s.sum()))


def draw_minimal_samples(rng: np.random.Generator, n_rows: int, size: int, iters: int) -> np.ndarray:
    """``iters`` row subsets of ``size`` distinct rows each, shape (iters, size)."""
    if size > n_rows:
        raise ValueError("sample larger than the row count")
    out = rng.integers(0, n_rows, size=(iters, size))
    while True:
        srt = np.sort(out, axis=1)
        bad = np.flatnonzero((np.diff(srt, axis=1) == 0).any(axis=1))
        if bad.size == 0:
            return out
        out[bad] = rng.integers(0, n_rows, size=(bad.size, size))


@dataclass
class RansacResult:
    rotation: np.ndarray | None
    consensus: np.ndarray
    accepted: bool
    tolerance: float
    sigma_est: float
    samples: np.ndarray
    residual: float

    @property
    def size(self) -> int:
        return len(self.consensus)


def ransac_procrustes(A: np.ndarray, B: np.ndarray, min_consensus: int, iters: int,
                      rng: np.random.Generator, tol: float | None = None,
                      tol_floor: float = 1e-9) -> RansacResult:
    """Robust ``Q`` with ``A ~ B Q`` on the rows that agree.

    Each iteration fits a minimal sample of ``k+1`` rows. The inlier cutoff
    defaults to ``3 * sigma_est * sqrt(k)`` where ``sigma_est`` is the
    smallest median row residual seen over all minimal fits. The fit with
    the largest inlier set is refit on it; the stitch is accepted when that
    set has at least ``min_consensus`` rows.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    m, k = A.shape
    if B.shape != A.shape:
        raise ValueError("A and B must have the same shape")
    if m < k + 1:
        raise ValueError(f"need at least k+1={k + 1} shared rows, got {m}")
    samples = draw_minimal_samples(rng, m, k + 1, iters)
    qs = procrustes_batch(A[samples], B[samples])
    res = np.linalg.norm(A[None, :, :] - np.einsum("rj,mjk->mrk", B, qs), axis=2)
    medians = np.median(res, axis=1)
    sigma_est = float(medians.min())
    if tol is None:
        tol = max(3.0 * sigma_est * np.sqrt(k), tol_floor)
    counts = (res <= tol).sum(axis=1)
    best = int(np.lexsort((medians, -counts))[0])
    inl = np.flatnonzero(res[best] <= tol)
    if len(inl) >= k:
        q = procrustes(A[inl], B[inl])
        r = np.linalg.norm(A - B @ q, axis=1)
        refit_inl = np.flatnonzero(r <= tol)
        if len(refit_inl) >= len(inl):
            inl = refit_inl
        else:
            q = qs[best]
    else:
        q = qs[best]
    resid = float(np.sum((A[inl] - B[inl] @ q) ** 2))
    return RansacResult(rotation=q, consensus=inl, accepted=len(inl) >= min_consensus,
                        tolerance=float(tol), sigma_est=sigma_est, samples=samples, residual=resid)


def is_orthogonal(q: np.ndarray, tol: float = 1e-8) -> bool:
    return bool(np.max(np.abs(q.T @ q - np.eye(q.shape[1]))) <= tol)
