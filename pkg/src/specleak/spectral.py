"""Eigendecomposition, truncated embeddings, heat kernels and patch scalars."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_Q_MAX = 500


class PatchTooLargeError(ValueError):
    """A patch exceeds the bounded-patch-size limit ``q_max``."""


@dataclass(frozen=True)
class EigenSystem:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def q(self) -> int:
        return len(self.eigenvalues)


def canonical_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so the largest-magnitude entry is positive.

    Ties in magnitude go to the first such row.
    """
    v = np.array(vectors, dtype=float, copy=True)
    if v.size == 0:
        return v
    mag = np.abs(v)
    # magnitudes equal up to rounding count as ties; argmax picks the first
    top = mag.max(axis=0)
    first = np.argmax(mag >= top[None, :] * (1 - 1e-10), axis=0)
    flip = v[first, np.arange(v.shape[1])] < 0
    v[:, flip] *= -1
    return v


def symmetric_eigendecompose(mat: np.ndarray, q_max: int | None = DEFAULT_Q_MAX) -> EigenSystem:
    """Full ascending spectrum of a symmetric matrix with fixed eigenvector signs."""
    a = np.asarray(mat, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    if q_max is not None and a.shape[0] > q_max:
        raise PatchTooLargeError(
            f"patch dimension {a.shape[0]} exceeds q_max={q_max} "
            "(bounded patch size assumption); raise q_max to process it"
        )
    if a.size and np.max(np.abs(a - a.T)) > 1e-10:
        raise ValueError("matrix is not symmetric within 1e-10")
    vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    return EigenSystem(vals, canonical_signs(vecs))


def truncate_embedding(es: EigenSystem, k: int):
    """Bottom-``k`` eigenvectors, the next eigenvalue, and the kept eigenvalues.

    When ``k >= q`` every column is kept and the next eigenvalue is reported
    as the sentinel 0.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    q = es.q
    if k >= q:
        return es.eigenvectors.copy(), 0.0, es.eigenvalues.copy()
    return es.eigenvectors[:, :k].copy(), float(es.eigenvalues[k]), es.eigenvalues[:k].copy()


@dataclass(frozen=True, eq=False)
class PatchObservation:
    """One leaked artifact: nodes, (noisy) bottom eigenvectors and eigenvalues.

    ``embedding`` has ``q`` rows and ``c = min(k, q)`` columns. ``truncated``
    is True when the spectrum was actually cut (``k < q``); otherwise
    ``lambda_next`` holds the sentinel 0.
    """

    nodes: np.ndarray
    embedding: np.ndarray
    lambda_next: float
    eigenvalues: np.ndarray

    @property
    def q(self) -> int:
        return len(self.nodes)

    @property
    def width(self) -> int:
        return self.embedding.shape[1]

    @property
    def truncated(self) -> bool:
        return self.width < self.q

    def same_as(self, other: "PatchObservation") -> bool:
        return (
            np.array_equal(self.nodes, other.nodes)
            and self.embedding.tobytes() == other.embedding.tobytes()
            and self.eigenvalues.tobytes() == other.eigenvalues.tobytes()
            and float(self.lambda_next) == float(other.lambda_next)
        )


def heat_kernel_from_parts(vectors: np.ndarray, eigenvalues: np.ndarray, t: float) -> np.ndarray:
    if t <= 0:
        raise ValueError("heat time must be positive")
    w = np.exp(-t * np.asarray(eigenvalues, dtype=float))
    h = (vectors * w[None, :]) @ vectors.T
    return 0.5 * (h + h.T)


def truncated_heat_kernel(obs: PatchObservation, t: float) -> np.ndarray:
    """``P diag(exp(-t lambda)) P^T`` over the retained columns."""
    return heat_kernel_from_parts(obs.embedding, obs.eigenvalues, t)


def degree_entropy(adj: np.ndarray) -> float:
    """Entropy of the degree distribution, divided by ``log q``.

    Zero for single-node patches.
    """
    a = np.asarray(adj)
    q = a.shape[0]
    if q <= 1:
        return 0.0
    deg = a.astype(bool).sum(axis=1)
    _, counts = np.unique(deg, return_counts=True)
    p = counts / q
    h = float(-(p * np.log(p)).sum())
    return min(1.0, max(0.0, h / math.log(q)))


@dataclass(frozen=True)
class SpectralQuantities:
    delta: float
    eta: float
    rho: float
    entropy: float
    fidelity: float


def gap_ratio(delta: float, eta: float) -> float:
    if math.isinf(delta):
        return 1.0
    if delta <= 0:
        return 0.0
    return delta / (delta + eta)


def spectral_quantities(obs: PatchObservation, local_adj, t: float, alpha: float) -> SpectralQuantities:
    """Gap, truncation proxy, their ratio, degree entropy and fidelity score."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    eta = math.exp(-t * float(obs.lambda_next))
    if obs.truncated:
        delta = float(obs.lambda_next - obs.eigenvalues[-1])
    else:
        # nothing was cut away; treat the gap as unbounded
        delta = math.inf
    rho = gap_ratio(delta, eta)
    ent = degree_entropy(local_adj)
    s = alpha * rho + (1 - alpha) * ent
    return SpectralQuantities(delta=delta, eta=eta, rho=rho, entropy=ent, fidelity=min(1.0, max(0.0, s)))


def add_gaussian_noise(embedding: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    out = np.array(embedding, dtype=float, copy=True)
    if sigma == 0:
        return out
    return out + sigma * rng.standard_normal(out.shape)


def proxy_threshold(decay: str, C: float, alpha: float, eps: float) -> int:
    """Smallest truncation level whose proxy eigen-decay falls below ``eps``.

    ``decay`` is ``"polynomial"`` (``C r^-alpha``) or ``"exponential"``
    (``C e^{-alpha r}``).
    """
    if C <= 0 or alpha <= 0 or eps <= 0:
        raise ValueError("C, alpha and eps must be positive")
    if eps >= C:
        return 0
    if decay in ("polynomial", "poly"):
        x = (C / eps) ** (1.0 / alpha)
    elif decay in ("exponential", "exp"):
        x = math.log(C / eps) / alpha
    else:
        raise ValueError(f"unknown decay {decay!r}")
    # exact integers like ln(e^3) come back as 3.0000000000000004
    if abs(x - round(x)) <= 1e-9 * max(1.0, x):
        x = float(round(x))
    return max(0, math.ceil(x) - 1)


def separating_heat_time(q: int, dmax: float, prefer: str = "largest") -> float:
    """Heat time ``log(C q) / q`` with ``C`` a power of two, ``C q > 1`` and
    ``t dmax <= 1/4``.

    ``prefer`` picks the largest or the smallest admissible ``C``. When no
    power of two qualifies the time falls back to ``1 / (4 dmax)``.
    """
    if q < 2 or dmax <= 0:
        raise ValueError("need q >= 2 and a positive maximum degree")
    ok = []
    j = math.floor(-math.log2(q)) + 1  # first power with C q > 1
    while True:
        t = math.log(2.0 ** j * q) / q
        if t * dmax > 0.25:
            break
        ok.append(t)
        j += 1
    if not ok:
        return 1.0 / (4.0 * dmax)
    return ok[-1] if prefer == "largest" else ok[0]
