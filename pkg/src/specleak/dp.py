"""Per-embedding Gaussian mechanism applied to an instance before release."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from specleak.archive import InstanceArchive
from specleak.rng import substream
from specleak.spectral import PatchObservation

CAVEAT = (
    "Per-embedding (epsilon, delta)-DP covers the release of a single embedding; "
    "it is not a node-level or edge-level DP guarantee for the underlying graph."
)


@dataclass(frozen=True)
class DpParams:
    """``epsilon = math.inf`` means no defense (identity transform)."""

    epsilon: float
    delta: float = 1e-5
    clip_norm: float = 1.0
    seed: int = 0
    per_row: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not self.clip_norm > 0:
            raise ValueError("clip norm must be positive")


def gaussian_sigma(epsilon: float, delta: float, clip_norm: float) -> float:
    """Classical calibration ``R sqrt(2 ln(1.25/delta)) / epsilon``."""
    if math.isinf(epsilon):
        return 0.0
    return clip_norm * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def clip_embedding(emb: np.ndarray, clip_norm: float, per_row: bool = False) -> np.ndarray:
    """Scale by ``min(1, R/||P||_F)``; with ``per_row`` every row separately."""
    emb = np.asarray(emb, dtype=float)
    if per_row:
        norms = np.linalg.norm(emb, axis=1)
        scale = np.minimum(1.0, clip_norm / np.maximum(norms, 1e-300))
        return emb * scale[:, None]
    norm = float(np.linalg.norm(emb))
    return emb if norm <= clip_norm else emb * (clip_norm / norm)


def sanitize_archive(archive: InstanceArchive, params: DpParams) -> InstanceArchive:
    """Clip and noise every embedding; eigenvalues pass through untouched."""
    manifest = json.loads(json.dumps(archive.manifest))
    if math.isinf(params.epsilon):
        manifest["defense"] = {"mechanism": "none", "tag": "epsilon=inf"}
        return InstanceArchive(manifest=manifest, patches=list(archive.patches), observed=archive.observed)
    sigma = gaussian_sigma(params.epsilon, params.delta, params.clip_norm)
    patches = []
    for i, obs in enumerate(archive.patches):
        clipped = clip_embedding(obs.embedding, params.clip_norm, params.per_row)
        noisy = clipped + sigma * substream(params.seed, "dp", i).standard_normal(clipped.shape)
        patches.append(PatchObservation(nodes=obs.nodes, embedding=noisy,
                                        lambda_next=obs.lambda_next, eigenvalues=obs.eigenvalues))
    manifest["defense"] = {
        "mechanism": "gaussian",
        "epsilon": params.epsilon,
        "delta": params.delta,
        "clip_norm": params.clip_norm,
        "clipping": "per-row L2" if params.per_row else "whole-matrix Frobenius",
        "sigma": sigma,
        "calibration": "sigma = R * sqrt(2 ln(1.25/delta)) / epsilon",
        "seed": params.seed,
        "caveat": CAVEAT,
    }
    return InstanceArchive(manifest=manifest, patches=patches, observed=archive.observed)
