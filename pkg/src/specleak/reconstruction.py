"""Reconstruction results and their JSON file format."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(eq=False)
class Reconstruction:
    """Predicted edges over global ids plus provenance.

    ``cross_edges`` holds ``(u, w, votes, probability)`` tuples.
    ``embedding`` (optional) is a per-node global embedding, rows aligned with
    ``nodes``; it is used to score candidate pairs.
    """

    method: str
    n: int
    nodes: np.ndarray
    edges: np.ndarray
    cross_edges: list = field(default_factory=list)
    header: dict = field(default_factory=dict)
    embedding: np.ndarray | None = None

    def to_dict(self) -> dict:
        out = {
            "format": "specleak-reconstruction",
            "method": self.method,
            "n": int(self.n),
            "header": self.header,
            "nodes": [int(v) for v in self.nodes],
            "edges": [[int(u), int(w)] for u, w in self.edges],
            "cross_edges": [[int(u), int(w), int(c), float(p)] for u, w, c, p in self.cross_edges],
        }
        if self.embedding is not None:
            out["embedding"] = [[float(x) for x in row] for row in self.embedding]
        return out

    def to_bytes(self) -> bytes:
        return (json.dumps(self.to_dict(), sort_keys=True, indent=1, default=_jsonable) + "\n").encode("utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "Reconstruction":
        emb = d.get("embedding")
        return cls(
            method=d["method"],
            n=int(d["n"]),
            nodes=np.asarray(d["nodes"], dtype=np.int64),
            edges=np.asarray(d["edges"], dtype=np.int64).reshape(-1, 2),
            cross_edges=[(int(u), int(w), int(c), float(p)) for u, w, c, p in d.get("cross_edges", [])],
            header=d.get("header", {}),
            embedding=None if emb is None else np.asarray(emb, dtype=float).reshape(len(d["nodes"]), -1),
        )

    def cross_probability(self) -> dict[tuple[int, int], float]:
        return {(min(u, w), max(u, w)): p for u, w, _, p in self.cross_edges}


def _jsonable(x):
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, float):
        return x
    raise TypeError(f"not serializable: {type(x)}")


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)
    return path


def save_reconstruction(rec: Reconstruction, path) -> str:
    """Write atomically and return the SHA-256 of the bytes written."""
    data = rec.to_bytes()
    atomic_write_bytes(path, data)
    return hashlib.sha256(data).hexdigest()


def load_reconstruction(path) -> Reconstruction:
    with open(path, "rb") as fh:
        return Reconstruction.from_dict(json.loads(fh.read().decode("utf-8")))
