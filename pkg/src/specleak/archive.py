"""Checksummed instance archives: a zip file or a plain directory.

Layout::

    manifest.json          UTF-8 JSON (parameters, provenance, file digests)
    observed.bin           u32 LE observed node ids
    patches/000000.bin     one payload per patch

Patch payload, all little-endian: ``u32 q, u32 c, f64 lambda_next``, then
``q`` u32 node ids, ``c`` f64 eigenvalues and the ``q x c`` f64 embedding in
row-major order.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import struct
import tempfile
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from specleak.spectral import PatchObservation

MANIFEST = "manifest.json"
OBSERVED = "observed.bin"
_HEADER = struct.Struct("<IId")
_ZIP_TIME = (1980, 1, 1, 0, 0, 0)


class IntegrityError(RuntimeError):
    """A stored digest does not match the file contents."""


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def encode_patch(obs: PatchObservation) -> bytes:
    q, c = obs.embedding.shape
    if q != len(obs.nodes) or c != len(obs.eigenvalues):
        raise ValueError("inconsistent patch shapes")
    if len(obs.nodes) and int(np.max(obs.nodes)) >= 2**32:
        raise ValueError("node id does not fit in u32")
    return b"".join([
        _HEADER.pack(q, c, float(obs.lambda_next)),
        np.asarray(obs.nodes, dtype="<u4").tobytes(),
        np.asarray(obs.eigenvalues, dtype="<f8").tobytes(),
        np.ascontiguousarray(obs.embedding, dtype="<f8").tobytes(),
    ])


def decode_patch(data: bytes) -> PatchObservation:
    q, c, lam = _HEADER.unpack_from(data, 0)
    off = _HEADER.size
    expected = off + 4 * q + 8 * c + 8 * q * c
    if len(data) != expected:
        raise ValueError(f"patch payload has {len(data)} bytes, expected {expected}")
    nodes = np.frombuffer(data, dtype="<u4", count=q, offset=off).astype(np.int64)
    off += 4 * q
    vals = np.frombuffer(data, dtype="<f8", count=c, offset=off).astype(float)
    off += 8 * c
    emb = np.frombuffer(data, dtype="<f8", count=q * c, offset=off).astype(float).reshape(q, c)
    return PatchObservation(nodes=nodes, embedding=emb, lambda_next=lam, eigenvalues=vals)


@dataclass(eq=False)
class InstanceArchive:
    """Manifest plus decoded patches and the observed node set."""

    manifest: dict
    patches: list[PatchObservation]
    observed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def payloads(self) -> dict[str, bytes]:
        files = {OBSERVED: np.asarray(self.observed, dtype="<u4").tobytes()}
        for i, obs in enumerate(self.patches):
            files[patch_name(i)] = encode_patch(obs)
        return files

    def sealed_manifest(self) -> dict:
        """Manifest with the digest map refreshed from the current payloads."""
        man = json.loads(json.dumps(self.manifest))
        man["files"] = {name: sha256_hex(data) for name, data in self.payloads().items()}
        man["n_patches"] = len(self.patches)
        return man


def patch_name(i: int) -> str:
    return f"patches/{i:06d}.bin"


def manifest_bytes(man: dict) -> bytes:
    return (json.dumps(man, sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def archive_bytes(archive: InstanceArchive) -> dict[str, bytes]:
    """Every file of the archive, manifest included, keyed by name."""
    files = archive.payloads()
    files[MANIFEST] = manifest_bytes(archive.sealed_manifest())
    return files


def _is_dir_target(path: Path, container: str) -> bool:
    if container == "dir":
        return True
    if container == "zip":
        return False
    return path.is_dir() or str(path).endswith(os.sep)


def write_archive(archive: InstanceArchive, path, container: str = "auto") -> Path:
    """Write atomically; ``container`` is ``"zip"``, ``"dir"`` or ``"auto"``."""
    path = Path(path)
    files = archive_bytes(archive)
    order = [MANIFEST, OBSERVED] + sorted(n for n in files if n.startswith("patches/"))
    path.parent.mkdir(parents=True, exist_ok=True)
    if _is_dir_target(path, container):
        tmp = Path(tempfile.mkdtemp(prefix=".tmp-", dir=path.parent))
        for name in order:
            target = tmp / name
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(files[name])
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
        return path
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=path.parent)
    os.close(fd)
    try:
        with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
            for name in order:
                info = zipfile.ZipInfo(name, date_time=_ZIP_TIME)
                info.external_attr = 0o644 << 16
                info.create_system = 3
                zf.writestr(info, files[name])
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)
    return path


def _read_files(path) -> dict[str, bytes]:
    path = Path(path)
    if path.is_dir():
        out = {}
        for p in sorted(path.rglob("*")):
            if p.is_file():
                out[p.relative_to(path).as_posix()] = p.read_bytes()
        return out
    if not path.exists():
        raise FileNotFoundError(path)
    with zipfile.ZipFile(path) as zf:
        return {name: zf.read(name) for name in zf.namelist() if not name.endswith("/")}


@dataclass
class VerifyReport:
    ok: bool
    files: dict[str, str]

    @property
    def failed(self) -> list[str]:
        return [n for n, s in self.files.items() if s != "ok"]

    def to_dict(self) -> dict:
        return {"ok": self.ok, "files": dict(self.files)}


def _check(files: dict[str, bytes]) -> tuple[dict, VerifyReport]:
    if MANIFEST not in files:
        raise FileNotFoundError("archive has no manifest.json")
    man = json.loads(files[MANIFEST].decode("utf-8"))
    status = {}
    for name, digest in sorted(man.get("files", {}).items()):
        if name not in files:
            status[name] = "missing"
        else:
            status[name] = "ok" if sha256_hex(files[name]) == digest else "mismatch"
    for name in sorted(files):
        if name != MANIFEST and name not in status:
            status[name] = "unlisted"
    return man, VerifyReport(ok=all(s == "ok" for s in status.values()), files=status)


def verify_archive(path) -> VerifyReport:
    """Recompute every digest listed in the manifest."""
    _, report = _check(_read_files(path))
    return report


def read_archive(path, verify: bool = True) -> InstanceArchive:
    files = _read_files(path)
    man, report = _check(files)
    if verify and not report.ok:
        raise IntegrityError("checksum failure: " + ", ".join(report.failed))
    patches = [decode_patch(files[patch_name(i)]) for i in range(int(man["n_patches"]))]
    observed = np.frombuffer(files[OBSERVED], dtype="<u4").astype(np.int64)
    return InstanceArchive(manifest=man, patches=patches, observed=observed)
