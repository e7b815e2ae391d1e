"""Run manifests, single-seed fan-out, hashing, atomic file writes.

One master ``--seed`` reproduces a whole run: per-module sub-seeds derive
from sha256(master_seed || ":" || purpose-name), truncated to 31 bits.
Outputs are written to a temp path in the target directory and renamed,
so no artifact is ever left half-written.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional


def derive_seed(master: int, name: str) -> int:
    digest = hashlib.sha256(f"{master}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF


def hash_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class RunManifest:
    """What a run did: command, config, seeds, artifact hashes, wall-clock."""

    command: str
    config: dict
    seed: Optional[int] = None
    derived_seeds: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    status: str = "ok"
    error: str = ""
    started_at: str = ""
    elapsed_sec: float = 0.0
    version: int = 1

    def add_input(self, path: str | Path) -> None:
        p = Path(path)
        if p.exists() and p.is_file():
            self.inputs[str(p)] = hash_file(p)

    def add_output(self, path: str | Path) -> None:
        p = Path(path)
        if p.exists() and p.is_file():
            self.outputs[str(p)] = hash_file(p)

    def write(self, path: str | Path) -> None:
        payload = {
            "format": "stagegate-manifest",
            "version": self.version,
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "derived_seeds": self.derived_seeds,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "status": self.status,
            "error": self.error,
            "started_at": self.started_at,
            "elapsed_sec": round(self.elapsed_sec, 3),
        }
        atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


class ManifestTimer:
    def __init__(self, manifest: RunManifest):
        self.manifest = manifest
        self._t0 = 0.0

    def __enter__(self):
        self._t0 = time.monotonic()
        self.manifest.started_at = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        return self.manifest

    def __exit__(self, exc_type, exc, tb):
        self.manifest.elapsed_sec = time.monotonic() - self._t0
        if exc is not None:
            self.manifest.status = "error"
            self.manifest.error = f"{exc_type.__name__}: {exc}"
        return False
