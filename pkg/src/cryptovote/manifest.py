"""Run-directory manifest: which stage produced which file, with content hashes.

A stage refuses to consume a file whose bytes no longer match what its
producer recorded, or whose producer itself consumed stale inputs.
"""

from __future__ import annotations

import hashlib
import json
import os
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path

from .errors import CryptovoteError, StaleArtifactError

MANIFEST = "manifest.json"
LOCK = ".lock"


def file_hash(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Manifest:
    def __init__(self, run_dir: Path):
        self.run_dir = Path(run_dir)
        path = self.run_dir / MANIFEST
        data = json.loads(path.read_text()) if path.exists() else {}
        self.config_hash: str | None = data.get("config_hash")
        self.stages: dict[str, dict] = data.get("stages", {})

    def _rel(self, path: Path) -> str:
        return Path(path).resolve().relative_to(self.run_dir.resolve()).as_posix()

    def producer_of(self, rel: str) -> str | None:
        for stage, rec in self.stages.items():
            if rel in rec.get("outputs", {}):
                return stage
        return None

    def require(self, paths, params: dict[str, str] | None = None) -> None:
        """Check that every path is current; raises StaleArtifactError otherwise."""
        params = params or {}
        seen: set[str] = set()

        def check(rel: str, expected: str | None):
            stage = self.producer_of(rel)
            if stage is None:
                raise StaleArtifactError(f"{rel} has not been produced; run the pipeline stage that writes it")
            path = self.run_dir / rel
            if not path.exists():
                raise StaleArtifactError(f"{rel} is missing; re-run the {stage!r} stage")
            recorded = self.stages[stage]["outputs"][rel]
            if file_hash(path) != recorded:
                raise StaleArtifactError(f"{rel} changed since the {stage!r} stage wrote it; re-run {stage!r}")
            if expected is not None and expected != recorded:
                raise StaleArtifactError(f"{rel} was regenerated after its consumers ran; re-run {stage!r}'s downstream stages")
            if stage in seen:
                return
            seen.add(stage)
            if stage in params and self.stages[stage].get("params") != params[stage]:
                raise StaleArtifactError(f"configuration for the {stage!r} stage changed; re-run {stage!r}")
            for dep, dep_hash in self.stages[stage].get("inputs", {}).items():
                check(dep, dep_hash)

        for p in paths:
            check(self._rel(p), None)

    def record(self, stage: str, inputs, outputs, config_hash: str, params: str | None = None) -> None:
        entry = {
            "inputs": {self._rel(p): file_hash(p) for p in inputs},
            "outputs": {self._rel(p): file_hash(p) for p in outputs},
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        if params is not None:
            entry["params"] = params
        self.stages[stage] = entry
        self.config_hash = config_hash
        self.save()

    def save(self) -> None:
        data = {"config_hash": self.config_hash, "stages": self.stages}
        tmp = self.run_dir / (MANIFEST + ".tmp")
        tmp.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        os.replace(tmp, self.run_dir / MANIFEST)


@contextmanager
def run_lock(run_dir: Path):
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = run_dir / LOCK
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise CryptovoteError(
            f"{run_dir} is locked by another run; delete {lock} if no run is active"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)
