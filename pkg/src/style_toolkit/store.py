"""Filesystem artifact store with a JSON index.

Artifacts (channel stats, mapper checkpoints, optimization traces, session
images, job records) live under ``<root>/<kind>/<fingerprint>.bin`` with an
append-only index at ``<root>/index.json``. Writes go through a
temp-then-rename discipline so an interrupted process never leaves the index
pointing at a partial artifact.

Content-addressed artifacts are immutable: re-putting identical bytes is
idempotent, re-putting different bytes under the same key is an integrity
error. Job records are operational state, not content-addressed artifacts,
and go through :meth:`ArtifactStore.put_mutable` instead.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import ArtifactNotFoundError, StoreIntegrityError

KINDS = ("stats", "mapper", "trace", "image", "job")


@dataclass(frozen=True)
class ArtifactKey:
    kind: str
    fingerprint: str
    label: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown artifact kind {self.kind!r}; expected one of {KINDS}")
        if not self.fingerprint:
            raise ValueError("fingerprint must be non-empty")
        if "/" in self.fingerprint or os.sep in self.fingerprint:
            raise ValueError("fingerprint must not contain path separators")


@dataclass(frozen=True)
class Receipt:
    key: ArtifactKey
    path: str
    size: int
    created_at: float
    already_existed: bool


@dataclass
class _Record:
    kind: str
    fingerprint: str
    label: str
    path: str
    created_at: float
    size: int


class ArtifactStore:
    """Multiple readers, single writer per key; index writes serialized."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._records: dict[tuple[str, str], _Record] = {}
        self._load_index()

    # -- index ---------------------------------------------------------------

    @property
    def _index_path(self) -> Path:
        return self.root / "index.json"

    def _load_index(self) -> None:
        if not self._index_path.exists():
            return
        raw = json.loads(self._index_path.read_text(encoding="utf-8"))
        for entry in raw.get("records", []):
            record = _Record(**entry)
            # Replay never resurrects a record whose artifact is missing
            # (e.g. a crash between artifact unlink and index rewrite).
            if (self.root / record.path).exists():
                self._records[(record.kind, record.fingerprint)] = record

    def _write_index(self) -> None:
        payload = json.dumps(
            {"records": [asdict(r) for r in self._records.values()]}, indent=2
        )
        tmp = self._index_path.with_suffix(".json.tmp")
        tmp.write_text(payload, encoding="utf-8")
        os.replace(tmp, self._index_path)

    # -- operations ------------------------------------------------------------

    def _artifact_path(self, key: ArtifactKey) -> Path:
        return self.root / key.kind / f"{key.fingerprint}.bin"

    def _write_artifact(self, path: Path, data: bytes) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".bin.tmp")
        with tmp.open("wb") as fp:
            fp.write(data)
            fp.flush()
            os.fsync(fp.fileno())
        os.replace(tmp, path)

    def put(self, key: ArtifactKey, data: bytes) -> Receipt:
        """Store immutable content; idempotent for identical bytes."""
        with self._lock:
            existing = self._records.get((key.kind, key.fingerprint))
            path = self._artifact_path(key)
            if existing is not None:
                if path.read_bytes() != data:
                    raise StoreIntegrityError(
                        f"artifact {key.kind}/{key.fingerprint} already exists "
                        "with different content"
                    )
                return Receipt(
                    key=key,
                    path=str(path),
                    size=existing.size,
                    created_at=existing.created_at,
                    already_existed=True,
                )
            self._write_artifact(path, data)
            record = _Record(
                kind=key.kind,
                fingerprint=key.fingerprint,
                label=key.label,
                path=str(path.relative_to(self.root)),
                created_at=time.time(),
                size=len(data),
            )
            self._records[(key.kind, key.fingerprint)] = record
            self._write_index()
            return Receipt(
                key=key,
                path=str(path),
                size=record.size,
                created_at=record.created_at,
                already_existed=False,
            )

    def put_mutable(self, key: ArtifactKey, data: bytes) -> Receipt:
        """Overwriting put for operational records (job state); still atomic."""
        with self._lock:
            path = self._artifact_path(key)
            self._write_artifact(path, data)
            record = _Record(
                kind=key.kind,
                fingerprint=key.fingerprint,
                label=key.label,
                path=str(path.relative_to(self.root)),
                created_at=time.time(),
                size=len(data),
            )
            self._records[(key.kind, key.fingerprint)] = record
            self._write_index()
            return Receipt(
                key=key,
                path=str(path),
                size=record.size,
                created_at=record.created_at,
                already_existed=False,
            )

    def get(self, key: ArtifactKey) -> bytes:
        with self._lock:
            record = self._records.get((key.kind, key.fingerprint))
            if record is None:
                raise ArtifactNotFoundError(f"no artifact {key.kind}/{key.fingerprint}")
            return (self.root / record.path).read_bytes()

    def exists(self, kind: str, fingerprint: str) -> bool:
        return (kind, fingerprint) in self._records

    def list(self, kind: str) -> list[ArtifactKey]:
        """Keys of one kind, oldest first."""
        if kind not in KINDS:
            raise ValueError(f"unknown artifact kind {kind!r}")
        with self._lock:
            records = sorted(
                (r for r in self._records.values() if r.kind == kind),
                key=lambda r: r.created_at,
            )
            return [ArtifactKey(r.kind, r.fingerprint, r.label) for r in records]

    def record_info(self, key: ArtifactKey) -> dict:
        with self._lock:
            record = self._records.get((key.kind, key.fingerprint))
            if record is None:
                raise ArtifactNotFoundError(f"no artifact {key.kind}/{key.fingerprint}")
            return asdict(record)
