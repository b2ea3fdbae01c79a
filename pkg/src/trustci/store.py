"""Content-addressed storage: a digest-keyed directory and the artifact registry."""

from __future__ import annotations

import os
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .canonical import Digest, canonical_decode, canonical_encode, sha256
from .errors import DigestMismatch, NotFound

REGISTRY_KINDS = ("artifact", "evidence-bundle", "policy", "env-descriptor")


class ContentStore:
    """Directory of blobs named by the hex SHA-256 of their content.

    Reads are lock-free; writes are atomic renames serialized by a lock.
    """

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def path_for(self, digest: Digest) -> Path:
        return self.root / digest.hex

    def put(self, data: bytes) -> Digest:
        digest = sha256(data)
        target = self.path_for(digest)
        if target.exists():
            return digest
        with self._lock:
            fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".tmp-")
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, target)
        return digest

    def put_value(self, value) -> Digest:
        return self.put(canonical_encode(value))

    def __contains__(self, digest: Digest) -> bool:
        return self.path_for(digest).exists()

    def get(self, digest: Digest) -> bytes:
        path = self.path_for(digest)
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            raise NotFound(digest.hex) from None
        if sha256(data) != digest:
            raise DigestMismatch(f"stored blob {digest.hex} is corrupted")
        return data

    def get_value(self, digest: Digest):
        return canonical_decode(self.get(digest))


@dataclass(frozen=True)
class RegistryRecord:
    digest: Digest
    kind: str
    bytes_ref: str
    ledger_index: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "digest": self.digest,
            "kind": self.kind,
            "bytes_ref": self.bytes_ref,
            "ledger_index": self.ledger_index,
        }


class Registry:
    """Artifact registry: blobs in a content store plus an append-only index."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.blobs = ContentStore(self.root / "blobs")
        self.index_path = self.root / "index.jsonl"
        self._lock = threading.Lock()

    def store(self, data: bytes, kind: str, ledger_index: Optional[int] = None) -> RegistryRecord:
        if kind not in REGISTRY_KINDS:
            raise ValueError(f"unknown registry kind {kind!r}")
        digest = self.blobs.put(data)
        rec = RegistryRecord(digest, kind, f"blobs/{digest.hex}", ledger_index)
        with self._lock, open(self.index_path, "ab") as fh:
            fh.write(canonical_encode(rec) + b"\n")
        return rec

    def fetch(self, digest: Digest) -> bytes:
        return self.blobs.get(digest)

    def __contains__(self, digest: Digest) -> bool:
        return digest in self.blobs

    def records(self) -> list[RegistryRecord]:
        if not self.index_path.exists():
            return []
        out = []
        for line in self.index_path.read_bytes().splitlines():
            d = canonical_decode(line)
            out.append(RegistryRecord(Digest.from_hex(d["digest"]), d["kind"], d["bytes_ref"],
                                      d["ledger_index"]))
        return out
