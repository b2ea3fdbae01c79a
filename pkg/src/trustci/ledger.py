"""Append-only hash-chained ledger of evidence commitments and revocations.

Each line of the ledger file is one canonical-JSON entry. An entry's digest
covers all of its other fields, including the digest of the entry before
it, so rewriting any committed value breaks the chain at that index.
"""

from __future__ import annotations

import fcntl
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .canonical import ZERO_DIGEST, Digest, canonical_decode, canonical_encode, hash_value
from .errors import AppendRace, EncodingError, EvidenceFormatError, InvalidEvidence, UnknownCommitment
from .evidence import AttestedEvidence, bind, verify_auth
from .keys import KeyStore, expect_keys

COMMITMENT = "commitment"
REVOCATION = "revocation"

_FIELDS = ("index", "entry_kind", "committed_digest", "pipeline_id", "stage_index",
           "prev_entry_digest", "reason")


@dataclass(frozen=True)
class LedgerEntry:
    index: int
    entry_kind: str
    committed_digest: Digest
    pipeline_id: Digest
    stage_index: int
    prev_entry_digest: Digest
    reason: str
    entry_digest: Digest

    def body(self) -> dict:
        return {
            "index": self.index,
            "entry_kind": self.entry_kind,
            "committed_digest": self.committed_digest,
            "pipeline_id": self.pipeline_id,
            "stage_index": self.stage_index,
            "prev_entry_digest": self.prev_entry_digest,
            "reason": self.reason,
        }

    def to_dict(self) -> dict:
        return {**self.body(), "entry_digest": self.entry_digest}

    def recomputes(self) -> bool:
        return hash_value(self.body()) == self.entry_digest

    @classmethod
    def from_dict(cls, d: dict) -> "LedgerEntry":
        d = expect_keys(d, _FIELDS + ("entry_digest",))
        if d["entry_kind"] not in (COMMITMENT, REVOCATION):
            raise EvidenceFormatError(f"unknown entry kind {d['entry_kind']!r}")
        for name in ("index", "stage_index"):
            if not isinstance(d[name], int) or isinstance(d[name], bool):
                raise EvidenceFormatError(f"{name} must be an integer")
        if not isinstance(d["reason"], str):
            raise EvidenceFormatError("reason must be a string")
        return cls(
            d["index"], d["entry_kind"], Digest.from_hex(d["committed_digest"]),
            Digest.from_hex(d["pipeline_id"]), d["stage_index"],
            Digest.from_hex(d["prev_entry_digest"]), d["reason"], Digest.from_hex(d["entry_digest"]),
        )


def _parse_line(line: bytes) -> Optional[LedgerEntry]:
    try:
        return LedgerEntry.from_dict(canonical_decode(line, strict=False))
    except (EncodingError, EvidenceFormatError, ValueError, TypeError):
        return None


class Ledger:
    """In-memory ledger, optionally backed by an append-only file.

    Only one writer may append at a time; a writer whose view is stale
    (the file grew behind its back) gets :class:`AppendRace`.
    ``entries`` may contain ``None`` where a line on disk failed to parse.
    """

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path is not None else None
        self.entries: list[Optional[LedgerEntry]] = []
        self._size = 0
        self._lock = threading.Lock()
        self._commitments: dict[Digest, LedgerEntry] = {}
        self._revoked: dict[Digest, LedgerEntry] = {}

    @classmethod
    def load(cls, path: Path) -> "Ledger":
        ledger = cls(path)
        if ledger.path.exists():
            data = ledger.path.read_bytes()
            ledger._size = len(data)
            for line in data.split(b"\n")[:-1] if data.endswith(b"\n") else data.split(b"\n"):
                ledger._track(_parse_line(line))
        return ledger

    def _track(self, entry: Optional[LedgerEntry]) -> None:
        self.entries.append(entry)
        if entry is None:
            return
        if entry.entry_kind == COMMITMENT:
            self._commitments.setdefault(entry.committed_digest, entry)
        else:
            self._revoked.setdefault(entry.committed_digest, entry)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def head(self) -> Digest:
        if not self.entries or self.entries[-1] is None:
            return ZERO_DIGEST
        return self.entries[-1].entry_digest

    def entry(self, index: int) -> LedgerEntry:
        if not 0 <= index < len(self.entries) or self.entries[index] is None:
            raise UnknownCommitment(f"no ledger entry at index {index}")
        return self.entries[index]

    def append(self, kind: str, committed: Digest, pipeline_id: Digest, stage_index: int,
               reason: str = "") -> LedgerEntry:
        with self._lock:
            body = {
                "index": len(self.entries),
                "entry_kind": kind,
                "committed_digest": committed,
                "pipeline_id": pipeline_id,
                "stage_index": stage_index,
                "prev_entry_digest": self.head,
                "reason": reason,
            }
            entry = LedgerEntry(**body, entry_digest=hash_value(body))
            if self.path is not None:
                line = canonical_encode(entry) + b"\n"
                with open(self.path, "ab") as fh:
                    fcntl.flock(fh, fcntl.LOCK_EX)
                    try:
                        if os.fstat(fh.fileno()).st_size != self._size:
                            raise AppendRace("ledger file changed under this writer; reload first")
                        fh.write(line)
                        fh.flush()
                    finally:
                        fcntl.flock(fh, fcntl.LOCK_UN)
                self._size += len(line)
            self._track(entry)
            return entry

    def find_commitment(self, committed_digest: Digest) -> Optional[LedgerEntry]:
        return self._commitments.get(committed_digest)

    def commitments_for(self, pipeline_id: Digest) -> list[LedgerEntry]:
        return [e for e in self.entries
                if e is not None and e.entry_kind == COMMITMENT and e.pipeline_id == pipeline_id]

    def is_revoked(self, commitment: LedgerEntry) -> bool:
        return commitment.entry_digest in self._revoked

    def revocation_of(self, commitment: LedgerEntry) -> Optional[LedgerEntry]:
        return self._revoked.get(commitment.entry_digest)


def _evidence_problems(e: AttestedEvidence) -> list[str]:
    problems = []
    if bind(e.auth.raw, e.auth.prev_actioned_digest) != e.auth.bound_digest:
        problems.append("bound digest does not recompute")
    if e.origin:
        if e.stage_index != 0 or e.quote is not None:
            problems.append("only stage 0 may be an unattested origin")
    elif e.quote is None:
        problems.append("missing attestation quote")
    elif e.quote.report_data != e.auth.bound_digest:
        problems.append("quote does not bind the evidence")
    return problems


def f_commit(e: AttestedEvidence, ledger: Ledger, keystore: Optional[KeyStore] = None) -> LedgerEntry:
    """Anchor attested evidence in the ledger; the commitment holds its digest."""
    if not isinstance(e, AttestedEvidence):
        raise InvalidEvidence(f"only attested evidence can be committed, got {e!r}")
    problems = _evidence_problems(e)
    if keystore is not None and not verify_auth(e.auth, keystore):
        problems.append("authentication does not verify")
    if problems:
        raise InvalidEvidence("; ".join(problems))
    return ledger.append(COMMITMENT, e.digest, e.auth.raw.pipeline_id, e.stage_index)


def revoke(commitment: LedgerEntry, reason: str, ledger: Ledger) -> LedgerEntry:
    """Append a revocation for ``commitment``; revoking twice returns the first revocation."""
    idx = commitment.index
    stored = ledger.entries[idx] if 0 <= idx < len(ledger.entries) else None
    if stored is None or stored != commitment or stored.entry_kind != COMMITMENT:
        raise UnknownCommitment(f"no commitment matching index {idx}")
    existing = ledger.revocation_of(stored)
    if existing is not None:
        return existing
    return ledger.append(REVOCATION, stored.entry_digest, stored.pipeline_id, stored.stage_index,
                         reason)


def verify_chain(ledger: Ledger) -> tuple[bool, Optional[int]]:
    """Recompute every entry digest and back link.

    Returns ``(True, None)`` for an intact chain, else ``(False, i)`` with
    the first index that fails.
    """
    prev = ZERO_DIGEST
    for i, entry in enumerate(ledger.entries):
        if (
            entry is None
            or entry.index != i
            or entry.prev_entry_digest != prev
            or not entry.recomputes()
        ):
            return False, i
        prev = entry.entry_digest
    return True, None
