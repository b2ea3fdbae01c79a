"""Simulated KMS: Ed25519 key records, endorsement certificates and a keystore.

The manufacturer root stands in for a hardware vendor's PKI. TEE identity
keys carry a certificate signed by a root; per-stage system keys carry a
certificate signed by the TEE identity key that holds them.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .canonical import Digest, canonical_decode, canonical_encode, hash_value, sha256
from .errors import EvidenceFormatError, MissingEndorser, UnknownSigner

ACTOR = "actor"
SYSTEM = "system"
TEE_IDENTITY = "tee-identity"
MANUFACTURER_ROOT = "manufacturer-root"
ROLES = (ACTOR, SYSTEM, TEE_IDENTITY, MANUFACTURER_ROOT)

# role -> role of the key that must endorse it
ENDORSER_ROLE = {TEE_IDENTITY: MANUFACTURER_ROOT, SYSTEM: TEE_IDENTITY}


@dataclass(frozen=True)
class SignatureEnvelope:
    signer_key_id: Digest
    payload_digest: Digest
    signature: bytes

    def to_dict(self) -> dict:
        return {
            "signer_key_id": self.signer_key_id,
            "payload_digest": self.payload_digest,
            "signature": self.signature,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SignatureEnvelope":
        d = expect_keys(d, ("signer_key_id", "payload_digest", "signature"))
        return cls(
            Digest.from_hex(d["signer_key_id"]),
            Digest.from_hex(d["payload_digest"]),
            hex_bytes(d["signature"], 64),
        )


@dataclass(frozen=True)
class KeyRecord:
    key_id: Digest
    role: str
    public_key: bytes
    private_key: Optional[bytes] = None
    cert: Optional[SignatureEnvelope] = None

    @property
    def can_sign(self) -> bool:
        return self.private_key is not None

    def public(self) -> "KeyRecord":
        return replace(self, private_key=None)

    def to_dict(self, include_private: bool = True) -> dict:
        d = {
            "key_id": self.key_id,
            "role": self.role,
            "public_key": self.public_key,
            "cert": self.cert.to_dict() if self.cert else None,
        }
        if include_private and self.private_key is not None:
            d["private_key"] = self.private_key
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "KeyRecord":
        d = expect_keys(d, ("key_id", "role", "public_key", "cert"), optional=("private_key",))
        if d["role"] not in ROLES:
            raise EvidenceFormatError(f"unknown key role {d['role']!r}")
        priv = d.get("private_key")
        return cls(
            key_id=Digest.from_hex(d["key_id"]),
            role=d["role"],
            public_key=hex_bytes(d["public_key"], 32),
            private_key=hex_bytes(priv, 32) if priv is not None else None,
            cert=SignatureEnvelope.from_dict(d["cert"]) if d["cert"] is not None else None,
        )


def expect_keys(d, required, optional=()) -> dict:
    if not isinstance(d, dict):
        raise EvidenceFormatError(f"expected an object, got {type(d).__name__}")
    keys = set(d)
    missing = set(required) - keys
    extra = keys - set(required) - set(optional)
    if missing or extra:
        raise EvidenceFormatError(
            f"bad fields: missing={sorted(missing)} unexpected={sorted(extra)}"
        )
    return d


def hex_bytes(text, length: Optional[int] = None) -> bytes:
    if not isinstance(text, str) or text != text.lower():
        raise EvidenceFormatError("binary fields must be lowercase hex strings")
    try:
        raw = bytes.fromhex(text)
    except ValueError as exc:
        raise EvidenceFormatError(str(exc)) from exc
    # bytes.fromhex tolerates whitespace; the canonical form does not
    if raw.hex() != text:
        raise EvidenceFormatError("non-canonical hex string")
    if length is not None and len(raw) != length:
        raise EvidenceFormatError(f"expected {length} bytes, got {len(raw)}")
    return raw


def cert_payload(key_id: Digest, role: str) -> Digest:
    return hash_value({"key_id": key_id, "role": role})


def keygen(role: str, endorser: Optional[KeyRecord] = None) -> KeyRecord:
    """Generate a fresh Ed25519 key record.

    ``tee-identity`` keys need a ``manufacturer-root`` endorser and ``system``
    keys produced inside a TEE may be endorsed by its ``tee-identity`` key.
    """
    if role not in ROLES:
        raise ValueError(f"unknown role {role!r}")
    required = ENDORSER_ROLE.get(role)
    if role == TEE_IDENTITY and endorser is None:
        raise MissingEndorser("tee-identity keys must be endorsed by a manufacturer-root key")
    if endorser is not None:
        if endorser.role != required or not endorser.can_sign:
            raise MissingEndorser(
                f"{role} keys need a {required} endorser holding a private key, "
                f"got {endorser.role}"
            )
    sk = Ed25519PrivateKey.generate()
    pub = sk.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
    priv = sk.private_bytes(
        serialization.Encoding.Raw, serialization.PrivateFormat.Raw, serialization.NoEncryption()
    )
    key_id = sha256(pub)
    cert = sign(cert_payload(key_id, role), endorser) if endorser is not None else None
    return KeyRecord(key_id, role, pub, priv, cert)


def sign(payload_digest: Digest, key: KeyRecord) -> SignatureEnvelope:
    if key.private_key is None:
        raise ValueError(f"key {key.key_id.hex[:12]} has no private part")
    sk = Ed25519PrivateKey.from_private_bytes(key.private_key)
    return SignatureEnvelope(key.key_id, payload_digest, sk.sign(payload_digest.value))


def _ed25519_ok(public_key: bytes, signature: bytes, message: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


def verify_signature(env: SignatureEnvelope, payload_digest: Digest, keystore: "KeyStore") -> bool:
    """True iff ``env`` is a valid signature over ``payload_digest``.

    Raises :class:`UnknownSigner` when the signer is not in the keystore.
    """
    key = keystore.get(env.signer_key_id)
    if env.payload_digest != payload_digest:
        return False
    return _ed25519_ok(key.public_key, env.signature, payload_digest.value)


def verify_endorsement(key: KeyRecord, keystore: "KeyStore", allowed_roots=None) -> bool:
    """Walk the certificate chain of ``key`` up to a manufacturer root.

    ``allowed_roots`` optionally restricts which root key ids may terminate
    the chain. Roles that need no endorsement verify trivially.
    """
    if key.role not in ENDORSER_ROLE:
        return True
    current = key
    for _ in range(len(ENDORSER_ROLE) + 1):
        if current.role == MANUFACTURER_ROOT:
            return allowed_roots is None or current.key_id in set(allowed_roots)
        needed = ENDORSER_ROLE.get(current.role)
        if needed is None or current.cert is None:
            return False
        if sha256(current.public_key) != current.key_id:
            return False
        try:
            parent = keystore.get(current.cert.signer_key_id)
            ok = verify_signature(current.cert, cert_payload(current.key_id, current.role), keystore)
        except UnknownSigner:
            return False
        if not ok or parent.role != needed:
            return False
        current = parent
    return False


class KeyStore:
    """Key directory, optionally persisted as one canonical-JSON record per line."""

    def __init__(self, records: Iterable[KeyRecord] = (), path: Optional[Path] = None):
        self._keys: dict[Digest, KeyRecord] = {}
        self._lock = threading.Lock()
        self.path = Path(path) if path is not None else None
        for rec in records:
            self._keys[rec.key_id] = rec

    def __contains__(self, key_id: Digest) -> bool:
        return key_id in self._keys

    def __iter__(self) -> Iterator[KeyRecord]:
        return iter(list(self._keys.values()))

    def __len__(self) -> int:
        return len(self._keys)

    def get(self, key_id: Digest) -> KeyRecord:
        try:
            return self._keys[key_id]
        except KeyError:
            raise UnknownSigner(f"unknown signer {key_id.hex}") from None

    def add(self, record: KeyRecord) -> KeyRecord:
        if sha256(record.public_key) != record.key_id:
            raise ValueError("key_id does not match the public key")
        with self._lock:
            if record.key_id in self._keys:
                return self._keys[record.key_id]
            self._keys[record.key_id] = record
            if self.path is not None:
                with open(self.path, "ab") as fh:
                    fh.write(canonical_encode(record.to_dict()) + b"\n")
        return record

    def by_role(self, role: str) -> list[KeyRecord]:
        return [k for k in self._keys.values() if k.role == role]

    def public(self) -> "KeyStore":
        return KeyStore(k.public() for k in self._keys.values())

    def save(self, path: Path, include_private: bool = True) -> None:
        lines = [canonical_encode(k.to_dict(include_private)) for k in self._keys.values()]
        Path(path).write_bytes(b"".join(line + b"\n" for line in lines))

    @classmethod
    def load(cls, path: Path, attach: bool = True) -> "KeyStore":
        path = Path(path)
        records = []
        if path.exists():
            for line in path.read_bytes().splitlines():
                if line.strip():
                    records.append(KeyRecord.from_dict(canonical_decode(line)))
        return cls(records, path=path if attach else None)
