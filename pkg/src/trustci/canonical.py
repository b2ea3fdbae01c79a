"""Canonical JSON encoding and SHA-256 digests.

Every structured value that gets hashed or signed goes through
:func:`canonical_encode`: sorted keys, no whitespace, UTF-8, integers only,
binary values as lowercase hex.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from typing import Any

from .errors import EncodingError

_HEX64 = re.compile(r"[0-9a-f]{64}")


@dataclass(frozen=True)
class Digest:
    value: bytes
    algorithm: str = "sha-256"

    def __post_init__(self):
        if not isinstance(self.value, bytes) or len(self.value) != 32:
            raise ValueError("digest value must be exactly 32 bytes")
        if self.algorithm != "sha-256":
            raise ValueError(f"unsupported digest algorithm {self.algorithm!r}")

    @property
    def hex(self) -> str:
        return self.value.hex()

    @classmethod
    def from_hex(cls, text: str) -> "Digest":
        # Strict: uppercase hex would decode to the same bytes and hide tampering.
        if not isinstance(text, str) or not _HEX64.fullmatch(text):
            raise ValueError(f"not a lowercase sha-256 hex digest: {text!r}")
        return cls(bytes.fromhex(text))

    def __str__(self) -> str:
        return self.hex

    def __repr__(self) -> str:
        return f"Digest({self.hex[:16]}...)"


ZERO_DIGEST = Digest(bytes(32))


def _normalize(value: Any) -> Any:
    if value is None or isinstance(value, (bool, str)):
        return value
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        raise EncodingError("floating point values cannot be canonically encoded")
    if isinstance(value, (bytes, bytearray)):
        return bytes(value).hex()
    if isinstance(value, Digest):
        return value.hex
    if hasattr(value, "to_dict"):
        return _normalize(value.to_dict())
    if isinstance(value, dict):
        out = {}
        for k, v in value.items():
            if not isinstance(k, str):
                raise EncodingError(f"map keys must be strings, got {type(k).__name__}")
            out[k] = _normalize(v)
        return out
    if isinstance(value, (list, tuple)):
        return [_normalize(v) for v in value]
    raise EncodingError(f"unsupported value of type {type(value).__name__}")


def to_plain(value: Any) -> Any:
    """Convert a structured value into plain JSON types (no floats)."""
    return _normalize(value)


def canonical_encode(value: Any) -> bytes:
    # Python orders str keys by code point, which matches UTF-8 byte order.
    return json.dumps(
        _normalize(value), sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def _reject_float(text: str):
    raise EncodingError(f"floating point literal {text!r} in canonical input")


def _no_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise EncodingError(f"duplicate key {k!r}")
        out[k] = v
    return out


def canonical_decode(data: bytes, *, strict: bool = True) -> Any:
    """Parse canonical JSON.

    With ``strict`` the input must be byte-identical to the re-encoding of
    the parsed value, so two different byte strings never decode to the same
    value.
    """
    try:
        text = data.decode("utf-8")
        value = json.loads(
            text,
            parse_float=_reject_float,
            parse_constant=_reject_float,
            object_pairs_hook=_no_duplicates,
        )
    except EncodingError:
        raise
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise EncodingError(f"invalid canonical JSON: {exc}") from exc
    if strict and canonical_encode(value) != data:
        raise EncodingError("input is valid JSON but not in canonical form")
    return value


def sha256(data: bytes) -> Digest:
    return Digest(hashlib.sha256(data).digest())


def hash_value(value: Any) -> Digest:
    """Digest of the canonical encoding of a structured value."""
    return sha256(canonical_encode(value))
