"""Evidence records and the Raw -> Authenticated step of the lifecycle.

Records are immutable. Each one has ``to_dict``/``from_dict`` so it can be
written to a bundle file; ``from_dict`` only checks structure, validation of
signatures and attestations happens in :mod:`trustci.tee` and
:mod:`trustci.verifier`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Union

from .canonical import ZERO_DIGEST, Digest, canonical_encode, hash_value, sha256
from .errors import EvidenceFormatError, UnknownSigner
from .keys import (
    ACTOR,
    SYSTEM,
    KeyRecord,
    KeyStore,
    SignatureEnvelope,
    expect_keys,
    hex_bytes,
    sign,
    verify_signature,
)

log = logging.getLogger(__name__)

TRIGGER = "trigger"
BUILD_OUTPUT = "build-output"
TEST_REPORT = "test-report"
AUDIT_REPORT = "audit-report"
DEPLOY_RECORD = "deploy-record"
PAYLOAD_KINDS = (TRIGGER, BUILD_OUTPUT, TEST_REPORT, AUDIT_REPORT, DEPLOY_RECORD)

PROCEED = "PROCEED"
REJECT = "REJECT"
REVOKE = "REVOKE"
ACTIONS = (PROCEED, REJECT, REVOKE)


class Bottom:
    """The failure value returned by the lifecycle functions.

    Falsy, and all instances compare equal regardless of ``reason``; the
    reason is kept for logs and abort labels.
    """

    __slots__ = ("reason",)

    def __init__(self, reason: str = ""):
        self.reason = reason

    def __bool__(self) -> bool:
        return False

    def __eq__(self, other) -> bool:
        return isinstance(other, Bottom)

    def __hash__(self) -> int:
        return hash(Bottom)

    def __repr__(self) -> str:
        return f"⊥({self.reason})" if self.reason else "⊥"


BOTTOM = Bottom()


def is_bottom(value) -> bool:
    return isinstance(value, Bottom)


def _check_int(value, name, minimum=0) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise EvidenceFormatError(f"{name} must be an integer >= {minimum}")
    return value


def _check_str(value, name) -> str:
    if not isinstance(value, str):
        raise EvidenceFormatError(f"{name} must be a string")
    return value


def _check_metadata(md) -> dict:
    if not isinstance(md, dict):
        raise EvidenceFormatError("metadata must be an object")
    for k, v in md.items():
        if not isinstance(v, (str, int)) or isinstance(v, bool):
            raise EvidenceFormatError(f"metadata value for {k!r} must be a string or integer")
    if not isinstance(md.get("timestamp"), int) or isinstance(md.get("timestamp"), bool):
        raise EvidenceFormatError("metadata.timestamp must be integer epoch seconds")
    return dict(md)


@dataclass(frozen=True)
class RawEvidence:
    pipeline_id: Digest
    stage_index: int
    task_id: str
    payload_digest: Digest
    payload_kind: str
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        _check_int(self.stage_index, "stage_index")
        if self.payload_kind not in PAYLOAD_KINDS:
            raise EvidenceFormatError(f"unknown payload kind {self.payload_kind!r}")
        if (self.stage_index == 0) != (self.payload_kind == TRIGGER):
            raise EvidenceFormatError("stage 0 carries the trigger and only stage 0 does")
        _check_str(self.task_id, "task_id")
        object.__setattr__(self, "metadata", _check_metadata(self.metadata))

    def to_dict(self) -> dict:
        return {
            "pipeline_id": self.pipeline_id,
            "stage_index": self.stage_index,
            "task_id": self.task_id,
            "payload_digest": self.payload_digest,
            "payload_kind": self.payload_kind,
            "metadata": dict(self.metadata),
        }

    @property
    def digest(self) -> Digest:
        return hash_value(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RawEvidence":
        d = expect_keys(
            d, ("pipeline_id", "stage_index", "task_id", "payload_digest", "payload_kind", "metadata")
        )
        return cls(
            pipeline_id=Digest.from_hex(d["pipeline_id"]),
            stage_index=d["stage_index"],
            task_id=d["task_id"],
            payload_digest=Digest.from_hex(d["payload_digest"]),
            payload_kind=d["payload_kind"],
            metadata=d["metadata"],
        )


def make_raw(
    pipeline_id: Digest,
    stage_index: int,
    task_id: str,
    payload: bytes,
    payload_kind: str,
    metadata: Mapping[str, Any],
    registry=None,
) -> RawEvidence:
    """Content-address ``payload`` and wrap it as raw evidence.

    When a registry is given the payload bytes are stored there.
    """
    if "timestamp" not in metadata:
        raise EvidenceFormatError("raw evidence metadata needs a timestamp")
    raw = RawEvidence(pipeline_id, stage_index, task_id, sha256(payload), payload_kind, dict(metadata))
    if registry is not None:
        registry.store(payload, "artifact")
    return raw


def bind(raw: RawEvidence, prev_actioned_digest: Digest) -> Digest:
    """Digest of the raw record concatenated with its predecessor's actioned digest."""
    return sha256(canonical_encode(raw) + prev_actioned_digest.value)


def required_role(stage_index: int) -> str:
    return ACTOR if stage_index == 0 else SYSTEM


@dataclass(frozen=True)
class AuthenticatedEvidence:
    raw: RawEvidence
    prev_actioned_digest: Digest
    bound_digest: Digest
    signature: SignatureEnvelope

    def to_dict(self) -> dict:
        return {
            "raw": self.raw.to_dict(),
            "prev_actioned_digest": self.prev_actioned_digest,
            "bound_digest": self.bound_digest,
            "signature": self.signature.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AuthenticatedEvidence":
        d = expect_keys(d, ("raw", "prev_actioned_digest", "bound_digest", "signature"))
        return cls(
            RawEvidence.from_dict(d["raw"]),
            Digest.from_hex(d["prev_actioned_digest"]),
            Digest.from_hex(d["bound_digest"]),
            SignatureEnvelope.from_dict(d["signature"]),
        )


def f_auth(
    raw: RawEvidence, prev_actioned_digest: Digest, key: KeyRecord
) -> Union[AuthenticatedEvidence, Bottom]:
    """Bind ``raw`` to its predecessor and sign the result.

    Returns a :class:`Bottom` when the key cannot sign for this stage.
    """
    want = required_role(raw.stage_index)
    if key.role != want:
        return Bottom(f"stage {raw.stage_index} needs a {want} key, got {key.role}")
    if not key.can_sign:
        return Bottom("signing key has no private part")
    if raw.stage_index == 0 and prev_actioned_digest != ZERO_DIGEST:
        return Bottom("origin evidence cannot have a predecessor")
    bound = bind(raw, prev_actioned_digest)
    return AuthenticatedEvidence(raw, prev_actioned_digest, bound, sign(bound, key))


def auth_failures(e: AuthenticatedEvidence, keystore: KeyStore) -> list[str]:
    problems = []
    if e.raw.stage_index == 0 and e.prev_actioned_digest != ZERO_DIGEST:
        problems.append("origin evidence has a predecessor")
    if bind(e.raw, e.prev_actioned_digest) != e.bound_digest:
        problems.append("bound digest does not recompute")
    try:
        if not verify_signature(e.signature, e.bound_digest, keystore):
            problems.append("signature invalid")
        elif keystore.get(e.signature.signer_key_id).role != required_role(e.raw.stage_index):
            problems.append("signer role does not match stage")
    except UnknownSigner:
        problems.append("unknown signer")
    return problems


def verify_auth(e: AuthenticatedEvidence, keystore: KeyStore) -> bool:
    return not auth_failures(e, keystore)


@dataclass(frozen=True)
class AttestationQuote:
    tee_key_id: Digest
    measurement: Digest
    report_data: Digest
    nonce: bytes
    quote_signature: SignatureEnvelope

    def to_dict(self) -> dict:
        return {
            "tee_key_id": self.tee_key_id,
            "measurement": self.measurement,
            "report_data": self.report_data,
            "nonce": self.nonce,
            "quote_signature": self.quote_signature.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttestationQuote":
        d = expect_keys(d, ("tee_key_id", "measurement", "report_data", "nonce", "quote_signature"))
        return cls(
            Digest.from_hex(d["tee_key_id"]),
            Digest.from_hex(d["measurement"]),
            Digest.from_hex(d["report_data"]),
            hex_bytes(d["nonce"], 16),
            SignatureEnvelope.from_dict(d["quote_signature"]),
        )


def quote_body(measurement: Digest, report_data: Digest, nonce: bytes) -> Digest:
    return sha256(measurement.value + report_data.value + nonce)


@dataclass(frozen=True)
class AttestedEvidence:
    auth: AuthenticatedEvidence
    quote: Optional[AttestationQuote]
    attested_at: int
    origin: bool = False

    def to_dict(self) -> dict:
        return {
            "auth": self.auth.to_dict(),
            "quote": self.quote.to_dict() if self.quote else None,
            "attested_at": self.attested_at,
            "origin": self.origin,
        }

    @property
    def digest(self) -> Digest:
        return hash_value(self)

    @property
    def stage_index(self) -> int:
        return self.auth.raw.stage_index

    @classmethod
    def from_dict(cls, d: dict) -> "AttestedEvidence":
        d = expect_keys(d, ("auth", "quote", "attested_at", "origin"))
        if not isinstance(d["origin"], bool):
            raise EvidenceFormatError("origin must be a boolean")
        return cls(
            AuthenticatedEvidence.from_dict(d["auth"]),
            AttestationQuote.from_dict(d["quote"]) if d["quote"] is not None else None,
            _check_int(d["attested_at"], "attested_at"),
            d["origin"],
        )


def origin_wrap(e: AuthenticatedEvidence) -> AttestedEvidence:
    """Stage 0 skips attestation: the authenticated trigger becomes the baseline."""
    if e.raw.stage_index != 0:
        raise ValueError("only stage-0 evidence may bypass attestation")
    return AttestedEvidence(e, None, e.raw.metadata["timestamp"], origin=True)


@dataclass(frozen=True)
class RuleResult:
    rule_id: str
    passed: bool
    advisory: bool = False
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "passed": self.passed,
            "advisory": self.advisory,
            "detail": self.detail,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RuleResult":
        d = expect_keys(d, ("rule_id", "passed", "advisory", "detail"))
        if not isinstance(d["passed"], bool) or not isinstance(d["advisory"], bool):
            raise EvidenceFormatError("passed/advisory must be booleans")
        return cls(_check_str(d["rule_id"], "rule_id"), d["passed"], d["advisory"],
                   _check_str(d["detail"], "detail"))


@dataclass(frozen=True)
class ActionedEvidence:
    att: AttestedEvidence
    action: str
    policy_id: Digest
    rule_results: tuple[RuleResult, ...]
    actioned_digest: Digest

    def body(self) -> dict:
        return {
            "att": self.att.to_dict(),
            "action": self.action,
            "policy_id": self.policy_id,
            "rule_results": [r.to_dict() for r in self.rule_results],
        }

    def to_dict(self) -> dict:
        return {**self.body(), "actioned_digest": self.actioned_digest}

    def recomputes(self) -> bool:
        return hash_value(self.body()) == self.actioned_digest

    @property
    def stage_index(self) -> int:
        return self.att.stage_index

    @classmethod
    def create(cls, att, action, policy_id, rule_results) -> "ActionedEvidence":
        if action not in ACTIONS:
            raise ValueError(f"unknown action {action!r}")
        rule_results = tuple(rule_results)
        if action == PROCEED and any(not r.passed and not r.advisory for r in rule_results):
            raise ValueError("PROCEED with a failing non-advisory rule")
        tmp = cls(att, action, policy_id, rule_results, ZERO_DIGEST)
        return cls(att, action, policy_id, rule_results, hash_value(tmp.body()))

    @classmethod
    def from_dict(cls, d: dict) -> "ActionedEvidence":
        d = expect_keys(d, ("att", "action", "policy_id", "rule_results", "actioned_digest"))
        if d["action"] not in ACTIONS:
            raise EvidenceFormatError(f"unknown action {d['action']!r}")
        if not isinstance(d["rule_results"], list):
            raise EvidenceFormatError("rule_results must be a list")
        return cls(
            AttestedEvidence.from_dict(d["att"]),
            d["action"],
            Digest.from_hex(d["policy_id"]),
            tuple(RuleResult.from_dict(r) for r in d["rule_results"]),
            Digest.from_hex(d["actioned_digest"]),
        )
