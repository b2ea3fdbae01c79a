"""Consumer-side verification of released artifacts.

:func:`quick_verify` checks only the final actioned evidence, its ledger
commitment and the policy outcome, and performs the same number of checks
however long the pipeline was. :func:`full_audit` re-verifies every stage
of an exported evidence bundle back to the trigger.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .canonical import ZERO_DIGEST, Digest, canonical_decode, canonical_encode, sha256
from .errors import BundleMalformed, EncodingError, EvidenceFormatError, LifecycleError, TrustCIError
from .evidence import (
    DEPLOY_RECORD,
    PROCEED,
    ActionedEvidence,
    AttestedEvidence,
    RawEvidence,
    auth_failures,
)
from .keys import KeyStore, hex_bytes
from .ledger import COMMITMENT, Ledger, LedgerEntry, verify_chain
from .policy import EvalContext, Policy, f_eval
from .tee import ReferenceEnvironment, attestation_failures, identity_failures, provisioning_failures

QUICK = "quick"
FULL_AUDIT = "full-audit"


@dataclass
class VerificationReport:
    mode: str
    passed: bool = True
    checks_performed: int = 0
    findings: list[tuple[str, str]] = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def check(self, ok: bool, location: str, kind: str) -> bool:
        self.checks_performed += 1
        if not ok:
            self.passed = False
            self.findings.append((location, kind))
        return ok

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "verdict": self.verdict,
            "checks_performed": self.checks_performed,
            "findings": [{"location": loc, "failure": kind} for loc, kind in self.findings],
            "elapsed_us": int(self.elapsed * 1e6),
        }

    def to_text(self) -> str:
        lines = [f"{self.mode}: {self.verdict.upper()} "
                 f"({self.checks_performed} checks, {self.elapsed * 1000:.1f} ms)"]
        lines += [f"  {loc}: {kind}" for loc, kind in self.findings]
        return "\n".join(lines)


@dataclass
class Bundle:
    stages: list[tuple[ActionedEvidence, bytes]]
    deploy: tuple[RawEvidence, bytes]

    @property
    def final(self) -> ActionedEvidence:
        return self.stages[-1][0]


def load_bundle(data: bytes) -> Bundle:
    """Parse an evidence bundle, rejecting anything not in canonical form."""
    if not data.endswith(b"\n"):
        raise BundleMalformed("bundle must end with a newline")
    stages = []
    deploy = None
    try:
        for n, line in enumerate(data[:-1].split(b"\n")):
            doc = canonical_decode(line)
            if not isinstance(doc, dict) or set(doc) - {"record", "actioned", "raw", "payload"}:
                raise BundleMalformed(f"line {n}: unexpected record shape")
            if deploy is not None:
                raise BundleMalformed(f"line {n}: records after the deploy record")
            payload = hex_bytes(doc.get("payload"))
            if doc.get("record") == "stage" and set(doc) == {"record", "actioned", "payload"}:
                stages.append((ActionedEvidence.from_dict(doc["actioned"]), payload))
            elif doc.get("record") == "deploy" and set(doc) == {"record", "raw", "payload"}:
                deploy = (RawEvidence.from_dict(doc["raw"]), payload)
            else:
                raise BundleMalformed(f"line {n}: unknown record")
    except (EncodingError, EvidenceFormatError, ValueError, TypeError, KeyError) as exc:
        raise BundleMalformed(str(exc)) from exc
    if not stages or deploy is None:
        raise BundleMalformed("bundle needs stage records followed by a deploy record")
    return Bundle(stages, deploy)


def load_attested(doc: dict, keystore: KeyStore,
                  envs: Mapping[Digest, ReferenceEnvironment]) -> AttestedEvidence:
    """Deserialize attested evidence, re-running authentication and attestation.

    Raises :class:`LifecycleError` unless the record could have come out of
    a successful attestation (or is a genuine stage-0 origin record).
    """
    try:
        att = AttestedEvidence.from_dict(doc)
    except (EvidenceFormatError, ValueError) as exc:
        raise LifecycleError(f"malformed attested evidence: {exc}") from exc
    problems = _attested_problems(att, keystore, envs)
    if problems:
        raise LifecycleError("; ".join(problems))
    return att


def load_actioned(doc: dict, keystore: KeyStore, envs: Mapping[Digest, ReferenceEnvironment],
                  policy: Optional[Policy] = None,
                  ctx: Optional[EvalContext] = None) -> ActionedEvidence:
    """Deserialize actioned evidence; its attested part must validate first."""
    try:
        act = ActionedEvidence.from_dict(doc)
    except (EvidenceFormatError, ValueError) as exc:
        raise LifecycleError(f"malformed actioned evidence: {exc}") from exc
    problems = _attested_problems(act.att, keystore, envs)
    if not act.recomputes():
        problems.append("actioned digest does not recompute")
    if act.action == PROCEED and any(not r.passed and not r.advisory for r in act.rule_results):
        problems.append("PROCEED despite a failing rule")
    if policy is not None:
        ctx = ctx or EvalContext(keystore, envs)
        _, expected = f_eval(act.att, policy, ctx)
        if expected.actioned_digest != act.actioned_digest:
            problems.append("policy decision does not reproduce")
    if problems:
        raise LifecycleError("; ".join(problems))
    return act


def _env_of(att: AttestedEvidence, envs) -> Optional[ReferenceEnvironment]:
    ref = att.auth.raw.metadata.get("env_id")
    try:
        return envs.get(Digest.from_hex(ref)) if isinstance(ref, str) else None
    except ValueError:
        return None


def _attested_problems(att: AttestedEvidence, keystore, envs) -> list[str]:
    if att.origin:
        problems = auth_failures(att.auth, keystore)
        if att.stage_index != 0 or att.quote is not None:
            problems.append("origin flag on a non-origin record")
        return problems
    if att.stage_index == 0:
        return ["stage-0 evidence must be the unattested origin"]
    return attestation_failures(att.auth, att.quote, _env_of(att, envs), keystore)


def quick_verify(
    artifact_digest: Digest,
    final_act: ActionedEvidence,
    final_commitment: LedgerEntry,
    ledger_head: Digest,
    policy: Policy,
    keystore: KeyStore,
    ledger: Ledger,
) -> VerificationReport:
    """Constant-work verification of a released artifact.

    ``ledger_head`` is the head digest the consumer trusts (pinned out of
    band); ``ledger`` supplies the stored segment from the commitment to
    that head. Exactly seven checks run regardless of outcome.
    """
    t0 = time.perf_counter()
    r = VerificationReport(QUICK)
    loc = f"stage {final_act.stage_index}"
    att = final_act.att

    r.check(final_act.recomputes(), loc, "actioned digest mismatch")
    r.check(
        final_commitment.entry_kind == COMMITMENT and att.digest == final_commitment.committed_digest,
        "ledger", "evidence not the committed value",
    )
    r.check(_segment_ok(final_commitment, ledger_head, ledger), "ledger", "commitment not covered by head")

    problems = auth_failures(att.auth, keystore)
    if att.quote is None:
        problems.append("missing quote")
    else:
        problems += identity_failures(att.quote, keystore)
        problems += provisioning_failures(att.auth, att.quote, keystore)
        if att.quote.report_data != att.auth.bound_digest:
            problems.append("quote does not bind the evidence")
    r.check(not problems, loc, "signature/attestation invalid")

    r.check(final_act.action == PROCEED and final_act.policy_id == policy.policy_id,
            loc, "policy outcome not PROCEED under expected policy")
    r.check(att.auth.raw.metadata.get("artifact_digest") == artifact_digest.hex,
            loc, "artifact not referenced by evidence")
    r.check(not ledger.is_revoked(final_commitment), "ledger", "revoked")
    r.elapsed = time.perf_counter() - t0
    return r


def _segment_ok(commitment: LedgerEntry, head: Digest, ledger: Ledger) -> bool:
    idx = commitment.index
    if not 0 <= idx < len(ledger) or ledger.entries[idx] != commitment or not commitment.recomputes():
        return False
    prev = commitment.entry_digest
    for entry in ledger.entries[idx + 1:]:
        if entry is None or entry.prev_entry_digest != prev or not entry.recomputes():
            return False
        prev = entry.entry_digest
    return prev == head


def full_audit(
    bundle: Bundle,
    ledger: Ledger,
    policy: Policy,
    keystore: KeyStore,
    envs: Mapping[Digest, ReferenceEnvironment],
) -> VerificationReport:
    """Re-verify every stage of ``bundle`` and its anchoring in ``ledger``.

    Each stage costs exactly ten checks, plus three for the ledger chain and
    the deploy record.
    """
    t0 = time.perf_counter()
    r = VerificationReport(FULL_AUDIT)
    payloads = {sha256(p): p for _, p in bundle.stages}
    ctx = EvalContext(keystore, envs, ledger, payloads.get)

    chain_ok, bad = verify_chain(ledger)
    r.check(chain_ok, "ledger" if chain_ok else f"ledger entry {bad}", "hash chain broken")

    pipeline_id = bundle.stages[0][0].att.auth.raw.pipeline_id
    prev_actioned = ZERO_DIGEST
    prev_index = -1
    for k, (act, payload) in enumerate(bundle.stages):
        loc = f"stage {k}"
        att = act.att
        raw = att.auth.raw
        r.check(raw.stage_index == k and raw.pipeline_id == pipeline_id, loc, "out of order")
        r.check(sha256(payload) == raw.payload_digest, loc, "payload digest mismatch")
        r.check(not auth_failures(att.auth, keystore), loc, "authentication failed")
        r.check(att.auth.prev_actioned_digest == prev_actioned, loc, "DAG binding broken")
        r.check(not _attested_problems(att, keystore, envs), loc, "attestation failed")
        r.check(act.recomputes(), loc, "actioned digest mismatch")
        try:
            _, expected = f_eval(att, policy, ctx)
            same = expected.actioned_digest == act.actioned_digest
        except TrustCIError:
            same = False
        r.check(same and act.policy_id == policy.policy_id, loc, "policy decision does not reproduce")
        r.check(act.action == PROCEED, loc, f"action {act.action}")
        entry = ledger.find_commitment(att.digest)
        included = (
            entry is not None and entry.index > prev_index
            and entry.stage_index == k and entry.pipeline_id == pipeline_id
        )
        r.check(included, loc, "no ledger commitment")
        r.check(entry is not None and not ledger.is_revoked(entry), loc, "commitment revoked")
        prev_actioned = act.actioned_digest
        if entry is not None:
            prev_index = entry.index

    deploy, payload = bundle.deploy
    final = bundle.final
    final_entry = ledger.find_commitment(final.att.digest)
    try:
        doc = canonical_decode(payload)
        refs_ok = (
            sha256(payload) == deploy.payload_digest
            and deploy.payload_kind == DEPLOY_RECORD
            and deploy.stage_index == len(bundle.stages)
            and deploy.pipeline_id == pipeline_id
            and final_entry is not None
            and doc == {
                "final_commitment": final_entry.entry_digest.hex,
                "final_commitment_index": final_entry.index,
                "actioned_digest": final.actioned_digest.hex,
                "artifact_digest": final.att.auth.raw.metadata.get("artifact_digest", ""),
            }
        )
    except EncodingError:
        refs_ok = False
    r.check(refs_ok, "deploy", "deploy record does not reference the final evidence")
    deploy_entry = ledger.find_commitment(deploy.digest)
    r.check(
        deploy_entry is not None and final_entry is not None and deploy_entry.index > final_entry.index
        and deploy_entry.stage_index == deploy.stage_index,
        "deploy", "deploy record not committed",
    )
    r.elapsed = time.perf_counter() - t0
    return r


def report_json(report: VerificationReport) -> bytes:
    return canonical_encode(report.to_dict())
