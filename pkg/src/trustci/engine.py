"""Pipeline engine: runs tasks stage by stage and carries their evidence through the lifecycle."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional

from .canonical import ZERO_DIGEST, Digest, canonical_encode
from .dbs import PipelineSpec, run_task
from .errors import TrustCIError
from .evidence import (
    DEPLOY_RECORD,
    PROCEED,
    REVOKE,
    TRIGGER,
    ActionedEvidence,
    AttestedEvidence,
    AuthenticatedEvidence,
    RawEvidence,
    is_bottom,
    make_raw,
    origin_wrap,
    f_auth,
)
from .keys import KeyRecord, KeyStore
from .ledger import COMMITMENT, Ledger, LedgerEntry, f_commit, revoke
from .policy import EvalContext, Policy, f_eval
from .store import ContentStore, Registry
from .tee import ReferenceEnvironment, f_attest, produce_quote, tee_launch

log = logging.getLogger(__name__)

RUNNING = "running"
COMPLETED = "completed"
ABORTED = "aborted"


@dataclass
class StageRecord:
    stage_index: int
    task_id: str
    payload: bytes
    raw: RawEvidence
    auth: AuthenticatedEvidence
    att: AttestedEvidence
    act: Optional[ActionedEvidence] = None
    commitment: Optional[LedgerEntry] = None


@dataclass
class PipelineRun:
    spec: PipelineSpec
    status: str = RUNNING
    aborted_at: Optional[int] = None
    reason: str = ""
    failure: str = ""
    records: list[StageRecord] = field(default_factory=list)
    commitments: list[LedgerEntry] = field(default_factory=list)
    final_actioned: Optional[ActionedEvidence] = None
    rejected: Optional[ActionedEvidence] = None
    revocation: Optional[LedgerEntry] = None
    deploy_record: Optional[RawEvidence] = None
    deploy_payload: Optional[bytes] = None
    deploy_commitment: Optional[LedgerEntry] = None
    policy: Optional[Policy] = None
    envs: Mapping[Digest, ReferenceEnvironment] = field(default_factory=dict)

    @property
    def pipeline_id(self) -> Digest:
        return self.spec.pipeline_id

    @property
    def completed(self) -> bool:
        return self.status == COMPLETED

    @property
    def evidence_chain(self) -> list[StageRecord]:
        return self.records

    @property
    def artifact_digest(self) -> Optional[Digest]:
        if self.final_actioned is None:
            return None
        ref = self.final_actioned.att.auth.raw.metadata.get("artifact_digest")
        return Digest.from_hex(ref) if ref else None

    def abort(self, stage: int, failure: str, reason: str) -> "PipelineRun":
        self.status = ABORTED
        self.aborted_at = stage
        self.failure = failure
        self.reason = reason
        log.info("pipeline %s aborted at stage %d: %s", self.pipeline_id.hex[:12], stage, reason)
        return self


@dataclass
class ProducerKeys:
    actor: KeyRecord
    root: KeyRecord


def f_feedback(
    commitment: LedgerEntry,
    act: ActionedEvidence,
    registry: Optional[Registry],
    ledger: Ledger,
    timestamp: Optional[int] = None,
) -> tuple[RawEvidence, bytes]:
    """Emit the deploy record for a released run and commit it to the ledger.

    Returns the record and its payload bytes.
    """
    if act.action != PROCEED:
        raise ValueError("deploy records are only emitted for PROCEED decisions")
    raw_meta = act.att.auth.raw.metadata
    payload = canonical_encode({
        "final_commitment": commitment.entry_digest,
        "final_commitment_index": commitment.index,
        "actioned_digest": act.actioned_digest,
        "artifact_digest": raw_meta.get("artifact_digest", ""),
    })
    ts = int(time.time()) if timestamp is None else timestamp
    raw = make_raw(
        commitment.pipeline_id,
        act.stage_index + 1,
        "deploy",
        payload,
        DEPLOY_RECORD,
        {"timestamp": ts, "actor_id": "pipeline-engine"},
    )
    entry = ledger.append(COMMITMENT, raw.digest, raw.pipeline_id, raw.stage_index)
    if registry is not None:
        registry.store(payload, "artifact", ledger_index=entry.index)
    return raw, payload


def run_pipeline(
    trigger_payload: bytes,
    spec: PipelineSpec,
    keys: ProducerKeys,
    envs: Mapping[Digest, ReferenceEnvironment],
    policy: Policy,
    ledger: Ledger,
    registry: Optional[Registry],
    keystore: KeyStore,
    store: ContentStore,
    tamper_stages: Iterable[int] = (),
    clock: Optional[Callable[[], int]] = None,
) -> PipelineRun:
    """Execute ``spec`` under the evidence protocol.

    Failures never raise; they leave the run in the ``aborted`` state with
    the stage index and a reason. Evidence is written to the registry only
    once it has been committed to the ledger.
    """
    clock = clock or (lambda: int(time.time()))
    tamper_stages = set(tamper_stages)
    run = PipelineRun(spec, policy=policy, envs=dict(envs))
    pid = spec.pipeline_id
    payloads: dict[Digest, bytes] = {}
    ctx = EvalContext(keystore, envs, ledger, payloads.get)

    def keep(record: StageRecord, commitment: LedgerEntry) -> None:
        record.commitment = commitment
        run.records.append(record)
        run.commitments.append(commitment)
        payloads[record.raw.payload_digest] = record.payload
        if registry is not None:
            registry.store(record.payload, "artifact", ledger_index=commitment.index)

    def policy_gate(stage: int, att: AttestedEvidence, label: str) -> Optional[ActionedEvidence]:
        decision, act = f_eval(att, policy, ctx)
        run.records[att.stage_index].act = act
        if decision.action == PROCEED:
            return act
        run.rejected = act
        if decision.action == REVOKE:
            run.revocation = revoke(run.commitments[-1], f"policy: {label}", ledger)
        run.abort(stage, "policy", f"ABORT: {label} Policy")
        return None

    # Init: authenticate the trigger with the actor key; the origin is not attested.
    raw0 = make_raw(pid, 0, TRIGGER, trigger_payload, TRIGGER,
                    {"timestamp": clock(), "actor_id": keys.actor.key_id.hex})
    auth0 = f_auth(raw0, ZERO_DIGEST, keys.actor)
    if is_bottom(auth0):
        return run.abort(0, "authentication", f"⊥: {auth0.reason}")
    att0 = origin_wrap(auth0)
    keep(StageRecord(0, TRIGGER, trigger_payload, raw0, auth0, att0),
         f_commit(att0, ledger, keystore))

    prev_att = att0
    artifact: Optional[str] = None
    for i, task in enumerate(spec.tasks, start=1):
        env = envs.get(spec.env_refs[i - 1])
        if env is None:
            return run.abort(i, "attestation", f"⊥: no reference environment for stage {i}")
        try:
            tee = tee_launch(env, keys.root, task, keystore, tamper=i in tamper_stages)
        except TrustCIError as exc:
            return run.abort(i, "attestation", f"⊥: TEE launch failed: {exc}")

        prev_act = policy_gate(i, prev_att, f"Stage {i}")
        if prev_act is None:
            return run

        try:
            output = run_task(tee.task, prev_act, store)
        except TrustCIError as exc:
            return run.abort(i, "execution", f"⊥: stage {i} execution: {exc}")
        artifact = output.report.get("artifact_digest", artifact)
        metadata = {
            "timestamp": clock(),
            "actor_id": tee.system_key.key_id.hex,
            "tee_id": tee.identity_key.key_id.hex,
            "env_id": env.env_id.hex,
        }
        if artifact:
            metadata["artifact_digest"] = artifact
        payload = output.payload
        raw = make_raw(pid, i, task.task_id, payload, output.output_kind, metadata)

        auth = f_auth(raw, prev_act.actioned_digest, tee.system_key)
        if is_bottom(auth):
            return run.abort(i, "authentication", f"⊥: stage {i} authentication: {auth.reason}")

        quote = produce_quote(tee, auth.bound_digest)
        att = f_attest(auth, quote, env, keystore, attested_at=clock())
        if is_bottom(att):
            return run.abort(i, "attestation", f"⊥: stage {i} attestation: {att.reason}")

        keep(StageRecord(i, task.task_id, payload, raw, auth, att), f_commit(att, ledger, keystore))
        prev_att = att

    final = policy_gate(len(spec.tasks) + 1, prev_att, "Final")
    if final is None:
        return run
    run.final_actioned = final
    run.deploy_record, run.deploy_payload = f_feedback(
        run.commitments[-1], final, registry, ledger, timestamp=clock()
    )
    run.deploy_commitment = ledger.find_commitment(run.deploy_record.digest)
    run.status = COMPLETED
    return run


def export_bundle(run: PipelineRun) -> bytes:
    """Serialize a completed run as canonical-JSON lines, one per stage plus the deploy record."""
    if not run.completed:
        raise ValueError("only completed runs can be exported")
    lines = [
        canonical_encode({"record": "stage", "actioned": rec.act, "payload": rec.payload})
        for rec in run.records
    ]
    lines.append(canonical_encode(
        {"record": "deploy", "raw": run.deploy_record, "payload": run.deploy_payload}
    ))
    return b"".join(line + b"\n" for line in lines)


def run_manifest(run: PipelineRun, ledger: Ledger) -> dict:
    """Summary of a run: status, per-stage digests and ledger positions."""
    stages = []
    for rec in run.records:
        stages.append({
            "stage_index": rec.stage_index,
            "task_id": rec.task_id,
            "payload_kind": rec.raw.payload_kind,
            "payload_digest": rec.raw.payload_digest.hex,
            "bound_digest": rec.auth.bound_digest.hex,
            "attested_digest": rec.att.digest.hex,
            "actioned_digest": rec.act.actioned_digest.hex if rec.act else None,
            "action": rec.act.action if rec.act else None,
            "ledger_index": rec.commitment.index if rec.commitment else None,
        })
    return {
        "pipeline_id": run.pipeline_id.hex,
        "policy_id": run.spec.policy_id.hex,
        "status": run.status,
        "aborted_at": run.aborted_at,
        "failure": run.failure,
        "reason": run.reason,
        "stages": stages,
        "artifact_digest": run.artifact_digest.hex if run.artifact_digest else None,
        "final_commitment_index": run.commitments[-1].index if run.completed else None,
        "deploy_ledger_index": run.deploy_commitment.index if run.deploy_commitment else None,
        "revocation_index": run.revocation.index if run.revocation else None,
        "ledger_head": ledger.head.hex,
    }
