"""Policies over attested evidence and the evaluation that turns them into actions.

A policy file is JSON of the form::

    {"policy_id": "<optional hex, checked on load>",
     "rules": [
       {"rule_id": "no-high-vulns",
        "applies_to": {"payload_kinds": ["audit-report"]},
        "predicate": "max-vuln-severity",
        "params": {"level": "MEDIUM"},
        "on_fail": "REJECT",
        "advisory": false}]}

Predicate parameters:

==========================  ==========================================
signer-in-allowlist         ``keys``: list of hex key ids
attestation-valid           (none)
measurement-in-allowlist    ``digests``: list of hex measurements
tests-all-pass              (none)
max-vuln-severity           ``level``: NONE/LOW/MEDIUM/HIGH/CRITICAL
dependency-allowlist        ``manifest_digests``: list of hex digests
ledger-not-revoked          (none)
==========================  ==========================================

``applies_to`` may hold ``stages`` (list of ints) and/or ``payload_kinds``;
a missing or empty filter matches every stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional

from .canonical import Digest, canonical_decode, canonical_encode, hash_value
from .errors import EncodingError, PolicyIdMismatch, PolicyParseError
from .evidence import (
    ACTIONS,
    PAYLOAD_KINDS,
    PROCEED,
    REJECT,
    REVOKE,
    ActionedEvidence,
    AttestedEvidence,
    RuleResult,
    auth_failures,
)
from .dbs import severity_rank
from .keys import KeyStore
from .tee import attestation_failures

PREDICATES = (
    "signer-in-allowlist",
    "attestation-valid",
    "measurement-in-allowlist",
    "tests-all-pass",
    "max-vuln-severity",
    "dependency-allowlist",
    "ledger-not-revoked",
)


@dataclass(frozen=True)
class Rule:
    rule_id: str
    predicate: str
    params: Mapping = field(default_factory=dict)
    on_fail: str = REJECT
    advisory: bool = False
    stages: Optional[tuple[int, ...]] = None
    payload_kinds: Optional[tuple[str, ...]] = None

    def applies(self, att: AttestedEvidence) -> bool:
        raw = att.auth.raw
        if self.stages and raw.stage_index not in self.stages:
            return False
        if self.payload_kinds and raw.payload_kind not in self.payload_kinds:
            return False
        return True

    def to_dict(self) -> dict:
        applies = {}
        if self.stages:
            applies["stages"] = list(self.stages)
        if self.payload_kinds:
            applies["payload_kinds"] = list(self.payload_kinds)
        return {
            "rule_id": self.rule_id,
            "applies_to": applies,
            "predicate": self.predicate,
            "params": dict(self.params),
            "on_fail": self.on_fail,
            "advisory": self.advisory,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Rule":
        if not isinstance(d, dict):
            raise PolicyParseError("each rule must be an object")
        unknown = set(d) - {"rule_id", "applies_to", "predicate", "params", "on_fail", "advisory"}
        if unknown:
            raise PolicyParseError(f"unknown rule fields {sorted(unknown)}")
        try:
            rule_id = d["rule_id"]
            predicate = d["predicate"]
        except KeyError as exc:
            raise PolicyParseError(f"rule is missing {exc.args[0]!r}") from None
        if predicate not in PREDICATES:
            raise PolicyParseError(f"unknown predicate {predicate!r}")
        on_fail = d.get("on_fail", REJECT)
        if on_fail not in (REJECT, REVOKE):
            raise PolicyParseError(f"on_fail must be REJECT or REVOKE, got {on_fail!r}")
        applies = d.get("applies_to") or {}
        stages = applies.get("stages")
        kinds = applies.get("payload_kinds")
        if kinds and any(k not in PAYLOAD_KINDS for k in kinds):
            raise PolicyParseError(f"unknown payload kind in {kinds}")
        params = d.get("params") or {}
        if predicate == "max-vuln-severity":
            try:
                severity_rank(params["level"])
            except (KeyError, ValueError, AttributeError):
                raise PolicyParseError("max-vuln-severity needs a valid 'level'") from None
        return cls(
            rule_id=rule_id,
            predicate=predicate,
            params=params,
            on_fail=on_fail,
            advisory=bool(d.get("advisory", False)),
            stages=tuple(stages) if stages else None,
            payload_kinds=tuple(kinds) if kinds else None,
        )


@dataclass(frozen=True)
class Policy:
    rules: tuple[Rule, ...] = ()

    @property
    def policy_id(self) -> Digest:
        return hash_value([r.to_dict() for r in self.rules])

    def to_dict(self) -> dict:
        return {"policy_id": self.policy_id, "rules": [r.to_dict() for r in self.rules]}

    def save(self, path: Path) -> None:
        Path(path).write_bytes(canonical_encode(self) + b"\n")


@dataclass(frozen=True)
class PolicyDecision:
    action: str
    rule_results: tuple[RuleResult, ...]


@dataclass
class EvalContext:
    """What policy predicates may look at besides the evidence itself."""

    keystore: KeyStore
    envs: Mapping[Digest, object] = field(default_factory=dict)
    ledger: object = None
    payloads: Optional[Callable[[Digest], Optional[bytes]]] = None

    def payload(self, digest: Digest) -> Optional[bytes]:
        if self.payloads is None:
            return None
        return self.payloads(digest)

    def env_for(self, att: AttestedEvidence):
        ref = att.auth.raw.metadata.get("env_id")
        if not isinstance(ref, str):
            return None
        try:
            return self.envs.get(Digest.from_hex(ref))
        except ValueError:
            return None


def load_policy(path) -> Policy:
    try:
        doc = canonical_decode(Path(path).read_bytes().strip(), strict=False)
    except EncodingError as exc:
        raise PolicyParseError(str(exc)) from exc
    return policy_from_dict(doc)


def policy_from_dict(doc) -> Policy:
    if not isinstance(doc, dict) or not isinstance(doc.get("rules"), list):
        raise PolicyParseError("policy must be an object with a 'rules' list")
    if set(doc) - {"policy_id", "rules"}:
        raise PolicyParseError(f"unknown policy fields {sorted(set(doc) - {'policy_id', 'rules'})}")
    policy = Policy(tuple(Rule.from_dict(r) for r in doc["rules"]))
    declared = doc.get("policy_id")
    if declared is not None and declared != policy.policy_id.hex:
        raise PolicyIdMismatch(f"declared policy_id {declared} != computed {policy.policy_id.hex}")
    return policy


def _report(att: AttestedEvidence, ctx: EvalContext):
    data = ctx.payload(att.auth.raw.payload_digest)
    if data is None:
        return None
    try:
        return canonical_decode(data)["report"]
    except (EncodingError, KeyError, TypeError):
        return None


def _check(rule: Rule, att: AttestedEvidence, ctx: EvalContext) -> tuple[bool, str]:
    p = rule.predicate
    auth = att.auth
    quote = att.quote
    if p == "signer-in-allowlist":
        signer = auth.signature.signer_key_id.hex
        return signer in set(rule.params.get("keys", ())), f"signer {signer[:16]}"
    if p == "attestation-valid":
        if att.origin:
            problems = [] if auth.raw.stage_index == 0 and quote is None else ["origin flag misused"]
            problems += auth_failures(auth, ctx.keystore)
        else:
            problems = attestation_failures(auth, quote, ctx.env_for(att), ctx.keystore)
        return not problems, "; ".join(problems) or "attested"
    if p == "measurement-in-allowlist":
        if quote is None:
            return False, "no quote"
        m = quote.measurement.hex
        return m in set(rule.params.get("digests", ())), f"measurement {m[:16]}"
    if p == "ledger-not-revoked":
        if ctx.ledger is None:
            return False, "no ledger available"
        entry = ctx.ledger.find_commitment(att.digest)
        if entry is None:
            return False, "evidence not committed"
        if ctx.ledger.is_revoked(entry):
            return False, f"commitment {entry.index} revoked"
        return True, f"commitment {entry.index} live"

    report = _report(att, ctx)
    if report is None:
        return False, "payload unavailable"
    if p == "tests-all-pass":
        failed = report.get("tests_failed")
        if not isinstance(failed, int):
            return False, "not a test report"
        return failed == 0, f"{failed}/{report.get('tests_total')} failed"
    if p == "max-vuln-severity":
        worst = report.get("max_severity")
        if worst not in ("NONE", "LOW", "MEDIUM", "HIGH", "CRITICAL"):
            return False, "not an audit report"
        limit = rule.params["level"].upper()
        n = len(report.get("findings", []))
        return severity_rank(worst) <= severity_rank(limit), f"{n} findings, max {worst} (limit {limit})"
    if p == "dependency-allowlist":
        m = report.get("manifest_digest")
        return m in set(rule.params.get("manifest_digests", ())), f"manifest {str(m)[:16]}"
    raise PolicyParseError(f"unknown predicate {p!r}")


def decide(att: AttestedEvidence, policy: Policy, ctx: EvalContext) -> PolicyDecision:
    action = PROCEED
    results = []
    for rule in policy.rules:
        if not rule.applies(att):
            continue
        passed, detail = _check(rule, att, ctx)
        results.append(RuleResult(rule.rule_id, passed, rule.advisory, detail))
        if not passed and not rule.advisory and action == PROCEED:
            action = rule.on_fail
    return PolicyDecision(action, tuple(results))


def f_eval(
    att: AttestedEvidence, policy: Policy, ctx: EvalContext
) -> tuple[PolicyDecision, ActionedEvidence]:
    """Evaluate ``policy`` on ``att`` and wrap it as actioned evidence.

    All applicable rules run in order; the action is the ``on_fail`` of the
    first failing non-advisory rule, PROCEED otherwise.
    """
    decision = decide(att, policy, ctx)
    act = ActionedEvidence.create(att, decision.action, policy.policy_id, decision.rule_results)
    return decision, act


__all__ = [
    "ACTIONS",
    "EvalContext",
    "Policy",
    "PolicyDecision",
    "Rule",
    "RuleResult",
    "decide",
    "f_eval",
    "load_policy",
    "policy_from_dict",
]
