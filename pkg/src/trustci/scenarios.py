"""Threat scenarios run end to end against a fresh workspace.

S1  a TEE's workload is modified after its environment was set up
S2  a third-party dependency carries a vulnerability above the policy threshold
S3  a committed digest is rewritten in the ledger file after the fact

Reports leave out keys and digests so a scenario yields the same report on
every run, apart from the latency field (integer microseconds).
"""

from __future__ import annotations

import random
import time
from pathlib import Path
from typing import Optional

from .canonical import canonical_decode, canonical_encode
from .engine import export_bundle
from .errors import FixtureMissing
from .evidence import AUDIT_REPORT, REJECT
from .ledger import Ledger, verify_chain
from .verifier import full_audit, load_bundle
from .workspace import Workspace

SCENARIOS = ("s1", "s2", "s3")


def _workspace(root: Path, prepare: bool, **fixture_flags) -> Workspace:
    root = Path(root)
    if not prepare and not (root / "fixtures").is_dir():
        raise FixtureMissing(f"no fixtures under {root}")
    return Workspace.init(root, **fixture_flags) if prepare else Workspace(root)


def mutate_ledger_line(path: Path, index: int, field: str = "committed_digest",
                       rng: Optional[random.Random] = None) -> None:
    """Rewrite one field of ledger entry ``index`` in place, keeping the file canonical."""
    rng = rng or random.Random(0)
    lines = Path(path).read_bytes().split(b"\n")
    doc = canonical_decode(lines[index])
    value = doc[field]
    if isinstance(value, str) and len(value) == 64:
        pos = rng.randrange(64)
        new_char = rng.choice([c for c in "0123456789abcdef" if c != value[pos]])
        doc[field] = value[:pos] + new_char + value[pos + 1:]
    elif isinstance(value, int):
        doc[field] = value + rng.randint(1, 5)
    else:
        doc[field] = value + "x" if isinstance(value, str) else "x"
    lines[index] = canonical_encode(doc)
    Path(path).write_bytes(b"\n".join(lines))


def scenario_s1(root: Path, prepare: bool = True, tamper_stage: int = 2) -> dict:
    ws = _workspace(root, prepare)
    run = ws.run(tamper_stages={tamper_stage})
    committed = [e.stage_index for e in ws.ledger.commitments_for(run.pipeline_id)]
    observed = "completed" if run.completed else f"abort-{run.failure}"
    ok = (
        observed == "abort-attestation"
        and run.aborted_at == tamper_stage
        and committed == list(range(tamper_stage))
        and len(run.records) == tamper_stage
    )
    return {
        "scenario": "s1",
        "expected": "abort-attestation",
        "observed": observed,
        "aborted_at": run.aborted_at,
        "committed_stages": committed,
        "reason": run.reason.split(":")[0] if run.reason else "",
        "pass": ok,
    }


def scenario_s2(root: Path, prepare: bool = True) -> dict:
    ws = _workspace(root, prepare, vulnerable=True)
    run = ws.run()
    rejected = run.rejected
    if rejected is not None and rejected.att.auth.raw.payload_kind == AUDIT_REPORT:
        observed = f"{rejected.action} at audit stage"
    elif rejected is not None:
        observed = f"{rejected.action} at {rejected.att.auth.raw.payload_kind} stage"
    else:
        observed = run.status
    failing = [r.rule_id for r in (rejected.rule_results if rejected else ()) if not r.passed]
    return {
        "scenario": "s2",
        "expected": f"{REJECT} at audit stage",
        "observed": observed,
        "abort_label": run.reason,
        "failing_rules": failing,
        "deployed": run.deploy_record is not None,
        "pass": observed == f"{REJECT} at audit stage" and run.deploy_record is None,
    }


def scenario_s3(root: Path, prepare: bool = True, seed: int = 0, latency_bound_ms: float = 100.0) -> dict:
    ws = _workspace(root, prepare)
    run = ws.run()
    if not run.completed:
        return {"scenario": "s3", "expected": "detected", "observed": f"setup {run.status}",
                "pass": False}
    rng = random.Random(seed)
    targets = [c.index for c in run.commitments]
    k = rng.choice(targets[1:])
    mutate_ledger_line(ws.ledger.path, k, "committed_digest", rng)

    t0 = time.perf_counter()
    tampered = Ledger.load(ws.ledger.path)
    ok, first_bad = verify_chain(tampered)
    latency_ms = (time.perf_counter() - t0) * 1000

    audit = full_audit(load_bundle(export_bundle(run)), tampered, run.policy, ws.keystore, run.envs)
    detected = not ok
    return {
        "scenario": "s3",
        "expected": "detected",
        "observed": "detected" if detected else "undetected",
        "detected": detected,
        "mutated_stage": run.commitments[targets.index(k)].stage_index,
        "first_bad_index": first_bad,
        "mutated_index": k,
        "latency_us": int(latency_ms * 1000),
        "audit_verdict": audit.verdict,
        "pass": detected and first_bad == k and latency_ms <= latency_bound_ms
        and not audit.passed,
    }


def simulate_scenario(kind: str, workspace: Path, prepare: bool = True, **kwargs) -> dict:
    """Run scenario ``kind`` (s1, s2 or s3) in ``workspace/<kind>``."""
    kind = kind.lower()
    runners = {"s1": scenario_s1, "s2": scenario_s2, "s3": scenario_s3}
    if kind not in runners:
        raise ValueError(f"unknown scenario {kind!r}; expected one of {SCENARIOS}")
    return runners[kind](Path(workspace) / kind, prepare=prepare, **kwargs)
