"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s``; the per-criterion
summary is printed at the end of the session either way.
"""

import dataclasses
import random
import statistics
import time

import pytest

from trustci import Workspace
from trustci.canonical import Digest, canonical_decode, canonical_encode, hash_value, sha256
from trustci.dbs import SEVERITIES, DependencyManifest, ManifestEntry, TaskSpec, ingest_source, run_task
from trustci.engine import export_bundle
from trustci.errors import LifecycleError, TrustCIError
from trustci.evidence import (
    AUDIT_REPORT,
    PROCEED,
    REJECT,
    ActionedEvidence,
    AttestedEvidence,
    RuleResult,
    bind,
    f_auth,
)
from trustci.keys import MANUFACTURER_ROOT, SYSTEM, TEE_IDENTITY, keygen, sign
from trustci.ledger import Ledger, verify_chain
from trustci.scaling import COST_TABLE, ScalingScenario, simulate_scaling
from trustci.scenarios import mutate_ledger_line
from trustci.store import ContentStore
from trustci.tee import produce_quote, tee_launch
from trustci.verifier import full_audit, load_actioned, load_attested, load_bundle, quick_verify
from trustci.workspace import (
    TEST_CASES,
    random_source_files,
    write_source_tree,
)


def record(request, n, ok, detail):
    request.node.user_properties.append(("detail", detail))
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


def quick(ws, run):
    return quick_verify(run.artifact_digest, run.final_actioned, run.commitments[-1], ws.ledger.head,
                        run.policy, ws.keystore.public(), ws.ledger)


def audit(ws, run, data=None):
    return full_audit(load_bundle(data if data is not None else export_bundle(run)), ws.ledger,
                      run.policy, ws.keystore.public(), run.envs)


# --- 1 ---------------------------------------------------------------------------

@pytest.mark.criterion(1)
def test_c1_protocol_conformance(tmp_path, request):
    t0 = time.perf_counter()
    ws = Workspace.init(tmp_path / "ws")
    run = ws.run()
    full = audit(ws, run)
    q = quick(ws, run)
    elapsed = time.perf_counter() - t0

    entries = ws.ledger.commitments_for(run.pipeline_id)
    stage_entries = [e for e in entries if e.stage_index <= len(run.spec.tasks)]
    in_order = [e.stage_index for e in stage_entries] == [0, 1, 2, 3] and \
        [e.index for e in stage_entries] == sorted(e.index for e in stage_entries)
    deploy_only_extra = [e.committed_digest for e in entries if e not in stage_entries] == [run.deploy_record.digest]
    ok = (run.completed and len(stage_entries) == 4 and in_order and deploy_only_extra
          and full.passed and full.findings == [] and q.passed and q.checks_performed == 7
          and elapsed < 5.0)
    record(request, 1, ok, f"4 stage commitments in order={in_order}, audit findings={len(full.findings)}, "
                           f"quick checks={q.checks_performed}, {elapsed:.2f}s")
    assert ok


# --- 2 ---------------------------------------------------------------------------

@pytest.mark.criterion(2)
def test_c2_s1_tamper_detection(tmp_path, request):
    rng = random.Random(2024)
    failures = []
    for trial in range(100):
        ws = Workspace.init(tmp_path / f"t{trial}", files=random_source_files(rng))
        stage = rng.randint(1, 3)
        run = ws.run(tamper_stages={stage}, save=False)
        committed = [e.stage_index for e in ws.ledger.commitments_for(run.pipeline_id)]
        stored = [r for r in ws.registry.records() if r.kind == "artifact"]
        good = (
            run.status == "aborted" and run.aborted_at == stage and run.failure == "attestation"
            and run.reason.startswith("⊥") and committed == list(range(stage))
            and len(run.records) == stage and len(stored) == stage and run.deploy_record is None
        )
        if not good:
            failures.append((trial, stage, run.reason))
    record(request, 2, not failures, f"{100 - len(failures)}/100 randomized tampered runs aborted correctly")
    assert failures == []


# --- 3 ---------------------------------------------------------------------------

def _ver(v):
    return tuple(int(x) for x in v.split("."))


def _oracle_reject(entries, vulns, threshold="MEDIUM"):
    """Brute-force cross-join: any (entry, vuln) match above the threshold means REJECT."""
    limit = SEVERITIES.index(threshold)
    for name, version, digest in entries:
        for v in vulns:
            hit = v["content_digest"] == digest or (
                v["name"] == name
                and (v["introduced"] is None or _ver(v["introduced"]) <= _ver(version))
                and (v["fixed"] is None or _ver(version) < _ver(v["fixed"]))
            )
            if hit and SEVERITIES.index(v["severity"]) > limit:
                return True
    return False


def _random_sbom(rng):
    names = [f"lib{i}" for i in range(15)]
    chosen = {}
    for _ in range(rng.randint(0, 50)):
        n, v = rng.choice(names), f"{rng.randint(0, 4)}.{rng.randint(0, 9)}.{rng.randint(0, 9)}"
        chosen[(n, v)] = sha256(f"{n}@{v}".encode()).hex
    entries = [(n, v, d) for (n, v), d in chosen.items()]
    vulns = []
    for i in range(rng.randint(0, 20)):
        lo = f"{rng.randint(0, 4)}.{rng.randint(0, 9)}.0"
        hi = f"{rng.randint(0, 4)}.{rng.randint(0, 9)}.{rng.randint(0, 9)}"
        vulns.append({
            "id": f"FIX-{i:03d}",
            "name": rng.choice(names),
            "introduced": lo if rng.random() < 0.8 else None,
            "fixed": hi if rng.random() < 0.8 else None,
            "severity": rng.choice(["LOW", "MEDIUM", "HIGH", "CRITICAL"]),
            "content_digest": rng.choice(entries)[2] if entries and rng.random() < 0.1 else None,
        })
    return entries, vulns


@pytest.mark.criterion(3)
def test_c3_s2_dependency_gating(tmp_path, request):
    rng = random.Random(3)
    ws = Workspace.init(tmp_path / "ws")
    mismatches, rejects, proceeds = [], 0, 0
    for trial in range(80):
        entries, vulns = _random_sbom(rng)
        manifest = DependencyManifest(tuple(ManifestEntry(n, v, Digest.from_hex(d)) for n, v, d in entries))
        (ws.fixtures / "manifest.json").write_bytes(canonical_encode(manifest))
        (ws.fixtures / "vulndb.json").write_bytes(canonical_encode({"vulnerabilities": vulns}))
        run = ws.run(trigger=f"trial {trial}".encode(), save=False)
        expect_reject = _oracle_reject(entries, vulns)
        if expect_reject:
            rejects += 1
            got = (not run.completed and run.rejected is not None and run.rejected.action == REJECT
                   and run.rejected.att.auth.raw.payload_kind == AUDIT_REPORT and run.deploy_record is None)
        else:
            proceeds += 1
            got = run.completed and run.final_actioned.action == PROCEED
        if not got:
            mismatches.append(trial)
    ok = not mismatches and rejects >= 10 and proceeds >= 10
    record(request, 3, ok, f"80 fixtures (<=50 deps x <=20 vulns): {rejects} REJECT, {proceeds} PROCEED, "
                           f"{len(mismatches)} disagreements with the cross-join oracle")
    assert ok


# --- 4 ---------------------------------------------------------------------------

FIELDS = ("index", "entry_kind", "committed_digest", "pipeline_id", "stage_index",
          "prev_entry_digest", "reason", "entry_digest")


@pytest.mark.criterion(4)
def test_c4_s3_ledger_inconsistency(tmp_path, request):
    ws = Workspace.init(tmp_path / "ws")
    while len(ws.ledger) + 5 <= 1000:
        assert ws.run(trigger=f"release {len(ws.ledger)}".encode(), save=False).completed
    path = ws.ledger.path
    pristine = path.read_bytes()
    n = len(ws.ledger)
    rng = random.Random(4)
    wrong, latencies = [], []
    for k in range(n):
        path.write_bytes(pristine)
        mutate_ledger_line(path, k, rng.choice(FIELDS), rng)
        t0 = time.perf_counter()
        ok, bad = verify_chain(Ledger.load(path))
        latencies.append((time.perf_counter() - t0) * 1000)
        if ok or bad != k:
            wrong.append(k)
    path.write_bytes(pristine)
    median, worst = statistics.median(latencies), max(latencies)
    ok = not wrong and median <= 100.0
    record(request, 4, ok, f"{n}-entry ledger, {n - len(wrong)}/{n} mutations localized; "
                           f"load+verify latency median {median:.1f} ms, max {worst:.1f} ms (bound 100 ms)")
    assert wrong == []
    assert median <= 100.0


# --- 5 ---------------------------------------------------------------------------

HEX = "0123456789abcdef"


def _same_class_mutation(byte: int) -> int:
    """Replace a byte with a different one of the same lexical class, so most edits still parse."""
    ch = chr(byte)
    if ch in HEX:
        return ord(HEX[(HEX.index(ch) + 1) % 16])
    if ch.isdigit():
        return ord(str((int(ch) + 1) % 10))
    if ch.isalpha():
        return ord("b" if ch == "a" else "a")
    return byte ^ 0x01


@pytest.mark.criterion(5)
def test_c5_bundle_tamper_evidence_exhaustive(clean_ws, request):
    ws, run = clean_ws
    data = export_bundle(run)
    pub = ws.keystore.public()
    assert audit(ws, run, data).passed
    survivors, parsed = [], 0
    for pos in range(len(data)):
        mutated = bytearray(data)
        mutated[pos] = _same_class_mutation(data[pos])
        try:
            bundle = load_bundle(bytes(mutated))
        except TrustCIError:
            continue
        parsed += 1
        if full_audit(bundle, ws.ledger, run.policy, pub, run.envs).passed:
            survivors.append(pos)
    record(request, 5, not survivors, f"{len(data)} bytes mutated, {parsed} re-parsed and audited, "
                                      f"{len(survivors)} accepted")
    assert survivors == []


# --- 6 ---------------------------------------------------------------------------

class _Prev:
    """Minimal PROCEED predecessor carrying an artifact reference."""

    action = PROCEED

    def __init__(self, artifact=None):
        md = {"artifact_digest": artifact} if artifact else {}
        raw = type("Raw", (), {"metadata": md})
        self.att = type("Att", (), {"auth": type("Auth", (), {"raw": raw})})


@pytest.mark.criterion(6)
def test_c6_determinism(tmp_path, request):
    rng = random.Random(6)
    deviations, executions = 0, 0
    for i in range(200):
        root = tmp_path / f"f{i}"
        store = ContentStore(root / "store")
        files = random_source_files(rng)
        src = ingest_source(write_source_tree(root / "src", files), store)
        deps = {(f"d{rng.randint(0, 9)}", f"1.{rng.randint(0, 5)}.0") for _ in range(rng.randint(0, 8))}
        manifest = store.put_value(DependencyManifest(tuple(
            ManifestEntry(n, v, sha256(f"{n}{v}".encode())) for n, v in deps)))
        cases = rng.sample(TEST_CASES, rng.randint(1, len(TEST_CASES)))
        suite = store.put_value({"cases": cases})
        vulndb = store.put_value({"vulnerabilities": [
            {"id": f"V{j}", "name": f"d{rng.randint(0, 9)}", "introduced": "1.0.0",
             "fixed": f"1.{rng.randint(0, 6)}.0", "severity": rng.choice(SEVERITIES[1:]),
             "content_digest": None} for j in range(rng.randint(0, 5))]})
        params = {"toolchain": "dbs-sim-1", "opt": str(rng.randint(0, 3))}

        build = TaskSpec("build-1", "build", (src, manifest), params)
        outs = [run_task(build, _Prev(), store) for _ in range(5)]
        artifact = outs[0].report["artifact_digest"]
        for task in (TaskSpec("test-2", "test", (suite,)), TaskSpec("audit-3", "audit", (vulndb,))):
            kind_outs = [run_task(task, _Prev(artifact), store) for _ in range(5)]
            executions += 5
            deviations += len({(o.output_digest, o.payload) for o in kind_outs}) - 1
        executions += 5
        deviations += len({(o.output_digest, o.payload) for o in outs}) - 1
    record(request, 6, deviations == 0, f"200 fixtures x 3 task kinds x 5 runs = {executions} executions, "
                                        f"{deviations} deviations")
    assert deviations == 0


# --- 7 ---------------------------------------------------------------------------

@pytest.mark.criterion(7)
def test_c7_amortization_model(request):
    row = COST_TABLE["backend-service"]
    curves = simulate_scaling(ScalingScenario(months=12, consumer_growth_per_month=10,
                                              releases_per_month=1, cost=row))
    c_wo, c_w, v = 9.13, 16.50, 80 / 60000
    # closed-form oracle
    untrusted = sum(10 * m * c_wo for m in range(1, 13))
    trusted = 12 * c_w + sum(10 * m * v for m in range(1, 13))
    u, t = float(curves.untrusted_cumulative[-1]), float(curves.trusted_cumulative[-1])
    within = abs(u - untrusted) / untrusted <= 1e-3 and abs(t - trusted) / trusted <= 1e-3
    near_stated = abs(u - 7121.4) / 7121.4 <= 1e-3 and abs(t - 199.0) / 199.0 <= 1e-3
    always_cheaper = all(tc < uc for tc, uc in zip(curves.trusted_cumulative, curves.untrusted_cumulative))
    ok = within and near_stated and always_cheaper
    record(request, 7, ok, f"untrusted {u:.2f} min (oracle {untrusted:.2f}), trusted {t:.2f} min "
                           f"(oracle {trusted:.2f}), trusted < untrusted every month: {always_cheaper}")
    assert ok


# --- 8 ---------------------------------------------------------------------------

@pytest.mark.criterion(8)
def test_c8_constant_quick_linear_full(tmp_path, request):
    quick_counts, full_counts = {}, {}
    for n in (1, 5, 50):
        ws = Workspace.init(tmp_path / f"n{n}")
        kinds = ["build"] + ["test" if i % 2 else "audit" for i in range(1, n)]
        run = ws.run(kinds=kinds, save=False)
        assert run.completed
        q, f = quick(ws, run), audit(ws, run)
        assert q.passed and f.passed
        quick_counts[n], full_counts[n] = q.checks_performed, f.checks_performed
    slope = (full_counts[5] - full_counts[1]) / 4
    intercept = full_counts[1] - slope
    linear = slope > 0 and full_counts[50] == intercept + slope * 50
    constant = len(set(quick_counts.values())) == 1
    ok = constant and linear
    record(request, 8, ok, f"quick checks {quick_counts}; full-audit checks {full_counts} "
                           f"(= {intercept:g} + {slope:g}n)")
    assert ok


# --- 9 ---------------------------------------------------------------------------

def _leaves(value, path=()):
    if isinstance(value, dict):
        for k, v in value.items():
            yield from _leaves(v, path + (k,))
    elif isinstance(value, list):
        for i, v in enumerate(value):
            yield from _leaves(v, path + (i,))
    else:
        yield path, value


def _with(doc, path, value):
    doc = canonical_decode(canonical_encode(doc))
    target = doc
    for p in path[:-1]:
        target = target[p]
    target[path[-1]] = value
    return doc


def _flip(value):
    if isinstance(value, bool):
        return not value
    if isinstance(value, int):
        return value + 1
    if value is None:
        return "00" * 16
    if value and all(c in HEX for c in value) and len(value) % 2 == 0:
        return ("1" if value[0] != "1" else "2") + value[1:]
    return value + "x"


def _registered_system_key(ws, run, stage=1):
    """A system key genuinely provisioned under the workspace root and registered, as an insider holds."""
    rec = run.records[stage]
    env = run.envs[Digest.from_hex(rec.raw.metadata["env_id"])]
    return tee_launch(env, ws.keys.root, run.spec.tasks[stage - 1], ws.keystore).system_key


def _adversarial_attested(ws, run):
    """Serialized attested records that either fail to verify or skip attestation."""
    docs = []
    for rec in run.records:
        doc = canonical_decode(canonical_encode(rec.att))
        for path, value in _leaves(doc):
            if path[0] in ("auth", "quote"):
                docs.append((f"stage {rec.stage_index} {'/'.join(map(str, path))}", _with(doc, path, _flip(value))))
        docs.append((f"stage {rec.stage_index} origin flag toggled", _with(doc, ("origin",), not doc["origin"])))

    s0, s1 = run.records[0], run.records[1]
    edited_raw = dataclasses.replace(s1.raw, task_id="build-evil")
    auth = dataclasses.replace(s1.auth, raw=edited_raw, bound_digest=bind(edited_raw, s1.auth.prev_actioned_digest))
    docs.append(("raw edited, bound digest recomputed, stale signature",
                 canonical_decode(canonical_encode(dataclasses.replace(s1.att, auth=auth)))))

    rogue_root = keygen(MANUFACTURER_ROOT)
    rogue_sys = keygen(SYSTEM, keygen(TEE_IDENTITY, rogue_root))
    forged = f_auth(s1.raw, s1.auth.prev_actioned_digest, rogue_sys)
    docs.append(("re-signed by a system key under an unknown root",
                 canonical_decode(canonical_encode(dataclasses.replace(s1.att, auth=forged)))))

    insider = _registered_system_key(ws, run)
    resigned = f_auth(s1.raw, s1.auth.prev_actioned_digest, insider)
    docs.append(("re-signed by a registered system key, original quote kept",
                 canonical_decode(canonical_encode(dataclasses.replace(s1.att, auth=resigned)))))
    wrong_role = dataclasses.replace(s0.auth, signature=sign(s0.auth.bound_digest, insider))
    docs.append(("origin signed by a system key",
                 canonical_decode(canonical_encode(dataclasses.replace(s0.att, auth=wrong_role)))))
    docs.append(("stage 1 posing as origin",
                 canonical_decode(canonical_encode(dataclasses.replace(s1.att, quote=None, origin=True)))))
    return docs


def _failed_attestation_actioned(ws, run):
    """Actioned records with self-consistent digests wrapping attestations that must fail."""
    docs = []
    ks = ws.keystore
    rec = run.records[2]
    env = run.envs[Digest.from_hex(rec.raw.metadata["env_id"])]
    task = run.spec.tasks[1]
    prev = rec.auth.prev_actioned_digest

    def wrap(label, att):
        act = ActionedEvidence.create(att, PROCEED, run.policy.policy_id, [])
        docs.append((label, canonical_decode(canonical_encode(act))))

    tee = tee_launch(env, ws.keys.root, task, ks, tamper=True)
    auth = f_auth(rec.raw, prev, tee.system_key)
    wrap("tampered workload measurement", AttestedEvidence(auth, produce_quote(tee, auth.bound_digest), 1))

    tee = tee_launch(env, ws.keys.root, task, ks)
    auth = f_auth(rec.raw, prev, tee.system_key)
    wrap("quote over other evidence", AttestedEvidence(auth, produce_quote(tee, sha256(b"other evidence")), 1))
    wrap("quote replayed from another stage", AttestedEvidence(auth, run.records[1].att.quote, 1))
    q = produce_quote(tee, auth.bound_digest)
    wrap("nonce rewritten", AttestedEvidence(auth, dataclasses.replace(q, nonce=bytes(16)), 1))
    wrap("measurement rewritten", AttestedEvidence(auth, dataclasses.replace(q, measurement=sha256(b"m")), 1))

    other_root = ks.add(keygen(MANUFACTURER_ROOT))
    tee = tee_launch(env, other_root, task, ks)
    auth = f_auth(rec.raw, prev, tee.system_key)
    wrap("registered root outside the allowed set",
         AttestedEvidence(auth, produce_quote(tee, auth.bound_digest), 1))
    wrap("quote stripped", AttestedEvidence(rec.auth, None, 1))

    failing = (RuleResult("tests-pass", False, False, "1/10 failed"),)
    body = {"att": rec.att, "action": PROCEED, "policy_id": run.policy.policy_id, "rule_results": list(failing)}
    forged = ActionedEvidence(rec.att, PROCEED, run.policy.policy_id, failing, hash_value(body))
    docs.append(("PROCEED over a failing rule", canonical_decode(canonical_encode(forged))))
    stale = dataclasses.replace(rec.act, action=REJECT)
    docs.append(("action edited without recomputing the digest", canonical_decode(canonical_encode(stale))))
    return docs


@pytest.mark.criterion(9)
def test_c9_lifecycle_typing(tmp_path, request):
    ws = Workspace.init(tmp_path / "ws")
    run = ws.run(save=False)
    pub_envs = run.envs

    # controls: genuine records load
    for rec in run.records:
        load_attested(canonical_decode(canonical_encode(rec.att)), ws.keystore, pub_envs)
        load_actioned(canonical_decode(canonical_encode(rec.act)), ws.keystore, pub_envs)

    attacks = [("attested", label, doc) for label, doc in _adversarial_attested(ws, run)]
    attacks += [("actioned", label, doc) for label, doc in _failed_attestation_actioned(ws, run)]
    # actioned records whose attested part was tampered, actioned digest recomputed
    for label, doc in _adversarial_attested(ws, run):
        try:
            att = AttestedEvidence.from_dict(doc)
        except (TrustCIError, ValueError):
            continue
        act = ActionedEvidence.create(att, PROCEED, run.policy.policy_id, [])
        attacks.append(("actioned", f"wrapping {label}", canonical_decode(canonical_encode(act))))

    accepted = []
    for kind, label, doc in attacks:
        loader = load_attested if kind == "attested" else load_actioned
        try:
            loader(doc, ws.keystore, pub_envs)
        except LifecycleError:
            continue
        accepted.append(f"{kind}: {label}")
    rejected = len(attacks) - len(accepted)
    record(request, 9, not accepted, f"{rejected}/{len(attacks)} adversarial serialized records rejected")
    assert accepted == []
