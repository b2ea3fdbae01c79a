"""Deterministic build system simulator.

Tasks are pure functions of content-addressed inputs. A build synthesizes an
artifact from the source tree and dependency manifest digests, a test task
checks fixture cases against the artifact's source tree, and an audit task
matches the manifest against a vulnerability database.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional

from .canonical import Digest, canonical_encode, hash_value, sha256
from .errors import EvidenceFormatError, PreconditionViolated, UnresolvedInput
from .evidence import AUDIT_REPORT, BUILD_OUTPUT, PROCEED, TEST_REPORT
from .keys import expect_keys
from .store import ContentStore

TASK_KINDS = ("build", "test", "audit")
OUTPUT_KIND = {"build": BUILD_OUTPUT, "test": TEST_REPORT, "audit": AUDIT_REPORT}
SEVERITIES = ("NONE", "LOW", "MEDIUM", "HIGH", "CRITICAL")


def severity_rank(level: str) -> int:
    try:
        return SEVERITIES.index(level.upper())
    except ValueError:
        raise ValueError(f"unknown severity {level!r}") from None


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    kind: str
    input_refs: tuple[Digest, ...] = ()
    params: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        object.__setattr__(self, "input_refs", tuple(self.input_refs))
        for k, v in self.params.items():
            if not isinstance(k, str) or not isinstance(v, str):
                raise ValueError("task params map strings to strings")
        object.__setattr__(self, "params", dict(self.params))

    def with_params(self, **extra: str) -> "TaskSpec":
        return replace(self, params={**self.params, **extra})

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "kind": self.kind,
            "input_refs": list(self.input_refs),
            "params": dict(self.params),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        d = expect_keys(d, ("task_id", "kind", "input_refs", "params"))
        return cls(d["task_id"], d["kind"], tuple(Digest.from_hex(r) for r in d["input_refs"]),
                   d["params"])


@dataclass(frozen=True)
class PipelineSpec:
    tasks: tuple[TaskSpec, ...]
    env_refs: tuple[Digest, ...]
    policy_id: Digest

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(self, "env_refs", tuple(self.env_refs))
        if len(self.tasks) != len(self.env_refs):
            raise ValueError("every task needs exactly one reference environment")
        ids = [t.task_id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise ValueError("task ids must be unique")

    @property
    def pipeline_id(self) -> Digest:
        return hash_value(self)

    def to_dict(self) -> dict:
        return {
            "tasks": [t.to_dict() for t in self.tasks],
            "env_refs": list(self.env_refs),
            "policy_id": self.policy_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineSpec":
        d = expect_keys(d, ("tasks", "env_refs", "policy_id"), optional=("pipeline_id",))
        spec = cls(
            tuple(TaskSpec.from_dict(t) for t in d["tasks"]),
            tuple(Digest.from_hex(e) for e in d["env_refs"]),
            Digest.from_hex(d["policy_id"]),
        )
        if "pipeline_id" in d and d["pipeline_id"] != spec.pipeline_id.hex:
            raise EvidenceFormatError("pipeline_id does not match the spec")
        return spec


@dataclass(frozen=True)
class ManifestEntry:
    name: str
    version: str
    content_digest: Digest

    def to_dict(self) -> dict:
        return {"name": self.name, "version": self.version, "content_digest": self.content_digest}


@dataclass(frozen=True)
class DependencyManifest:
    entries: tuple[ManifestEntry, ...] = ()

    def __post_init__(self):
        entries = tuple(sorted(self.entries, key=lambda e: (e.name, e.version)))
        keys = [(e.name, e.version) for e in entries]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (name, version) in dependency manifest")
        object.__setattr__(self, "entries", entries)

    def to_dict(self) -> dict:
        return {"entries": [e.to_dict() for e in self.entries]}

    @classmethod
    def from_dict(cls, d: dict) -> "DependencyManifest":
        d = expect_keys(d, ("entries",))
        return cls(tuple(
            ManifestEntry(e["name"], e["version"], Digest.from_hex(e["content_digest"]))
            for e in d["entries"]
        ))


@dataclass(frozen=True)
class TaskOutput:
    output_digest: Digest
    output_kind: str
    report: dict

    def to_dict(self) -> dict:
        return {"output_digest": self.output_digest, "output_kind": self.output_kind,
                "report": self.report}

    @property
    def payload(self) -> bytes:
        return canonical_encode(self)


def ingest_source(tree: Path, store: ContentStore) -> Digest:
    """Store every file under ``tree`` and return the digest of the sorted file list."""
    tree = Path(tree)
    files = []
    for dirpath, dirnames, filenames in os.walk(tree):
        dirnames.sort()
        for name in filenames:
            path = Path(dirpath) / name
            rel = path.relative_to(tree).as_posix()
            files.append({"path": rel, "digest": store.put(path.read_bytes())})
    files.sort(key=lambda f: f["path"])
    return store.put_value({"files": files})


def version_key(version: str) -> tuple:
    parts = []
    for piece in version.replace("-", ".").split("."):
        parts.append((0, int(piece), "") if piece.isdigit() else (1, 0, piece))
    return tuple(parts)


def vuln_matches(entry: ManifestEntry, vuln: Mapping) -> bool:
    digest = vuln.get("content_digest")
    if digest is not None and digest == entry.content_digest.hex:
        return True
    if vuln["name"] != entry.name:
        return False
    v = version_key(entry.version)
    lo, hi = vuln.get("introduced"), vuln.get("fixed")
    if lo is not None and v < version_key(lo):
        return False
    if hi is not None and v >= version_key(hi):
        return False
    return True


def audit_manifest(manifest: DependencyManifest, vulndb: Iterable[Mapping]) -> list[dict]:
    vulns = list(vulndb)
    findings = []
    for entry in manifest.entries:
        for vuln in vulns:
            if vuln_matches(entry, vuln):
                findings.append({
                    "id": vuln["id"],
                    "name": entry.name,
                    "version": entry.version,
                    "severity": vuln["severity"].upper(),
                })
    findings.sort(key=lambda f: (f["id"], f["name"], f["version"]))
    return findings


def _resolve(store: ContentStore, digest: Digest):
    if digest not in store:
        raise UnresolvedInput(f"input {digest.hex} is not in the content store")
    return store.get_value(digest)


def _artifact_from(prev) -> Optional[Digest]:
    if prev is None:
        return None
    ref = prev.att.auth.raw.metadata.get("artifact_digest")
    return Digest.from_hex(ref) if ref else None


def run_task(task: TaskSpec, prev, store: ContentStore) -> TaskOutput:
    """Execute ``task`` deterministically against the content store.

    ``prev`` is the predecessor's actioned evidence and must carry a PROCEED
    decision. Test and audit tasks read the artifact recorded in its
    metadata, which joins the task's declared inputs.
    """
    if prev is not None and prev.action != PROCEED:
        raise PreconditionViolated(f"predecessor action is {prev.action}, not PROCEED")
    inputs = list(task.input_refs)
    for ref in inputs:
        if ref not in store:
            raise UnresolvedInput(f"input {ref.hex} is not in the content store")

    if task.kind == "build":
        if len(inputs) < 2:
            raise UnresolvedInput("build needs a source tree and a dependency manifest")
        source, manifest = inputs[0], inputs[1]
        tree = _resolve(store, source)
        artifact = store.put_value({
            "kind": "simulated-artifact",
            "source_tree": source,
            "manifest": manifest,
            "params": dict(task.params),
        })
        report = {
            "artifact_digest": artifact.hex,
            "source_digest": source.hex,
            "manifest_digest": manifest.hex,
            "log": [f"compile {f['path']} {f['digest'][:12]}" for f in tree["files"]]
            + [f"link {artifact.hex[:12]}"],
        }
    else:
        artifact = _artifact_from(prev)
        if artifact is None:
            raise UnresolvedInput(f"{task.kind} task needs a predecessor artifact")
        art = _resolve(store, artifact)
        inputs.append(artifact)
        if task.kind == "test":
            suite = _resolve(store, inputs[0])
            tree = _resolve(store, Digest.from_hex(art["source_tree"]))
            files = {f["path"]: Digest.from_hex(f["digest"]) for f in tree["files"]}
            failures = []
            for case in suite["cases"]:
                blob = files.get(case["path"])
                text = store.get(blob).decode("utf-8", "replace") if blob else None
                if text is None or case["contains"] not in text:
                    failures.append(case["name"])
            report = {
                "artifact_digest": artifact.hex,
                "tests_total": len(suite["cases"]),
                "tests_failed": len(failures),
                "failures": failures,
            }
        else:
            vulndb = _resolve(store, inputs[0])
            manifest_digest = Digest.from_hex(art["manifest"])
            manifest = DependencyManifest.from_dict(_resolve(store, manifest_digest))
            findings = audit_manifest(manifest, vulndb["vulnerabilities"])
            worst = max((severity_rank(f["severity"]) for f in findings), default=0)
            report = {
                "artifact_digest": artifact.hex,
                "manifest_digest": manifest_digest.hex,
                "dependencies": len(manifest.entries),
                "findings": findings,
                "max_severity": SEVERITIES[worst],
            }

    output_digest = sha256(canonical_encode(report) + b"".join(d.value for d in inputs))
    return TaskOutput(output_digest, OUTPUT_KIND[task.kind], report)
