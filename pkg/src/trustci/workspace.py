"""On-disk producer workspace and the hermetic fixtures the scenarios run on.

Layout::

    <root>/keystore.jsonl        key records (producer copy, with private keys)
    <root>/ledger.jsonl          commitment ledger
    <root>/registry/             artifact registry
    <root>/store/                build content store
    <root>/fixtures/             src/, manifest.json, tests.json, vulndb.json
    <root>/runs/<pipeline_id>/   pipeline.json, policy.json, envs/, manifest.json, bundle.jsonl
"""

from __future__ import annotations

import random
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .canonical import Digest, canonical_decode, canonical_encode, sha256
from .dbs import DependencyManifest, ManifestEntry, PipelineSpec, TaskSpec, ingest_source
from .engine import PipelineRun, ProducerKeys, export_bundle, run_manifest, run_pipeline
from .errors import FixtureMissing
from .evidence import AUDIT_REPORT, TEST_REPORT
from .keys import ACTOR, MANUFACTURER_ROOT, KeyStore, keygen
from .ledger import Ledger
from .policy import Policy, Rule, load_policy
from .store import ContentStore, Registry
from .tee import ReferenceEnvironment, make_reference_env

DEFAULT_VULNDB = [
    {"id": "VULN-2021-0001", "name": "logkit", "introduced": "2.0.0", "fixed": "2.15.0",
     "severity": "CRITICAL", "content_digest": None},
    {"id": "VULN-2022-0002", "name": "leftpad", "introduced": "1.0.0", "fixed": "1.3.1",
     "severity": "LOW", "content_digest": None},
    {"id": "VULN-2023-0003", "name": "yamlparse", "introduced": "0.1.0", "fixed": "0.9.0",
     "severity": "MEDIUM", "content_digest": None},
    {"id": "VULN-2024-0004", "name": "httpcore", "introduced": "3.0.0", "fixed": "3.4.2",
     "severity": "HIGH", "content_digest": None},
    {"id": "VULN-2025-0005", "name": "serverdom", "introduced": "19.0.0", "fixed": "19.0.1",
     "severity": "CRITICAL", "content_digest": None},
]

CLEAN_DEPENDENCIES = [
    ("httpcore", "3.5.0"),
    ("leftpad", "1.2.0"),  # LOW finding, tolerated by the default policy
    ("logkit", "2.17.1"),
    ("yamlparse", "1.0.2"),
]
VULNERABLE_DEPENDENCY = ("httpcore", "3.2.0")

SOURCE_FILES = {
    "README.md": "Demo service\n",
    "app/__init__.py": "",
    "app/main.py": "from app.util import greet\n\n\ndef main():\n    print(greet('ci'))\n",
    "app/util.py": "def greet(name):\n    return f'hello {name}'\n",
    "app/config.py": "TIMEOUT = 30\nRETRIES = 3\n",
    "tests/test_util.py": "from app.util import greet\n\n\ndef test_greet():\n"
                          "    assert greet('x') == 'hello x'\n",
}

TEST_CASES = [
    {"name": "has-readme", "path": "README.md", "contains": "Demo"},
    {"name": "main-defined", "path": "app/main.py", "contains": "def main"},
    {"name": "main-imports-util", "path": "app/main.py", "contains": "from app.util"},
    {"name": "greet-defined", "path": "app/util.py", "contains": "def greet"},
    {"name": "greet-format", "path": "app/util.py", "contains": "hello {name}"},
    {"name": "timeout-set", "path": "app/config.py", "contains": "TIMEOUT"},
    {"name": "retries-set", "path": "app/config.py", "contains": "RETRIES"},
    {"name": "package-init", "path": "app/__init__.py", "contains": ""},
    {"name": "unit-test-present", "path": "tests/test_util.py", "contains": "def test_greet"},
    {"name": "unit-test-asserts", "path": "tests/test_util.py", "contains": "assert"},
]
FAILING_CASE = {"name": "has-license", "path": "LICENSE", "contains": "MIT"}


def package_digest(name: str, version: str) -> Digest:
    return sha256(f"{name}-{version}.tar.gz".encode())


def make_manifest(deps: Iterable[tuple[str, str]]) -> DependencyManifest:
    return DependencyManifest(tuple(ManifestEntry(n, v, package_digest(n, v)) for n, v in deps))


def write_source_tree(path: Path, files: dict[str, str]) -> Path:
    path = Path(path)
    for rel, text in files.items():
        target = path / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")
    return path


def random_source_files(rng: random.Random) -> dict[str, str]:
    """The default tree plus a few random modules, so digests vary per fixture."""
    files = dict(SOURCE_FILES)
    for i in range(rng.randint(1, 4)):
        body = "".join(f"V{j} = {rng.randint(0, 10**6)}\n" for j in range(rng.randint(1, 5)))
        files[f"app/gen_{i}_{rng.randint(0, 9999)}.py"] = body
    return files


def write_fixtures(root: Path, vulnerable: bool = False, failing_test: bool = False,
                   files: Optional[dict[str, str]] = None) -> Path:
    """Write source tree, manifest, test suite and vulnerability DB under ``root``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    write_source_tree(root / "src", files or SOURCE_FILES)
    deps = list(CLEAN_DEPENDENCIES)
    if vulnerable:
        deps = [d for d in deps if d[0] != VULNERABLE_DEPENDENCY[0]] + [VULNERABLE_DEPENDENCY]
    (root / "manifest.json").write_bytes(canonical_encode(make_manifest(deps)))
    cases = TEST_CASES + ([FAILING_CASE] if failing_test else [])
    (root / "tests.json").write_bytes(canonical_encode({"cases": cases}))
    (root / "vulndb.json").write_bytes(canonical_encode({"vulnerabilities": DEFAULT_VULNDB}))
    return root


def default_policy(actor_key_id: Digest, max_severity: str = "MEDIUM") -> Policy:
    return Policy((
        Rule("origin-signed-by-actor", "signer-in-allowlist", {"keys": [actor_key_id.hex]},
             stages=(0,)),
        Rule("attested", "attestation-valid"),
        Rule("committed-not-revoked", "ledger-not-revoked"),
        Rule("tests-pass", "tests-all-pass", payload_kinds=(TEST_REPORT,)),
        Rule("vuln-threshold", "max-vuln-severity", {"level": max_severity},
             payload_kinds=(AUDIT_REPORT,)),
        Rule("vuln-free", "max-vuln-severity", {"level": "NONE"}, advisory=True,
             payload_kinds=(AUDIT_REPORT,)),
    ))


DEFAULT_LABELS = {"platform": "tdx-sim", "image": "dbs-runner:1"}


class Workspace:
    """A producer's keys, ledger, registry and content store rooted at one directory."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.keystore = KeyStore.load(self.root / "keystore.jsonl")
        self.ledger = Ledger.load(self.root / "ledger.jsonl")
        self.registry = Registry(self.root / "registry")
        self.store = ContentStore(self.root / "store")

    @classmethod
    def init(cls, root: Path, vulnerable: bool = False, failing_test: bool = False,
             files: Optional[dict[str, str]] = None) -> "Workspace":
        ws = cls(root)
        if not ws.keystore.by_role(MANUFACTURER_ROOT):
            ws.keystore.add(keygen(MANUFACTURER_ROOT))
        if not ws.keystore.by_role(ACTOR):
            ws.keystore.add(keygen(ACTOR))
        if not (ws.fixtures / "vulndb.json").exists():
            write_fixtures(ws.fixtures, vulnerable, failing_test, files)
        return ws

    @property
    def fixtures(self) -> Path:
        return self.root / "fixtures"

    def _signing_key(self, role: str):
        for k in self.keystore.by_role(role):
            if k.can_sign:
                return k
        raise FixtureMissing(f"workspace has no {role} key with a private part")

    @property
    def keys(self) -> ProducerKeys:
        return ProducerKeys(self._signing_key(ACTOR), self._signing_key(MANUFACTURER_ROOT))

    def fixture_inputs(self, source: Optional[Path] = None) -> dict[str, Digest]:
        f = self.fixtures
        for name in ("manifest.json", "tests.json", "vulndb.json"):
            if not (f / name).exists():
                raise FixtureMissing(f"missing fixture {f / name}")
        src = Path(source) if source is not None else f / "src"
        if not src.is_dir():
            raise FixtureMissing(f"missing source tree {src}")
        return {
            "source": ingest_source(src, self.store),
            "manifest": self.store.put((f / "manifest.json").read_bytes()),
            "tests": self.store.put((f / "tests.json").read_bytes()),
            "vulndb": self.store.put((f / "vulndb.json").read_bytes()),
        }

    def prepare(
        self,
        source: Optional[Path] = None,
        kinds: Sequence[str] = ("build", "test", "audit"),
        policy: Optional[Policy] = None,
        labels: Optional[dict] = None,
    ) -> tuple[PipelineSpec, dict[Digest, ReferenceEnvironment], Policy]:
        """Assemble a pipeline spec with one reference environment per task."""
        if not kinds or kinds[0] != "build":
            raise ValueError("a pipeline starts with a build task")
        inputs = self.fixture_inputs(source)
        policy = policy or default_policy(self.keys.actor.key_id)
        roots = [k.key_id for k in self.keystore.by_role(MANUFACTURER_ROOT)]
        tasks, envs = [], {}
        for i, kind in enumerate(kinds, start=1):
            refs = {
                "build": (inputs["source"], inputs["manifest"]),
                "test": (inputs["tests"],),
                "audit": (inputs["vulndb"],),
            }[kind]
            task = TaskSpec(f"{kind}-{i}", kind, refs, {"toolchain": "dbs-sim-1"})
            env = make_reference_env(task, {**(labels or DEFAULT_LABELS), "stage_kind": kind}, roots)
            tasks.append(task)
            envs[env.env_id] = env
        spec = PipelineSpec(tuple(tasks), tuple(envs), policy.policy_id)
        return spec, envs, policy

    def run(
        self,
        source: Optional[Path] = None,
        trigger: Optional[bytes] = None,
        kinds: Sequence[str] = ("build", "test", "audit"),
        policy: Optional[Policy] = None,
        tamper_stages: Iterable[int] = (),
        clock=None,
        save: bool = True,
    ) -> PipelineRun:
        spec, envs, policy = self.prepare(source, kinds, policy)
        if trigger is None:
            trigger = f"commit {spec.tasks[0].input_refs[0].hex}".encode()
        run = run_pipeline(trigger, spec, self.keys, envs, policy, self.ledger, self.registry,
                           self.keystore, self.store, tamper_stages=tamper_stages, clock=clock)
        if save:
            self.save_run(run, envs, policy)
        return run

    def run_dir(self, pipeline_id: Digest) -> Path:
        return self.root / "runs" / pipeline_id.hex

    def save_run(self, run: PipelineRun, envs, policy: Policy) -> Path:
        d = self.run_dir(run.pipeline_id)
        (d / "envs").mkdir(parents=True, exist_ok=True)
        (d / "pipeline.json").write_bytes(
            canonical_encode({**run.spec.to_dict(), "pipeline_id": run.pipeline_id}) + b"\n")
        policy.save(d / "policy.json")
        self.registry.store(canonical_encode(policy), "policy")
        for env in envs.values():
            env.save(d / "envs" / f"{env.env_id.hex}.json")
            self.registry.store(canonical_encode(env), "env-descriptor")
        (d / "manifest.json").write_bytes(canonical_encode(run_manifest(run, self.ledger)) + b"\n")
        if run.completed:
            bundle = export_bundle(run)
            (d / "bundle.jsonl").write_bytes(bundle)
            self.registry.store(bundle, "evidence-bundle")
        return d


def load_run_inputs(run_dir: Path) -> tuple[dict, Policy, dict[Digest, ReferenceEnvironment]]:
    """Read a saved run's manifest, policy and reference environments."""
    run_dir = Path(run_dir)
    manifest = canonical_decode((run_dir / "manifest.json").read_bytes().rstrip(b"\n"))
    policy = load_policy(run_dir / "policy.json")
    envs = {}
    for path in sorted((run_dir / "envs").glob("*.json")):
        env = ReferenceEnvironment.load(path)
        envs[env.env_id] = env
    return manifest, policy, envs
