"""Evidence-driven trustworthy CI pipelines: simulated TEEs, deterministic builds, hash-chained ledger."""

from .canonical import ZERO_DIGEST, Digest, canonical_decode, canonical_encode, hash_value, sha256
from .dbs import DependencyManifest, PipelineSpec, TaskOutput, TaskSpec, ingest_source, run_task
from .engine import PipelineRun, ProducerKeys, export_bundle, f_feedback, run_manifest, run_pipeline
from .evidence import (
    BOTTOM,
    PROCEED,
    REJECT,
    REVOKE,
    ActionedEvidence,
    AttestedEvidence,
    AuthenticatedEvidence,
    Bottom,
    RawEvidence,
    f_auth,
    make_raw,
    verify_auth,
)
from .keys import KeyRecord, KeyStore, SignatureEnvelope, keygen, sign, verify_signature
from .ledger import Ledger, LedgerEntry, f_commit, revoke, verify_chain
from .policy import EvalContext, Policy, Rule, f_eval, load_policy
from .store import ContentStore, Registry
from .tee import ReferenceEnvironment, f_attest, make_reference_env, measure, produce_quote, tee_launch
from .verifier import VerificationReport, full_audit, load_bundle, quick_verify
from .scaling import COST_TABLE, CostRow, ScalingScenario, simulate_scaling
from .scenarios import simulate_scenario
from .workspace import Workspace

__version__ = "0.1.0"

__all__ = [
    "ActionedEvidence",
    "AttestedEvidence",
    "AuthenticatedEvidence",
    "BOTTOM",
    "Bottom",
    "COST_TABLE",
    "ContentStore",
    "CostRow",
    "DependencyManifest",
    "Digest",
    "EvalContext",
    "KeyRecord",
    "KeyStore",
    "Ledger",
    "LedgerEntry",
    "PROCEED",
    "PipelineRun",
    "PipelineSpec",
    "Policy",
    "ProducerKeys",
    "REJECT",
    "REVOKE",
    "RawEvidence",
    "ReferenceEnvironment",
    "Registry",
    "Rule",
    "ScalingScenario",
    "SignatureEnvelope",
    "TaskOutput",
    "TaskSpec",
    "VerificationReport",
    "Workspace",
    "ZERO_DIGEST",
    "canonical_decode",
    "canonical_encode",
    "export_bundle",
    "f_attest",
    "f_auth",
    "f_commit",
    "f_eval",
    "f_feedback",
    "full_audit",
    "hash_value",
    "ingest_source",
    "keygen",
    "load_bundle",
    "load_policy",
    "make_raw",
    "make_reference_env",
    "measure",
    "produce_quote",
    "quick_verify",
    "revoke",
    "run_manifest",
    "run_pipeline",
    "run_task",
    "sha256",
    "sign",
    "simulate_scaling",
    "simulate_scenario",
    "tee_launch",
    "verify_auth",
    "verify_chain",
    "verify_signature",
]
