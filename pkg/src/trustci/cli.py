"""Command-line entry point.

Exit codes: 0 success/pass, 1 verification failure or scenario mismatch,
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import tempfile
from pathlib import Path

from .canonical import Digest, canonical_decode, canonical_encode
from .errors import TrustCIError
from .keys import ROLES, KeyStore, keygen
from .ledger import Ledger, revoke
from .scaling import COST_TABLE, METRICS, ScalingScenario, load_cost_table, simulate_scaling
from .scenarios import SCENARIOS, simulate_scenario
from .verifier import full_audit, load_bundle, quick_verify
from .workspace import Workspace, load_run_inputs


def _print_json(doc) -> None:
    print(canonical_encode(doc).decode())


def cmd_keygen(args) -> int:
    store = KeyStore.load(args.keystore)
    endorser = None
    if args.endorser:
        endorser = store.get(Digest.from_hex(args.endorser))
    rec = store.add(keygen(args.role, endorser))
    print(rec.key_id.hex)
    return 0


def cmd_init(args) -> int:
    ws = Workspace.init(args.workspace, vulnerable=args.vulnerable, failing_test=args.failing_test)
    print(ws.root)
    return 0


def cmd_run(args) -> int:
    ws = Workspace(args.workspace) if (Path(args.workspace) / "fixtures").is_dir() \
        else Workspace.init(args.workspace)
    kinds = args.tasks.split(",")
    trigger = args.trigger.encode() if args.trigger else None
    policy = None
    if args.policy:
        from .policy import load_policy
        policy = load_policy(args.policy)
    run = ws.run(source=args.source, trigger=trigger, kinds=kinds, policy=policy,
                 tamper_stages=args.tamper_stage or ())
    out = ws.run_dir(run.pipeline_id)
    print(f"{run.status}: {run.reason or 'all stages PROCEED'}")
    print(f"run directory: {out}")
    return 0 if run.completed else 1


def cmd_revoke(args) -> int:
    ledger = Ledger.load(Path(args.workspace) / "ledger.jsonl")
    entry = revoke(ledger.entry(args.index), args.reason, ledger)
    print(f"revocation entry {entry.index}")
    return 0


def _emit(report, as_json: bool) -> int:
    if as_json:
        _print_json(report.to_dict())
    else:
        print(report.to_text())
    return 0 if report.passed else 1


def cmd_verify(args) -> int:
    ws = Path(args.workspace)
    run_dir = Path(args.run)
    manifest, policy, _ = load_run_inputs(run_dir)
    if manifest["status"] != "completed":
        print(f"run did not complete: {manifest['reason']}")
        return 1
    bundle = load_bundle((run_dir / "bundle.jsonl").read_bytes())
    ledger = Ledger.load(ws / "ledger.jsonl")
    keystore = KeyStore.load(ws / "keystore.jsonl", attach=False).public()
    head = Digest.from_hex(args.ledger_head) if args.ledger_head else ledger.head
    artifact = Digest.from_hex(args.artifact or manifest["artifact_digest"])
    report = quick_verify(artifact, bundle.final, ledger.entry(manifest["final_commitment_index"]),
                          head, policy, keystore, ledger)
    return _emit(report, args.json)


def cmd_audit(args) -> int:
    ws = Path(args.workspace)
    run_dir = Path(args.run)
    _, policy, envs = load_run_inputs(run_dir)
    bundle = load_bundle(Path(args.bundle or run_dir / "bundle.jsonl").read_bytes())
    ledger = Ledger.load(ws / "ledger.jsonl")
    keystore = KeyStore.load(ws / "keystore.jsonl", attach=False).public()
    return _emit(full_audit(bundle, ledger, policy, keystore, envs), args.json)


def cmd_scenario(args) -> int:
    if args.workspace:
        report = simulate_scenario(args.kind, args.workspace, prepare=True)
    else:
        with tempfile.TemporaryDirectory() as tmp:
            report = simulate_scenario(args.kind, tmp, prepare=True)
    _print_json(report)
    return 0 if report["pass"] else 1


def cmd_scaling(args) -> int:
    table = load_cost_table(args.cost_table) if args.cost_table else COST_TABLE
    if args.use_case not in table:
        print(f"unknown use case {args.use_case!r}; choose from {sorted(table)}", file=sys.stderr)
        return 2
    curves = simulate_scaling(ScalingScenario(
        args.months, args.growth, args.releases, table[args.use_case], args.metric,
        args.back_catalog,
    ))
    if args.csv:
        curves.to_csv(args.csv)
    if args.svg:
        curves.plot_svg(args.svg, title=args.use_case)
    last = curves.rows()[-1]
    print(json.dumps({
        "use_case": args.use_case,
        "metric": args.metric,
        "months": args.months,
        "untrusted_cumulative": round(last["untrusted_cumulative"], 4),
        "trusted_cumulative": round(last["trusted_cumulative"], 4),
        "producer_cumulative": round(last["producer_cumulative"], 4),
        "crossover_month": curves.crossover_month,
    }, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trustci", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="canonical-JSON file whose keys supply defaults for the subcommand flags")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("keygen", help="generate a key into a keystore file")
    s.add_argument("--keystore", required=True)
    s.add_argument("--role", required=True, choices=ROLES)
    s.add_argument("--endorser", help="hex key id of the endorsing key in the same keystore")
    s.set_defaults(func=cmd_keygen)

    s = sub.add_parser("init", help="create a workspace with keys and fixtures")
    s.add_argument("--workspace", required=True)
    s.add_argument("--vulnerable", action="store_true", help="add a HIGH-severity dependency")
    s.add_argument("--failing-test", action="store_true")
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("run", help="run a pipeline and write its manifest and evidence bundle")
    s.add_argument("--workspace", required=True)
    s.add_argument("--source", help="source tree (default: workspace fixtures/src)")
    s.add_argument("--policy", help="policy file (default: built-in policy)")
    s.add_argument("--tasks", default="build,test,audit")
    s.add_argument("--trigger")
    s.add_argument("--tamper-stage", type=int, action="append",
                   help="simulate a tampered TEE at this stage (repeatable)")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("revoke", help="revoke the commitment at a ledger index")
    s.add_argument("--workspace", required=True)
    s.add_argument("--index", type=int, required=True)
    s.add_argument("--reason", default="manual revocation")
    s.set_defaults(func=cmd_revoke)

    for name, func, help_ in (("verify", cmd_verify, "quick constant-work verification"),
                              ("audit", cmd_audit, "full chain-of-custody audit")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--workspace", required=True)
        s.add_argument("--run", required=True, help="run directory written by 'run'")
        s.add_argument("--json", action="store_true")
        if name == "verify":
            s.add_argument("--ledger-head", help="pinned ledger head digest (default: current head)")
            s.add_argument("--artifact", help="artifact digest (default: from the run manifest)")
        else:
            s.add_argument("--bundle", help="bundle file (default: <run>/bundle.jsonl)")
        s.set_defaults(func=func)

    s = sub.add_parser("simulate-scenario", help="run threat scenario s1, s2 or s3")
    s.add_argument("kind", choices=SCENARIOS)
    s.add_argument("--workspace")
    s.set_defaults(func=cmd_scenario)

    s = sub.add_parser("simulate-scaling", help="consumer-growth cost model")
    s.add_argument("--months", type=int, default=12)
    s.add_argument("--growth", type=int, default=10)
    s.add_argument("--releases", type=int, default=1)
    s.add_argument("--use-case", default="backend-service")
    s.add_argument("--metric", choices=METRICS, default="time")
    s.add_argument("--back-catalog", action="store_true",
                   help="consumers verify every published release, not only the newest")
    s.add_argument("--cost-table", help="JSON cost table overriding the built-in one")
    s.add_argument("--csv")
    s.add_argument("--svg")
    s.set_defaults(func=cmd_scaling)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    if args.config:
        try:
            config = canonical_decode(Path(args.config).read_bytes().strip(), strict=False)
        except (OSError, ValueError) as exc:
            parser.error(f"cannot read config: {exc}")
        sub_parser = parser._subparsers._group_actions[0].choices[args.command]
        sub_parser.set_defaults(**{k.replace("-", "_"): v for k, v in config.items()})
        args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (TrustCIError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
