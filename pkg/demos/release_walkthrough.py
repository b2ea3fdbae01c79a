"""Walk one release through build, test and audit, then check it as a consumer would.

    python3 demos/release_walkthrough.py
"""

import sys
import tempfile
from pathlib import Path

from trustci import Workspace
from trustci.engine import export_bundle
from trustci.ledger import revoke
from trustci.verifier import full_audit, load_bundle, quick_verify


def main() -> int:
    root = Path(tempfile.mkdtemp(prefix="trustci-demo-"))
    ws = Workspace.init(root)
    print(f"workspace: {root}")

    run = ws.run(trigger=b"release v1.0.0")
    print(f"pipeline {run.pipeline_id.hex[:16]}: {run.status}")
    for rec in run.records:
        print(f"  stage {rec.stage_index} {rec.task_id:<10} {rec.act.action:<8} "
              f"ledger #{rec.commitment.index}")
    print(f"  deploy record at ledger #{run.deploy_commitment.index}")
    print(f"artifact {run.artifact_digest.hex}")

    pub = ws.keystore.public()
    q = quick_verify(run.artifact_digest, run.final_actioned, run.commitments[-1], ws.ledger.head,
                     run.policy, pub, ws.ledger)
    print(f"quick check:  {q.verdict} ({q.checks_performed} checks)")
    bundle = export_bundle(run)
    full = full_audit(load_bundle(bundle), ws.ledger, run.policy, pub, run.envs)
    print(f"full audit:   {full.verdict} ({full.checks_performed} checks over a {len(bundle)}-byte bundle)")

    revoke(run.commitments[-1], "signing host compromised", ws.ledger)
    q = quick_verify(run.artifact_digest, run.final_actioned, run.commitments[-1], ws.ledger.head,
                     run.policy, pub, ws.ledger)
    print(f"after revocation the quick check says {q.verdict}: {'; '.join(f'{loc}: {kind}' for loc, kind in q.findings)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
