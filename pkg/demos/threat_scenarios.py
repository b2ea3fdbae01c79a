"""Three attacks against the pipeline and what stops each of them.

    python3 demos/threat_scenarios.py

1. A build step is modified inside the runner after setup.
2. A release pulls in a dependency with a known HIGH severity advisory.
3. Someone with write access edits a past ledger entry.
"""

import json
import sys
import tempfile
from pathlib import Path

from trustci.scenarios import SCENARIOS, simulate_scenario

TITLES = {
    "s1": "tampered runner",
    "s2": "vulnerable dependency",
    "s3": "rewritten ledger history",
}


def main() -> int:
    root = Path(tempfile.mkdtemp(prefix="trustci-threats-"))
    failures = 0
    for kind in SCENARIOS:
        report = simulate_scenario(kind, root)
        failures += not report["pass"]
        print(f"{kind} {TITLES[kind]}: expected {report['expected']!r}, observed {report['observed']!r}")
        print("   " + json.dumps({k: v for k, v in report.items() if k not in ("scenario", "pass")}, ensure_ascii=False))
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
