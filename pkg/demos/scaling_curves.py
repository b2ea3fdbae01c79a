"""Cumulative consumer-side cost with and without verifiable evidence.

    python3 demos/scaling_curves.py [out_dir]

Writes one CSV per use case and, when matplotlib is installed, an SVG plot.
"""

import sys
from pathlib import Path

from trustci.scaling import COST_TABLE, ScalingScenario, simulate_scaling


def main() -> int:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("scaling-out")
    out.mkdir(parents=True, exist_ok=True)
    print(f"{'use case':<22}{'re-running':>14}{'verifying':>12}  crossover")
    for name, row in COST_TABLE.items():
        curves = simulate_scaling(ScalingScenario(months=12, consumer_growth_per_month=10,
                                                  releases_per_month=1, cost=row))
        curves.to_csv(out / f"{name}.csv")
        try:
            curves.plot_svg(out / f"{name}.svg", title=name)
        except ImportError:
            pass
        print(f"{name:<22}{curves.untrusted_cumulative[-1]:>12.1f} m{curves.trusted_cumulative[-1]:>10.1f} m"
              f"  month {curves.crossover_month}")
    print(f"curves written to {out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
