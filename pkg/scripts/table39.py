"""39-bus generation-portfolio ladder: converters replace G1..Gk, PLL vs VIM.

    python3 scripts/table39.py [--out results/table39.csv]
"""

from __future__ import annotations

import argparse
from pathlib import Path

from vimsync.analysis import scenario_table


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results/table39.csv")
    args = p.parse_args()
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    res = scenario_table()
    res.to_csv(args.out)
    for sync in res.verdicts:
        print(f"{sync:14s} stable rows {sorted(res.stable_rows(sync))}  monotone={res.monotone(sync)}")
    for k, row in enumerate(res.rows):
        cells = "  ".join(f"{s}: {res.verdicts[s][k].verdict:10s} {res.verdicts[s][k].max_real:+.3f}" for s in res.verdicts)
        print(f"row {row}: {cells}")


if __name__ == "__main__":
    main()
