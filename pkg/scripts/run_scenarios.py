"""Simulate every shipped 3-bus scenario and write one CSV per run.

    python3 scripts/run_scenarios.py [--out results/scenarios] [--only fault,islanding]
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

from vimsync.dae import SolverError
from vimsync.scenario import load_fixture, run

SCENARIOS = ("fig2_pll", "fig2_forming", "fig2_vim", "startup", "f0_sensitivity", "fault", "islanding", "loadstep_sg")


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results/scenarios")
    p.add_argument("--only", help="comma-separated subset")
    args = p.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = args.only.split(",") if args.only else SCENARIOS
    for name in names:
        t0 = time.perf_counter()
        try:
            _, ts = run(load_fixture(name))
            status = "ok"
        except SolverError as exc:
            ts, status = exc.partial, f"solver failure: {exc}"
        if ts is not None:
            ts.to_csv(out / f"{name}.csv")
        print(f"{name:16s} {time.perf_counter() - t0:6.1f} s  {status}")


if __name__ == "__main__":
    main()
