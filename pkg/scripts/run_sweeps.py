"""Small-signal sweeps on the 3-bus system: droop map, SCR, penetration and R_r-L_r-L_m.

    python3 scripts/run_sweeps.py [--out results/sweeps] [--coarse]

Worker count follows VIMSYNC_WORKERS.
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

import numpy as np

from vimsync.analysis import (
    MODES,
    sweep_droop_map,
    sweep_penetration,
    sweep_rlm_surface,
    sweep_scr,
    threshold,
)
from vimsync.scenario import load_fixture


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results/sweeps")
    p.add_argument("--coarse", action="store_true", help="10x10 droop map and 5^3 R-L grid")
    args = p.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = 10 if args.coarse else 40
    m = 5 if args.coarse else 10
    base = load_fixture("fig2_pll")

    jobs = {
        "droop": lambda: sweep_droop_map(base, np.linspace(0, 0.2, n), np.linspace(0, 0.1, n), MODES),
        # converter at rated power so the weak-grid limit is visible
        "scr": lambda: sweep_scr(base.with_param("vsc", "outer.p_set", 1.0),
                                 [0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.35, 1.5, 2, 3, 5, 10]),
        "penetration": lambda: sweep_penetration(base, np.linspace(0.0, 0.95, 20)),
        "rlm": lambda: sweep_rlm_surface(load_fixture("fig2_vim"), np.linspace(1e-4, 2e-3, m),
                                         np.linspace(0.01, 0.1, m), np.linspace(0.2, 1.0, m)),
    }
    for name, job in jobs.items():
        t0 = time.perf_counter()
        res = job()
        res.to_csv(out / f"{name}.csv")
        line = f"{name:12s} {time.perf_counter() - t0:6.1f} s"
        if name in ("scr", "penetration"):
            axis = next(iter(res.axes.values()))
            for mode in res.modes:
                line += f"  {mode}: {threshold(axis, res.trace(mode)):.3g}"
        print(line)


if __name__ == "__main__":
    main()
