"""Command-line front end: ``vimsync simulate|linearize|sweep|table39|selftest``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis
from .dae import EquilibriumError, SolverError, find_equilibrium, simulate
from .devices import InitializationError
from .scenario import ConfigError, build_system, data_dir, emit, initial_point, load_config, load_config_dict
from .sync import DegenerateStateError

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_SOLVER, EXIT_ANALYSIS = 0, 1, 2, 3, 4

log = logging.getLogger("vimsync")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return value


def parse_grid(spec: str) -> list[np.ndarray]:
    """Axes separated by ``;``; each is ``start:stop:num`` or a comma list of values."""
    axes = []
    for part in spec.split(";"):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            items = part.split(":")
            if len(items) != 3:
                raise ValueError(f"axis {part!r} must be start:stop:num")
            start, stop, num = float(items[0]), float(items[1]), int(items[2])
            if num < 1:
                raise ValueError(f"axis {part!r} needs num >= 1")
            axes.append(np.linspace(start, stop, num))
        else:
            axes.append(np.array([float(v) for v in part.split(",") if v.strip()]))
    if not axes or any(a.size == 0 for a in axes):
        raise ValueError(f"empty grid specification {spec!r}")
    return axes


DEFAULT_GRIDS = {
    "droop": "0:0.2:40;0:0.1:40",
    "scr": "0.5,0.75,1.0,1.25,1.5,2,3",
    "penetration": "0:0.95:20",
    "rlm": "0.0001:0.002:10;0.01:0.1:10;0.2:1.0:10",
}
GRID_AXES = {"droop": 2, "scr": 1, "penetration": 1, "rlm": 3}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vimsync", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="time-domain simulation to a CSV")
    s.add_argument("--config", required=True)
    s.add_argument("--t-end", type=_positive)
    s.add_argument("--dt", type=_positive)
    s.add_argument("--out", required=True)

    s = sub.add_parser("linearize", help="eigenvalues and participation factors to a CSV")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("sweep", help="stability sweep to a CSV")
    s.add_argument("--config", required=True)
    s.add_argument("--mode", required=True, choices=sorted(GRID_AXES))
    s.add_argument("--grid", help="axes separated by ';', each start:stop:num or a comma list")
    s.add_argument("--out", required=True)

    s = sub.add_parser("table39", help="39-bus generation-portfolio ladder")
    s.add_argument("--rows", default="1:9", help="row range a:b or comma list")
    s.add_argument("--out", required=True)

    s = sub.add_parser("selftest", help="run the built-in invariant checks")
    s.add_argument("--fixtures", help="directory of scenario fixtures to validate (default: shipped)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handler = {
        "simulate": cmd_simulate,
        "linearize": cmd_linearize,
        "sweep": cmd_sweep,
        "table39": cmd_table39,
        "selftest": cmd_selftest,
    }[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print("config error:", file=sys.stderr)
        for path, msg in exc.errors:
            print(f"  {path or '<root>'}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def _load(path):
    return load_config(path)


def cmd_simulate(args) -> int:
    cfg = _load(args.config)
    t_end = args.t_end or cfg.t_end
    opts = cfg.solver if args.dt is None else replace(cfg.solver, dt=args.dt)
    system = build_system(replace(cfg, solver=opts))
    t0 = time.perf_counter()
    try:
        x0, y0 = initial_point(system, cfg)
        ts = simulate(system, t_end, opts, x0, y0, channels=cfg.channels)
    except (SolverError, DegenerateStateError, InitializationError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        partial = getattr(exc, "partial", None)
        if partial is not None:
            partial.to_csv(args.out)
            print(f"partial trace up to t = {partial.times[-1]:.6g} s written to {args.out}", file=sys.stderr)
        return EXIT_SOLVER
    ts.to_csv(args.out)
    print(f"{cfg.name}: {len(ts)} samples, {len(ts.channels)} channels, {time.perf_counter() - t0:.1f} s -> {args.out}")
    return EXIT_OK


def cmd_linearize(args) -> int:
    cfg = _load(args.config)
    system = build_system(cfg)
    try:
        eq = find_equilibrium(system)
        model = analysis.linearize(system, eq.x, eq.y)
    except (EquilibriumError, SolverError, analysis.NotAtEquilibriumError, DegenerateStateError,
            InitializationError) as exc:
        print(f"analysis failure: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    verdict = analysis.classify(model, zero_mode=not analysis.has_angle_reference(system))
    analysis.write_eigen_csv(model, args.out)
    dom = model.dominant()
    top = ", ".join(f"{n} {100 * p:.1f}%" for n, p in model.top_states(dom, 3))
    print(f"{cfg.name}: {len(model.eigenvalues)} modes, max Re = {verdict.max_real:.6g} 1/s ({verdict.label})")
    print(f"  dominant mode {model.eigenvalues[dom]:.6g}: {top}")
    print(f"  cond(dg/dy) = {eq.condition:.3e}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args.config)
    try:
        axes = parse_grid(args.grid or DEFAULT_GRIDS[args.mode])
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if len(axes) != GRID_AXES[args.mode]:
        print(f"usage error: {args.mode} sweep needs {GRID_AXES[args.mode]} grid axes, got {len(axes)}", file=sys.stderr)
        return EXIT_USAGE
    t0 = time.perf_counter()
    try:
        if args.mode == "droop":
            res = analysis.sweep_droop_map(cfg, *axes)
        elif args.mode == "scr":
            res = analysis.sweep_scr(cfg, *axes)
        elif args.mode == "penetration":
            res = analysis.sweep_penetration(cfg, *axes)
        else:
            res = analysis.sweep_rlm_surface(cfg, *axes)
    except (KeyError, ValueError) as exc:
        print(f"analysis failure: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    res.to_csv(args.out)
    for mode in res.modes:
        stable = res.stable(mode)
        print(f"{mode}: {int(stable.sum())}/{stable.size} stable")
    print(f"{res.verdict.size} points in {time.perf_counter() - t0:.1f} s -> {args.out}")
    return EXIT_OK


def _rows(spec: str) -> list[int]:
    if ":" in spec:
        a, b = spec.split(":")
        return list(range(int(a), int(b) + 1))
    return [int(v) for v in spec.split(",")]


def cmd_table39(args) -> int:
    try:
        rows = _rows(args.rows)
    except ValueError:
        print(f"usage error: bad --rows {args.rows!r}", file=sys.stderr)
        return EXIT_USAGE
    if not rows or min(rows) < 1 or max(rows) > len(analysis.TABLE3_ROWS):
        print(f"usage error: rows must lie in 1..{len(analysis.TABLE3_ROWS)}", file=sys.stderr)
        return EXIT_USAGE
    res = analysis.scenario_table(rows)
    res.to_csv(args.out)
    print("row  " + "  ".join(f"{s:>14}" for s in res.verdicts))
    for k, r in enumerate(res.rows):
        print(f"{r:>3}  " + "  ".join(f"{res.verdicts[s][k].verdict:>14}" for s in res.verdicts))
    return EXIT_OK


# --- selftest ------------------------------------------------------------------------------


def _check_slip_oracle():
    from .sync import clamp, saturate_slip

    rng = np.random.default_rng(12345)
    for _ in range(10_000):
        lo = -rng.uniform(1e-6, 0.1)
        hi = rng.uniform(1e-6, 0.1)
        w = rng.uniform(-0.2, 0.2)
        a, b = saturate_slip(w, lo, hi), clamp(w, lo, hi)
        if abs(a - b) > math.ulp(b):
            return False, f"saturate_slip({w}, {lo}, {hi}) = {a} != {b}"
    return True, "10^4 samples within 1 ulp"


def _check_fixtures(directory: Path):
    files = sorted(directory.glob("*.json"))
    if not files:
        return False, f"no fixtures in {directory}"
    for path in files:
        try:
            cfg = load_config(path)
            build_system(cfg)
            if load_config_dict(emit(cfg), path.parent) != cfg:
                return False, f"{path.name}: round trip changed the config"
        except (ConfigError, ValueError, OSError, json.JSONDecodeError) as exc:
            return False, f"{path.name}: {exc}"
    return True, f"{len(files)} fixtures load, build and round-trip"


def _check_trapezoid():
    from .dae import FunctionalSystem, SolveOptions

    sys_ = FunctionalSystem(lambda x, y, t: -x, n_x=1)
    dt = 0.1
    ts = simulate(sys_, dt, SolveOptions(dt=dt, be_steps_after_event=0), np.array([1.0]))
    got = ts["x0"][-1]
    want = (1 - dt / 2) / (1 + dt / 2)
    return abs(got - want) < 1e-12, f"x(dt) = {got:.15f}, expected {want:.15f}"


def _check_linearize():
    from .dae import FunctionalSystem

    sys_ = FunctionalSystem(lambda x, y, t: [y[0]], lambda x, y, t: [y[0] + 2.0 * x[0]], n_x=1, n_y=1)
    model = analysis.linearize(sys_, np.zeros(1), np.zeros(1))
    lam = model.eigenvalues[0]
    return abs(lam + 2.0) < 1e-8, f"eigenvalue {lam:.10g}"


def _check_equilibrium():
    from .scenario import fixture_path

    cfg = load_config(fixture_path("fig2_pll"))
    system = build_system(cfg)
    eq = find_equilibrium(system)
    ch = system.channels(eq.x, eq.y)
    ok = abs(ch["vsc.p_c"] - cfg.device("vsc").params["outer"]["p_set"]) < 1e-6 and math.isfinite(eq.condition)
    return ok, f"p_c = {ch['vsc.p_c']:.9f}, cond(dg/dy) = {eq.condition:.3e}"


def cmd_selftest(args) -> int:
    fixtures = Path(args.fixtures) if args.fixtures else data_dir() / "scenarios"
    checks = [
        ("fixtures", lambda: _check_fixtures(fixtures)),
        ("slip saturation oracle", _check_slip_oracle),
        ("trapezoidal step", _check_trapezoid),
        ("linearization", _check_linearize),
        ("equilibrium", _check_equilibrium),
    ]
    failed = []
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as exc:  # noqa: BLE001 - a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        print(f"{'PASS' if ok else 'FAIL'}  {name:<24} {detail}")
        if not ok:
            failed.append(name)
    if not failed:
        return EXIT_OK
    return EXIT_CONFIG if "fixtures" in failed else EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
