"""Small-signal analysis: linearization, modal analysis and parameter sweeps."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np
import scipy.linalg

from .core import write_csv_atomic
from .dae import (
    DaeSystem,
    EquilibriumError,
    IndexViolationError,
    InfiniteBus,
    SolverError,
    find_equilibrium,
)
from .devices import InitializationError, StiffSource
from .scenario import (
    BaseSpec,
    DeviceSpec,
    InitSpec,
    NetworkSpec,
    BranchSpec,
    ScenarioConfig,
    build_system,
    data_dir,
)
from .sync import DegenerateStateError

STABILITY_TOL = 1e-6
ZERO_MODE_TOL = 1e-7
WORKERS_ENV = "VIMSYNC_WORKERS"
MODES = ("following_pll", "following_vim", "forming")


class NotAtEquilibriumError(ValueError):
    """Linearization requested away from an equilibrium."""


class AnalysisError(RuntimeError):
    pass


# --- linearization ----------------------------------------------------------------


@dataclass
class LinearModel:
    a_reduced: np.ndarray
    eigenvalues: np.ndarray
    right: np.ndarray
    left: np.ndarray
    participation: np.ndarray
    state_names: tuple[str, ...]
    # modes whose eigenvector matrix is numerically singular get no participation column
    defective: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def max_real(self) -> float:
        return float(np.max(self.eigenvalues.real)) if self.eigenvalues.size else -math.inf

    def dominant(self, k: int | None = None) -> int:
        """Index of the mode with the largest real part (or the ``k``-th largest)."""
        order = np.argsort(-self.eigenvalues.real, kind="stable")
        return int(order[0 if k is None else k])

    def top_states(self, mode: int, n: int = 3) -> list[tuple[str, float]]:
        col = self.participation[:, mode]
        order = np.argsort(-col, kind="stable")[:n]
        return [(self.state_names[i], float(col[i])) for i in order]

    def participation_of(self, mode: int, name: str) -> float:
        return float(self.participation[self.state_names.index(name), mode])


def reduce_dae(fx, fy, gx, gy) -> np.ndarray:
    """Schur complement ``f_x - f_y g_y^-1 g_x`` of a semi-explicit index-1 DAE."""
    if gy.size == 0:
        return np.array(fx, dtype=float)
    cond = np.linalg.cond(gy)
    if not math.isfinite(cond) or cond > 1e14:
        raise IndexViolationError(f"dg/dy is singular (cond = {cond:.3e}); the DAE is not index 1 here")
    return fx - fy @ np.linalg.solve(gy, gx)


def modal_analysis(a: np.ndarray, state_names=None) -> LinearModel:
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    names = tuple(state_names) if state_names is not None else tuple(f"x{k}" for k in range(n))
    lam, vl, vr = scipy.linalg.eig(a, left=True, right=True)
    # normalize so that L^H R = I; participation p_ki = |l_ki r_ki|
    defective = np.zeros(n, dtype=bool)
    scale = np.einsum("ij,ij->j", vl.conj(), vr)
    for i in range(n):
        # left and right eigenvectors of a defective eigenvalue are (near) orthogonal
        if abs(scale[i]) < 1e-10 * np.linalg.norm(vl[:, i]) * np.linalg.norm(vr[:, i]):
            defective[i] = True
            scale[i] = 1.0
    vl = vl / scale.conj()
    model = LinearModel(a, lam, vr, vl, np.zeros((n, n)), names, defective)
    model.participation = participation_factors(model)
    return model


def participation_factors(model: LinearModel) -> np.ndarray:
    """``p_ki = |l_ki r_ki| / sum_k |l_ki r_ki|``; defective modes get a NaN column."""
    raw = np.abs(model.left.conj() * model.right)
    sums = raw.sum(axis=0)
    out = raw / np.where(sums > 0, sums, 1.0)
    if model.defective.size:
        out[:, model.defective] = np.nan
    return out


def linearize(system: DaeSystem, x0, y0, h: float = 1e-6, eq_tol: float = 1e-6) -> LinearModel:
    """Central-difference linearization reduced onto the differential states."""
    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    f, g = system.residuals(x0, y0)
    res = float(max(np.max(np.abs(f), initial=0.0), np.max(np.abs(g), initial=0.0)))
    if not res < eq_tol:
        worst = system.x_names[int(np.argmax(np.abs(f)))] if f.size else "-"
        raise NotAtEquilibriumError(f"point is not an equilibrium: residual {res:.3e} (largest at {worst})")
    fx, fy, gx, gy = system.jacobian(x0, y0, central=True, h=h)
    return modal_analysis(reduce_dae(fx, fy, gx, gy), system.x_names)


# --- classification ---------------------------------------------------------------


@dataclass(frozen=True)
class Verdict:
    stable: bool
    max_real: float
    discarded: int = 0
    ambiguous: bool = False

    @property
    def label(self) -> str:
        return "stable" if self.stable else "unstable"


def classify(model, tol: float = STABILITY_TOL, zero_mode: bool = False, zero_tol: float = ZERO_MODE_TOL) -> Verdict:
    """Stable iff every kept eigenvalue has ``Re < -tol``.

    With ``zero_mode`` one eigenvalue with ``|lambda| < zero_tol`` is dropped as
    the rotational-symmetry mode of a system without an infinite bus; more than
    one such eigenvalue makes the verdict ambiguous (reported unstable).
    """
    lam = model.eigenvalues if isinstance(model, LinearModel) else np.asarray(model)
    lam = np.asarray(lam, dtype=complex)
    discarded = 0
    ambiguous = False
    if zero_mode:
        near = np.flatnonzero(np.abs(lam) < zero_tol)
        if near.size > 1:
            ambiguous = True
        elif near.size == 1:
            lam = np.delete(lam, near)
            discarded = 1
    max_re = float(np.max(lam.real)) if lam.size else -math.inf
    return Verdict(bool(max_re < -tol) and not ambiguous, max_re, discarded, ambiguous)


def has_angle_reference(system) -> bool:
    """True if an infinite bus or stiff source fixes the absolute angle."""
    return any(isinstance(d, (InfiniteBus, StiffSource)) for d in getattr(system, "devices", ()))


@dataclass(frozen=True)
class PointResult:
    verdict: str  # stable, unstable or infeasible
    max_real: float
    dominant: str = ""
    message: str = ""

    @property
    def stable(self) -> bool:
        return self.verdict == "stable"


def analyze(cfg: ScenarioConfig, tol: float = STABILITY_TOL, fallback: bool = True) -> tuple[LinearModel, Verdict]:
    system = build_system(cfg)
    eq = find_equilibrium(system, fallback=fallback)
    model = linearize(system, eq.x, eq.y)
    return model, classify(model, tol, zero_mode=not has_angle_reference(system))


def evaluate_point(cfg: ScenarioConfig, fallback: bool = False) -> PointResult:
    """Equilibrium, linearization and verdict; failures are recorded, not raised.

    Sweeps skip the time-march fallback of the equilibrium search: a point
    whose Newton iteration diverges from the power-flow guess is infeasible.
    """
    try:
        model, verdict = analyze(cfg, fallback=fallback)
    except (EquilibriumError, SolverError, IndexViolationError, NotAtEquilibriumError,
            DegenerateStateError, InitializationError, np.linalg.LinAlgError, ValueError) as exc:
        return PointResult("infeasible", math.nan, "", f"{type(exc).__name__}: {exc}".splitlines()[0][:200])
    dom = model.dominant()
    top = model.top_states(dom, 1)
    return PointResult(verdict.label, verdict.max_real, top[0][0] if top else "")


# --- parallel execution -----------------------------------------------------------------


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def run_jobs(fn, jobs, workers: int | None = None) -> list:
    """Evaluate ``fn`` over ``jobs``; results come back in job order whatever the completion order."""
    jobs = list(jobs)
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(jobs) < 2:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


# --- sweep results ---------------------------------------------------------------------------


@dataclass
class SweepResult:
    name: str
    axes: dict[str, np.ndarray]
    modes: tuple[str, ...]
    verdict: np.ndarray  # shape (n_modes, *grid), strings
    max_real: np.ndarray
    dominant: np.ndarray

    def __post_init__(self):
        shape = (len(self.modes), *(len(v) for v in self.axes.values()))
        for arr in (self.verdict, self.max_real, self.dominant):
            if arr.shape != shape:
                raise ValueError(f"sweep array shape {arr.shape} does not match grid {shape}")

    def stable(self, mode: str) -> np.ndarray:
        return self.verdict[self.modes.index(mode)] == "stable"

    def trace(self, mode: str) -> np.ndarray:
        return self.max_real[self.modes.index(mode)]

    def rows(self):
        names = list(self.axes)
        for m, mode in enumerate(self.modes):
            for idx in product(*(range(len(v)) for v in self.axes.values())):
                point = [float(self.axes[n][i]) for n, i in zip(names, idx)]
                yield [*point, mode, self.verdict[(m, *idx)], float(self.max_real[(m, *idx)]), self.dominant[(m, *idx)]]

    @property
    def header(self) -> list[str]:
        return [*self.axes, "mode", "verdict", "max_re", "dominant_state"]

    def to_csv(self, path) -> None:
        write_csv_atomic(path, self.header, self.rows())


def _grid_sweep(name, axes: dict, modes, make_cfg, workers=None) -> SweepResult:
    axes = {k: np.asarray(v, dtype=float) for k, v in axes.items()}
    shape = tuple(len(v) for v in axes.values())
    keys = [(m, idx) for m in modes for idx in product(*(range(n) for n in shape))]
    cfgs = [make_cfg(m, *(float(axes[a][i]) for a, i in zip(axes, idx))) for m, idx in keys]
    results = run_jobs(evaluate_point, cfgs, workers)
    full = (len(modes), *shape)
    verdict = np.empty(full, dtype=object)
    max_re = np.full(full, np.nan)
    dominant = np.empty(full, dtype=object)
    for (m, idx), r in zip(keys, results):
        k = (modes.index(m), *idx)
        verdict[k] = r.verdict
        max_re[k] = r.max_real
        dominant[k] = r.dominant
    return SweepResult(name, axes, tuple(modes), verdict, max_re, dominant)


# --- scenario manipulation -----------------------------------------------------------------

_COMMON_GROUPS = ("filt", "current", "dc", "trafo")
_LOOP_KEYS = ("r_p", "r_q", "p_set", "q_set", "v_set", "omega_set")


def converter_name(cfg: ScenarioConfig) -> str:
    for d in cfg.devices:
        if d.type in MODES:
            return d.name
    raise KeyError("scenario has no converter")


def set_mode(cfg: ScenarioConfig, mode: str, name: str | None = None) -> ScenarioConfig:
    """Switch a converter between PLL, VIM and forming control, keeping shared parameters."""
    if mode not in MODES:
        raise ValueError(f"unknown converter mode {mode!r}")
    name = name or converter_name(cfg)
    dev = cfg.device(name)
    if dev.type == mode:
        return cfg
    old = dev.params
    loop_old = old.get("droop" if dev.type == "forming" else "outer", {})
    loop = {k: v for k, v in loop_old.items() if k in _LOOP_KEYS}
    params = {g: dict(old[g]) for g in _COMMON_GROUPS if g in old}
    if "i_max" in old:
        params["i_max"] = old["i_max"]
    if mode == "forming":
        params["droop"] = loop
    else:
        params["outer"] = loop
        for k in ("omega_ref", "eps_v"):
            if k in old and dev.type != "forming":
                params[k] = old[k]
    return cfg.with_device(name, type=mode, params=params)


def loop_group(cfg: ScenarioConfig, name: str) -> str:
    return "droop" if cfg.device(name).type == "forming" else "outer"


def sweep_droop_map(template: ScenarioConfig, rp_grid, rq_grid, modes=MODES, workers=None) -> SweepResult:
    if min(np.min(rp_grid), np.min(rq_grid)) < 0:
        raise ValueError("droop grids must be >= 0")
    name = converter_name(template)

    def make(mode, r_p, r_q):
        cfg = set_mode(template, mode, name)
        group = loop_group(cfg, name)
        return cfg.with_param(name, f"{group}.r_p", r_p).with_param(name, f"{group}.r_q", r_q)

    return _grid_sweep("droop_map", {"r_p": rp_grid, "r_q": rq_grid}, modes, make, workers)


def _grid_device(cfg: ScenarioConfig) -> str:
    for d in cfg.devices:
        if d.type == "stiff_grid":
            return d.name
    raise KeyError("scenario has no stiff_grid device")


def sweep_scr(template: ScenarioConfig, mu_grid, modes=MODES, workers=None) -> SweepResult:
    if np.min(mu_grid) <= 0:
        raise ValueError("SCR values must be > 0")
    name = converter_name(template)
    grid = _grid_device(template)

    def make(mode, mu):
        return set_mode(template, mode, name).with_param(grid, "scr", mu)

    return _grid_sweep("scr", {"scr": mu_grid}, modes, make, workers)


def penetration_case(template: ScenarioConfig, eta: float, mode: str, s_total: float = 2.0) -> ScenarioConfig:
    """Stiff grid replaced by an SG; converter and SG capacities split as ``eta : 1 - eta``."""
    if not 0.0 <= eta < 1.0:
        raise ValueError(f"penetration must be in [0, 1), got {eta}")
    name = converter_name(template)
    grid = template.device(_grid_device(template))
    sg = DeviceSpec("sg", "sg", grid.bus, (1.0 - eta) * s_total, {"slack": True, "v_set": 1.0})
    devices = []
    for d in set_mode(template, mode, name).devices:
        if d.name == grid.name:
            devices.append(sg)
        elif d.name == name:
            if eta > 0:
                devices.append(replace(d, rating=eta * s_total))
        else:
            devices.append(d)
    return replace(template, devices=tuple(devices), events=(), init=InitSpec())


def sweep_penetration(template: ScenarioConfig, eta_grid, modes=MODES, s_total: float = 2.0, workers=None) -> SweepResult:
    def make(mode, eta):
        return penetration_case(template, eta, mode, s_total)

    return _grid_sweep("penetration", {"eta": eta_grid}, modes, make, workers)


def threshold(axis, max_re) -> float:
    """Axis value where the max-Re trace first crosses zero (linear interpolation); NaN if never."""
    axis = np.asarray(axis, dtype=float)
    max_re = np.asarray(max_re, dtype=float)
    bad = ~(max_re < 0)
    if not bad.any():
        return math.nan
    k = int(np.argmax(bad))
    if k == 0:
        return float(axis[0])
    a0, a1, m0, m1 = axis[k - 1], axis[k], max_re[k - 1], max_re[k]
    if not math.isfinite(m1):
        return float(a1)
    return float(a0 + (a1 - a0) * (0.0 - m0) / (m1 - m0))


def sweep_rlm_surface(template: ScenarioConfig, rr_grid, lr_grid, lm_grid, workers=None) -> SweepResult:
    name = converter_name(template)
    base = set_mode(template, "following_vim", name)

    def make(mode, r_r, l_r, l_m):
        return base.with_param(name, "vim.r_r", r_r).with_param(name, "vim.l_r", l_r).with_param(name, "vim.l_m", l_m)

    return _grid_sweep("rlm_surface", {"r_r": rr_grid, "l_r": lr_grid, "l_m": lm_grid}, ("following_vim",), make, workers)


# --- 39-bus ladder -----------------------------------------------------------------------------

# row k replaces generators G1..Gk (buses 30..29+k) by grid-following converters; G10 stays synchronous
TABLE3_ROWS = tuple(tuple(range(1, k + 1)) for k in range(1, 10))
CONVERTER_LOADING = 0.8


def load_network39() -> dict:
    with open(data_dir() / "networks" / "ieee39.json") as fh:
        return json.load(fh)


def ieee39_scenario(row: int | tuple, sync: str = "following_vim", data: dict | None = None) -> ScenarioConfig:
    """Scenario of one ladder row: converters at the listed generator indices, SGs elsewhere."""
    if sync not in ("following_pll", "following_vim"):
        raise ValueError(f"sync must be following_pll or following_vim, got {sync!r}")
    converters = set(TABLE3_ROWS[row - 1] if isinstance(row, int) else row)
    data = data or load_network39()
    s_base = float(data["base_mva"])
    net = NetworkSpec(
        data["name"],
        tuple(data["buses"]),
        tuple(BranchSpec(b["name"], b["from"], b["to"], b.get("r", 0.0), b["l"], b.get("c", 0.0), b.get("tap", 1.0))
              for b in data["branches"]),
        source="ieee39.json",
    )
    gens = data["dispatch"]["generators"]
    devices = []
    for b in data["dispatch"]["loads"]:
        devices.append(DeviceSpec(f"load{b['bus']}", "rl_load", b["bus"], 1.0,
                                  {"p": b["p_mw"] / s_base, "q": b["q_mvar"] / s_base}))
    q_gen = _base_case_reactive(net, devices, gens, s_base)
    for k, g in enumerate(gens, start=1):
        rating = g["p_mw"] / (CONVERTER_LOADING * s_base)
        if k in converters:
            q = q_gen[k - 1] / rating
            devices.append(DeviceSpec(f"G{k}", sync, g["bus"], rating, {
                "outer": {"p_set": CONVERTER_LOADING, "q_set": q, "v_set": g["v_pu"]},
            }))
        else:
            devices.append(DeviceSpec(f"G{k}", "sg", g["bus"], rating, {
                "p_gen": CONVERTER_LOADING, "v_set": g["v_pu"], "slack": k == len(gens),
            }))
    return ScenarioConfig(
        name=f"table3_row{row}" if isinstance(row, int) else "ieee39",
        network=net,
        devices=tuple(devices),
        base=BaseSpec(s_base, 345e3, 50.0),
        t_end=5.0,
        description=f"39-bus system, converters at generators {sorted(converters)}",
    )


def _base_case_reactive(net, loads, gens, s_base) -> list[float]:
    """Generator reactive outputs (system pu) of the all-synchronous power flow."""
    devices = list(loads)
    for k, g in enumerate(gens, start=1):
        rating = g["p_mw"] / (CONVERTER_LOADING * s_base)
        devices.append(DeviceSpec(f"G{k}", "sg", g["bus"], rating,
                                  {"p_gen": CONVERTER_LOADING, "v_set": g["v_pu"], "slack": k == len(gens)}))
    system = build_system(ScenarioConfig("base", net, tuple(devices), BaseSpec(s_base, 345e3, 50.0)))
    _, s_dev = system.power_flow()
    return [s_dev[f"G{k}"].imag for k in range(1, len(gens) + 1)]


@dataclass(frozen=True)
class LadderResult:
    rows: tuple[int, ...]
    verdicts: dict[str, tuple[PointResult, ...]]

    def stable_rows(self, sync: str) -> set[int]:
        return {r for r, v in zip(self.rows, self.verdicts[sync]) if v.stable}

    def monotone(self, sync: str) -> bool:
        flags = [v.stable for v in self.verdicts[sync]]
        return all(a or not b for a, b in zip(flags, flags[1:]))

    def rows_table(self):
        for k, r in enumerate(self.rows):
            yield [r, *(x for s in self.verdicts for x in (self.verdicts[s][k].verdict, self.verdicts[s][k].max_real))]

    @property
    def header(self):
        return ["row", *(x for s in self.verdicts for x in (f"{s}_verdict", f"{s}_max_re"))]

    def to_csv(self, path) -> None:
        write_csv_atomic(path, self.header, self.rows_table())


def scenario_table(rows=None, syncs=("following_pll", "following_vim"), workers=None) -> LadderResult:
    rows = tuple(range(1, len(TABLE3_ROWS) + 1)) if rows is None else tuple(rows)
    data = load_network39()
    cfgs = [ieee39_scenario(r, s, data) for s in syncs for r in rows]
    results = run_jobs(evaluate_point, cfgs, workers)
    n = len(rows)
    return LadderResult(rows, {s: tuple(results[k * n : (k + 1) * n]) for k, s in enumerate(syncs)})


# --- reporting ---------------------------------------------------------------------------------


def eigen_rows(model: LinearModel):
    order = np.lexsort((model.eigenvalues.imag, -model.eigenvalues.real))
    for i in order:
        lam = model.eigenvalues[i]
        if model.defective[i]:
            top, dom = "defective", ""
        else:
            states = model.top_states(int(i), 3)
            dom = states[0][0]
            top = ";".join(f"{n}:{p:.6f}" for n, p in states)
        yield [float(lam.real), float(lam.imag), dom, top]


EIGEN_HEADER = ["re", "im", "dominant_state", "participation_top3"]


def write_eigen_csv(model: LinearModel, path) -> None:
    write_csv_atomic(path, EIGEN_HEADER, eigen_rows(model))
