import math

import numpy as np
import pytest

from vimsync import build_system, load_fixture
from vimsync.dae import (
    AssemblyError,
    Event,
    FunctionalSystem,
    IndexViolationError,
    InfiniteBus,
    NetBranch,
    PowerSystem,
    SolveOptions,
    algebraic_condition,
    find_equilibrium,
    simulate,
    step,
)
from vimsync.scenario import initial_point


def decay():
    return FunctionalSystem(lambda x, y, t: -x, n_x=1)


def test_trapezoid_step_is_exact_for_linear_decay():
    dt = 0.1
    x1, _ = step(decay(), np.array([1.0]), np.zeros(0), 0.0, dt, SolveOptions(dt=dt, newton_tol=1e-14))
    assert x1[0] == pytest.approx((1 - dt / 2) / (1 + dt / 2), rel=1e-13)


def test_backward_euler_step():
    dt = 0.1
    x1, _ = step(decay(), np.array([1.0]), np.zeros(0), 0.0, dt, SolveOptions(dt=dt, newton_tol=1e-14), method="be")
    assert x1[0] == pytest.approx(1 / (1 + dt), rel=1e-13)


def _forced():
    return FunctionalSystem(lambda x, y, t: np.array([-2.0 * x[0] + math.sin(5 * t), x[0] - x[1] ** 3]), n_x=2)


def test_second_order_convergence():
    sys_ = _forced()
    ref = simulate(sys_, 1.0, SolveOptions(dt=1e-4, newton_tol=1e-14), x0=[1.0, 0.5])
    errs = []
    for dt in (0.02, 0.01, 0.005):
        ts = simulate(sys_, 1.0, SolveOptions(dt=dt, newton_tol=1e-14), x0=[1.0, 0.5])
        errs.append(abs(ts["x0"][-1] - ref["x0"][-1]) + abs(ts["x1"][-1] - ref["x1"][-1]))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.9)


def test_lc_energy_is_conserved():
    # undamped LC tank; the trapezoidal rule conserves quadratic invariants of linear systems
    lc = FunctionalSystem(lambda x, y, t: np.array([x[1], -x[0]]) * 2 * math.pi * 50, n_x=2)
    ts = simulate(lc, 0.2, SolveOptions(dt=1e-4, newton_tol=1e-14), x0=[1.0, 0.0])
    energy = ts["x0"] ** 2 + ts["x1"] ** 2
    assert np.max(np.abs(energy - 1.0)) < 1e-9


def test_algebraic_constraint_holds_along_trajectory():
    dae = FunctionalSystem(lambda x, y, t: -y, lambda x, y, t: y - x**2, n_x=1, n_y=1)
    ts = simulate(dae, 1.0, SolveOptions(dt=1e-3, newton_tol=1e-13), x0=[1.0], y0=[1.0])
    assert np.max(np.abs(ts["y0"] - ts["x0"] ** 2)) < 1e-10
    # x' = -x^2 from 1 gives 1/(1+t)
    assert ts["x0"][-1] == pytest.approx(0.5, rel=1e-6)


def test_singular_algebraic_jacobian_is_rejected():
    dae = FunctionalSystem(lambda x, y, t: -x, lambda x, y, t: 0.0 * y, n_x=1, n_y=1)
    assert not math.isfinite(algebraic_condition(dae, np.array([0.0]), np.array([0.0]))) or \
        algebraic_condition(dae, np.array([0.0]), np.array([0.0])) > 1e14
    with pytest.raises(IndexViolationError):
        find_equilibrium(dae, guess=([0.0], [0.0]), fallback=False)


def test_equilibrium_of_functional_system():
    dae = FunctionalSystem(lambda x, y, t: np.array([y[0] - x[0]]), lambda x, y, t: np.array([y[0] - 2.0]), n_x=1, n_y=1)
    eq = find_equilibrium(dae, guess=([0.0], [0.0]))
    assert eq.x[0] == pytest.approx(2.0)
    assert eq.residual < 1e-10


def test_solve_options_validation():
    with pytest.raises(ValueError):
        SolveOptions(dt=0.0)
    with pytest.raises(ValueError):
        Event(-1.0, "breaker_open")
    with pytest.raises(ValueError):
        Event(1.0, "meteor_strike")


def test_assembly_errors():
    br = NetBranch("L", "1", "2", 0.01, 0.1)
    grid = InfiniteBus("g", "1")
    with pytest.raises(AssemblyError, match="no buses"):
        PowerSystem([], [], [grid])
    with pytest.raises(AssemblyError, match="no devices"):
        PowerSystem(["1", "2"], [br], [])
    with pytest.raises(AssemblyError, match="not connected"):
        PowerSystem(["1", "2", "3"], [br], [grid])
    with pytest.raises(AssemblyError, match="unknown bus"):
        PowerSystem(["1", "2"], [br], [InfiniteBus("g", "9")])
    with pytest.raises(AssemblyError, match="itself"):
        NetBranch("L", "1", "1", 0.01, 0.1)
    with pytest.raises(AssemblyError, match="unknown branch"):
        PowerSystem(["1", "2"], [br], [grid], events=[Event(0.1, "breaker_open", {"branch": "X"})])


@pytest.fixture(scope="module")
def pll_case():
    cfg = load_fixture("fig2_pll")
    system = build_system(cfg)
    x, y = initial_point(system, cfg)
    return cfg, system, x, y


def test_equilibrium_is_preserved(pll_case):
    _, system, x, y = pll_case
    ts = simulate(system, 0.1, SolveOptions(dt=1e-4), x0=x, y0=y)
    drift = max(np.max(np.abs(ts[n] - ts[n][0])) for n in system.x_names)
    assert drift < 1e-6
    assert system.condition_log and all(math.isfinite(c) for c in system.condition_log)


def test_reruns_are_bit_identical(pll_case):
    _, system, x, y = pll_case
    x = x.copy()
    x[system.x_names.index("vsc.p_tilde")] += 0.01
    a = simulate(system, 0.05, SolveOptions(dt=1e-4), x0=x, y0=y)
    b = simulate(system, 0.05, SolveOptions(dt=1e-4), x0=x, y0=y)
    for n in a.names():
        assert np.array_equal(a[n], b[n])


def test_breaker_and_fault_events_are_restored(pll_case):
    cfg, _, _, _ = pll_case
    system = build_system(cfg)
    x, y = initial_point(system, cfg)
    system.events = [
        Event(0.01, "three_phase_fault_on", {"bus": "3"}),
        Event(0.02, "fault_clear", {"bus": "3"}),
        Event(0.03, "breaker_open", {"branch": "L23"}),
    ]
    ts = simulate(system, 0.05, SolveOptions(dt=1e-4), x0=x, y0=y)
    during = ts.window(0.012, 0.019)["bus_3.v_mag"]
    assert np.max(during) < 0.1
    assert abs(ts["L23.i_d"][-1]) < 1e-3 and abs(ts["L23.i_q"][-1]) < 1e-3
    # event-driven mutations are undone after the run
    assert system.open_branches == set() and system.fault_g == {}


def test_setpoint_event_is_restored(pll_case):
    cfg, _, _, _ = pll_case
    system = build_system(cfg)
    x, y = initial_point(system, cfg)
    before = system.device("vsc").config
    system.events = [Event(0.01, "setpoint_step", {"device": "vsc", "param": "p_set", "value": 0.6})]
    simulate(system, 0.02, SolveOptions(dt=1e-4), x0=x, y0=y)
    assert system.device("vsc").config == before


COMMON = ("i_f_d", "i_f_q", "v_f_d", "v_f_q", "i_g_d", "i_g_q", "xi_d", "xi_q")


@pytest.mark.parametrize(
    "fixture, n_x, sync_x, y",
    [
        ("fig2_pll", 16, ("epsilon", "theta"), ()),
        # omega_s is algebraic, so the frame angle is a state of its own
        ("fig2_vim", 17, ("tau_e", "delta_omega_r", "theta"),
         ("phi", "phi_d", "phi_q", "omega_nu_tilde", "omega_nu", "omega_s")),
        ("fig2_forming", 15, ("theta",), ()),
    ],
)
def test_converter_state_roster(fixture, n_x, sync_x, y):
    dev = next(d for d in build_system(load_fixture(fixture)).devices if d.name == "vsc")
    assert dev.n_x == n_x
    assert dev.x_names[: len(COMMON)] == COMMON
    assert dev.x_names[-len(sync_x):] == sync_x
    assert len(set(dev.x_names)) == n_x
    assert dev.y_names == y
