import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from vimsync.core import DqVector
from vimsync.network import (
    Branch,
    PiLine,
    RlLoad,
    SgModel,
    StiffGrid,
    pi_line_derivatives,
    rl_load_derivative,
    sg_derivatives,
    sg_equilibrium,
    sg_injection,
    sg_stator_currents,
    sg_stator_residuals,
    stiff_grid,
    transformer_derivatives,
)


@given(st.floats(0.01, 3.0), st.floats(-2.0, 2.0), st.floats(0.8, 1.2))
def test_rl_load_consumes_requested_power(p, q, v):
    if q < 0:
        with pytest.raises(ValueError):
            RlLoad.from_power(p, q, v)
        return
    load = RlLoad.from_power(p, q, v)
    p_out, q_out = load.power_at(v)
    assert p_out == pytest.approx(p, rel=1e-12)
    assert q_out == pytest.approx(q, rel=1e-12, abs=1e-14)


def test_rl_load_steady_current():
    load = RlLoad.from_power(1.0, 0.5)
    i = 1.0 / complex(load.r_load, load.l_load)
    di = rl_load_derivative(RlLoad(load.r_load, load.l_load, DqVector.from_complex(i)), DqVector(1.0, 0.0), 1.0)
    assert abs(di.d) < 1e-9 and abs(di.q) < 1e-9


@given(st.floats(0.3, 20.0), st.floats(1.0, 20.0))
def test_grid_impedance_matches_scr(scr, x_over_r):
    g = stiff_grid(1.0, 0.0, scr, x_over_r)
    r, x = g.impedance
    assert math.hypot(r, x) == pytest.approx(1.0 / scr, rel=1e-12)
    assert x / r == pytest.approx(x_over_r, rel=1e-12)


def test_infinite_grid_and_terminal_voltage():
    g = StiffGrid(1.02, 0.1)
    assert g.impedance is None
    assert g.terminal_voltage(DqVector(1.0, 0.0)) == g.source
    weak = StiffGrid(1.0, 0.0, scr=2.0, x_over_r=10.0)
    v = weak.terminal_voltage(DqVector(0.5, 0.0))
    r, x = weak.impedance
    assert v.to_complex() == pytest.approx(1.0 - complex(r, x) * 0.5)
    with pytest.raises(ValueError):
        StiffGrid(scr=0.0)


def test_branch_validation():
    with pytest.raises(ValueError):
        Branch(0.01, 0.0)
    with pytest.raises(ValueError):
        Branch(-0.01, 0.1)
    with pytest.raises(ValueError):
        PiLine(0.01, 0.1, 0.0)


@given(st.floats(0.9, 1.1), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_tapped_branch_steady_state(tap, id_, iq):
    br = Branch(0.01, 0.1, tap=tap, i=DqVector(id_, iq))
    v_to = 1.0 + 0j
    v_from = tap * (v_to + complex(br.r, br.l) * complex(id_, iq))
    di = transformer_derivatives(br, DqVector.from_complex(v_from), DqVector.from_complex(v_to), 1.0)
    assert abs(di.d) < 1e-9 and abs(di.q) < 1e-9


def test_pi_line_steady_state():
    line = PiLine(0.014, 0.14, 0.074)
    v1, v2 = 1.0 + 0.05j, 0.98 - 0.02j
    i = (v1 - v2) / complex(line.r_b, line.l_b)
    half = 0.5j * line.c_b
    # external currents feeding the series current plus the half-shunt charging
    i_from = i + half * v1
    i_to = -i + half * v2
    line = PiLine(0.014, 0.14, 0.074, i=DqVector.from_complex(i))
    di, dv1, dv2 = pi_line_derivatives(
        line, DqVector.from_complex(v1), DqVector.from_complex(v2), 1.0,
        DqVector.from_complex(i_from), DqVector.from_complex(i_to),
    )
    for d in (di, dv1, dv2):
        assert max(abs(d.d), abs(d.q)) < 1e-9


@pytest.mark.parametrize("order", [2, 6])
@given(p=st.floats(0.1, 1.0), q=st.floats(-0.3, 0.5), angle=st.floats(-0.5, 0.5))
def test_sg_equilibrium_is_stationary(order, p, q, angle):
    sg = SgModel(order=order)
    v = complex(math.cos(angle), math.sin(angle))
    state, i_dq, sp = sg_equilibrium(sg, v, complex(p, q))
    vt = DqVector.from_complex(v)
    res = sg_stator_residuals(sg, state, i_dq, vt, sp)
    assert abs(res.d) < 1e-12 and abs(res.q) < 1e-12
    i_solved = sg_stator_currents(sg, state, vt, sp)
    assert i_solved.d == pytest.approx(i_dq.d, abs=1e-10)
    derivs = sg_derivatives(sg, state, vt, sp)
    assert max(map(abs, derivs)) < 1e-9
    s = v * sg_injection(i_dq, state[0]).to_complex().conjugate()
    assert s.real == pytest.approx(p, abs=1e-10)
    assert s.imag == pytest.approx(q, abs=1e-10)


def test_sg_validation():
    with pytest.raises(ValueError):
        SgModel(order=4)
    with pytest.raises(ValueError):
        SgModel(h=0.0)
    assert len(SgModel().state_names) == 8
