import math
import warnings

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from vimsync.converter import (
    CurrentControlGains,
    DcLinkParams,
    DegenerateVoltageWarning,
    FilterParams,
    FilterState,
    FollowingOuterParams,
    FollowingOuterState,
    FormingParams,
    VoltageControlGains,
    current_controller,
    current_reference,
    current_reference_floored,
    dc_link_derivatives,
    filter_derivatives,
    following_outer_derivatives,
    forming_droop_derivatives,
    limit_current,
    voltage_controller,
)
from vimsync.core import DqVector, instantaneous_power, rotate90

comp = st.floats(-2.0, 2.0, allow_nan=False)


@given(comp, comp, comp, comp)
def test_current_reference_identities(p, q, vd, vq):
    v = DqVector(vd, vq)
    assume(v.norm() > 0.05)
    i = current_reference(p, q, v)
    assert v.dot(i) == pytest.approx(v.norm() * p, abs=1e-12)
    assert v.dot(rotate90(i)) == pytest.approx(v.norm() * q, abs=1e-12)
    # delivered power scales with |v_f|
    p_c, q_c = instantaneous_power(v, i)
    assert p_c == pytest.approx(v.norm() * p, abs=1e-12)
    assert q_c == pytest.approx(v.norm() * q, abs=1e-12)


def test_current_reference_example():
    assert current_reference(0.0, 0.3, DqVector(1.0, 0.0)) == DqVector(0.0, -0.3)
    assert current_reference(0.5, 0.0, DqVector(1.0, 0.0)) == DqVector(0.5, 0.0)


def test_current_reference_near_zero_voltage():
    with pytest.raises(ValueError):
        current_reference(1.0, 0.0, DqVector(0.0, 0.0))
    prev = DqVector(0.2, 0.1)
    with pytest.warns(DegenerateVoltageWarning):
        assert current_reference(1.0, 0.0, DqVector(1e-4, 0.0), previous=prev) == prev
    floored = current_reference_floored(1.0, 0.0, DqVector(1e-4, 0.0))
    assert floored.d == pytest.approx(1e-4 / 0.01)


@given(comp, comp, st.floats(0.1, 2.0))
def test_limit_current(d, q, i_max):
    i = DqVector(d, q)
    out = limit_current(i, i_max)
    assert out.norm() <= i_max * (1 + 1e-12)
    if i.norm() <= i_max:
        assert out == i
    else:
        assert out.d * i.q == pytest.approx(out.q * i.d, abs=1e-12)
        assert out.dot(i) > 0


def test_outer_loop_equilibrium_and_droop_sign():
    p = FollowingOuterParams()
    s = FollowingOuterState()
    dp, dq = following_outer_derivatives(s, (p.p_set, p.q_set, p.v_set, p.omega_set), p)
    assert (dp, dq) == (0.0, 0.0)
    # over-frequency lowers the power reference, over-voltage the reactive one
    dp, dq = following_outer_derivatives(s, (p.p_set, p.q_set, p.v_set + 0.01, p.omega_set + 0.01), p)
    assert dp < 0 and dq < 0


@given(st.floats(-0.5, 1.5), st.floats(-0.5, 0.5))
def test_forming_droop_law(p_filt, q_filt):
    p = FormingParams()
    dp, dq, dth, omega_c, v_cd = forming_droop_derivatives((p_filt, q_filt, 0.0), (p_filt, q_filt), p)
    assert dp == 0.0 and dq == 0.0
    assert omega_c == pytest.approx(p.omega_set + p.r_p * (p.p_set - p_filt))
    assert v_cd == pytest.approx(p.v_set + p.r_q * (p.q_set - q_filt))
    assert dth == pytest.approx(2 * math.pi * 50 * omega_c)


def test_current_controller_feedforward_and_limit():
    g = CurrentControlGains()
    v_f, i_f = DqVector(1.0, 0.0), DqVector(0.5, 0.1)
    v_sw, dxi, sat = current_controller(i_f, i_f, v_f, DqVector(0, 0), g, 1.0, 0.08)
    assert not sat and dxi == DqVector(0.0, 0.0)
    assert v_sw.d == pytest.approx(1.0 - 0.08 * 0.1)
    assert v_sw.q == pytest.approx(0.08 * 0.5)
    v_sw, dxi, sat = current_controller(DqVector(5.0, 0.0), i_f, v_f, DqVector(0, 0), g, 1.0, 0.08)
    assert sat and v_sw.norm() == pytest.approx(g.v_max)
    # anti-windup bleeds the integrator relative to the raw error
    assert dxi.d < 5.0 - 0.5


def test_voltage_controller_tracks_error():
    g = VoltageControlGains()
    i_ref, dz = voltage_controller(DqVector(1.0, 0.0), DqVector(1.0, 0.0), DqVector(0.3, 0.0), DqVector(0, 0), g, 1.0, 0.074)
    assert dz == DqVector(0.0, 0.0)
    assert i_ref.d == pytest.approx(0.3)
    assert i_ref.q == pytest.approx(0.074)


def test_dc_link():
    g = DcLinkParams()
    dv, err, i_dc = dc_link_derivatives(g.v_dc_ref, 0.0, 0.7, g)
    assert dv == 0.0 and err == 0.0 and i_dc == pytest.approx(0.7)
    dv, _, _ = dc_link_derivatives(0.9, 0.0, 0.7, g)
    assert dv > 0
    with pytest.raises(ValueError):
        dc_link_derivatives(0.0, 0.0, 0.7, g)


@given(comp, comp, comp, comp, st.floats(0.95, 1.05))
def test_filter_phasor_steady_state(vfd, vfq, igd, igq, w):
    prm = FilterParams()
    v_f = complex(vfd, vfq)
    i_g = complex(igd, igq)
    i_f = i_g + 1j * w * prm.c_f * v_f
    v_sw = v_f + complex(prm.r_f, w * prm.l_f) * i_f
    di, dv = filter_derivatives(
        FilterState(DqVector.from_complex(i_f), DqVector.from_complex(v_f)),
        DqVector.from_complex(v_sw), DqVector.from_complex(i_g), w, prm,
    )
    assert max(abs(di.d), abs(di.q), abs(dv.d), abs(dv.q)) < 1e-8


def test_no_warning_at_normal_voltage():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        current_reference(0.5, 0.1, DqVector(0.9, 0.1), previous=DqVector(0, 0))
