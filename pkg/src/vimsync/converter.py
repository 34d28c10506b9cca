"""Converter control blocks and the averaged electrical interface.

All functions work on the converter's own per-unit base and in the
converter's local dq frame.  Rotation by ``j`` follows ``core.rotate90``;
every inductor and capacitor therefore carries a ``-omega * j`` coupling term.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from .core import DqVector
from .sync import OMEGA_BASE

EPS_V = 0.01


class DegenerateVoltageWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class FollowingOuterParams:
    k_i_p: float = 10.0
    k_i_q: float = 10.0
    r_p: float = 0.02
    r_q: float = 0.01
    p_set: float = 0.5
    q_set: float = 0.0
    v_set: float = 1.0
    omega_set: float = 1.0

    def __post_init__(self):
        if min(self.k_i_p, self.k_i_q, self.r_p, self.r_q) < 0:
            raise ValueError("outer-loop gains and droops must be >= 0")
        if not self.v_set > 0:
            raise ValueError(f"v_set must be > 0, got {self.v_set}")


@dataclass(frozen=True)
class FollowingOuterState:
    p_tilde: float = 0.0
    q_tilde: float = 0.0


@dataclass(frozen=True)
class FormingParams:
    r_p: float = 0.02
    r_q: float = 0.01
    omega_z: float = 2.0 * math.pi * 5.0
    p_set: float = 0.5
    q_set: float = 0.0
    v_set: float = 1.0
    omega_set: float = 1.0

    def __post_init__(self):
        if not self.omega_z > 0:
            raise ValueError(f"omega_z must be > 0, got {self.omega_z}")
        if min(self.r_p, self.r_q) < 0:
            raise ValueError("droop gains must be >= 0")


@dataclass(frozen=True)
class FilterParams:
    r_f: float = 0.03
    l_f: float = 0.08
    c_f: float = 0.074


@dataclass(frozen=True)
class FilterState:
    i_f: DqVector = DqVector(0.0, 0.0)
    v_f: DqVector = DqVector(0.0, 0.0)


@dataclass(frozen=True)
class CurrentControlGains:
    k_p: float = 0.74
    k_i: float = 1.19
    # back-calculation anti-windup time constant [s]
    t_aw: float = 0.01
    # modulation bound on |v_sw| at nominal DC voltage
    v_max: float = 1.3


@dataclass(frozen=True)
class VoltageControlGains:
    k_p: float = 0.52
    k_i: float = 1.161
    k_ff: float = 1.0


@dataclass(frozen=True)
class DcLinkParams:
    c_dc: float = 0.008
    k_p: float = 0.01
    k_i: float = 1.0
    v_dc_ref: float = 1.0
    v_dc_min: float = 0.3


# --- system level ---------------------------------------------------------------


def following_outer_derivatives(
    state: FollowingOuterState,
    meas: tuple[float, float, float, float],
    params: FollowingOuterParams,
) -> tuple[float, float]:
    """Power-loop integrators with P-f and Q-V droop.

    ``meas`` is ``(p_c, q_c, |v_f|, omega_s)``.
    """
    p_c, q_c, v_mag, omega_s = meas
    dp = params.k_i_p * (params.p_set - p_c - params.r_p * (omega_s - params.omega_set))
    dq = params.k_i_q * (params.q_set - q_c - params.r_q * (v_mag - params.v_set))
    return dp, dq


def current_reference_floored(p_tilde: float, q_tilde: float, v_f: DqVector, eps_v: float = EPS_V) -> DqVector:
    """Power-to-current transformation with the voltage magnitude floored at ``eps_v``."""
    v_mag = max(math.hypot(v_f.d, v_f.q), eps_v)
    return DqVector(
        (v_f.d * p_tilde + v_f.q * q_tilde) / v_mag,
        (v_f.q * p_tilde - v_f.d * q_tilde) / v_mag,
    )


def current_reference(
    p_tilde: float,
    q_tilde: float,
    v_f: DqVector,
    eps_v: float = EPS_V,
    previous: DqVector | None = None,
) -> DqVector:
    """Current reference from the internal power references.

    Below ``eps_v`` the division is singular; the previous reference is held
    and a ``DegenerateVoltageWarning`` is issued.  Without a previous value a
    ``ValueError`` is raised.
    """
    if math.hypot(v_f.d, v_f.q) < eps_v:
        if previous is None:
            raise ValueError(f"|v_f| below {eps_v} and no previous reference to hold")
        warnings.warn(f"|v_f| below {eps_v}; holding previous current reference", DegenerateVoltageWarning)
        return previous
    return current_reference_floored(p_tilde, q_tilde, v_f, eps_v)


def limit_current(i_ref: DqVector, i_max: float) -> DqVector:
    """Scale the reference down to ``i_max`` while keeping its angle."""
    mag = math.hypot(i_ref.d, i_ref.q)
    if mag <= i_max:
        return i_ref
    k = i_max / mag
    return DqVector(k * i_ref.d, k * i_ref.q)


def forming_droop_derivatives(
    state: tuple[float, float, float],
    meas: tuple[float, float],
    params: FormingParams,
    omega_base: float = OMEGA_BASE,
    omega_frame: float = 0.0,
) -> tuple[float, float, float, float, float]:
    """Grid-forming droop with low-pass filtered power measurements.

    ``state`` is ``(p_filt, q_filt, theta_c)`` and ``meas`` is ``(p_c, q_c)``.
    Returns ``(dp_filt, dq_filt, dtheta_c, omega_c, v_c_d)``; ``v_c_q`` is zero.
    """
    p_filt, q_filt, _ = state
    p_c, q_c = meas
    dp = params.omega_z * (p_c - p_filt)
    dq = params.omega_z * (q_c - q_filt)
    omega_c = params.omega_set + params.r_p * (params.p_set - p_filt)
    v_cd = params.v_set + params.r_q * (params.q_set - q_filt)
    return dp, dq, omega_base * (omega_c - omega_frame), omega_c, v_cd


# --- device level ---------------------------------------------------------------


def current_controller(
    i_ref: DqVector,
    i_f: DqVector,
    v_f: DqVector,
    xi: DqVector,
    gains: CurrentControlGains,
    omega: float,
    l_f: float,
    v_limit: float | None = None,
) -> tuple[DqVector, DqVector, bool]:
    """SRF PI current controller with voltage feed-forward and decoupling.

    Returns the (limited) switch voltage reference, the integrator derivative
    and a saturation flag.  ``v_limit`` defaults to ``gains.v_max``.
    """
    e_d = i_ref.d - i_f.d
    e_q = i_ref.q - i_f.q
    # +omega l_f j i_f cancels the filter's -omega l_f j i_f coupling
    v_d = v_f.d + gains.k_p * e_d + gains.k_i * xi.d - omega * l_f * i_f.q
    v_q = v_f.q + gains.k_p * e_q + gains.k_i * xi.q + omega * l_f * i_f.d
    limit = gains.v_max if v_limit is None else v_limit
    mag = math.hypot(v_d, v_q)
    if mag > limit:
        k = limit / mag
        vs_d, vs_q = k * v_d, k * v_q
        aw = 1.0 / (gains.k_i * gains.t_aw)
        dxi = DqVector(e_d + aw * (vs_d - v_d), e_q + aw * (vs_q - v_q))
        return DqVector(vs_d, vs_q), dxi, True
    return DqVector(v_d, v_q), DqVector(e_d, e_q), False


def voltage_controller(
    v_ref: DqVector,
    v_f: DqVector,
    i_g: DqVector,
    zeta: DqVector,
    gains: VoltageControlGains,
    omega: float,
    c_f: float,
) -> tuple[DqVector, DqVector]:
    """Filter-voltage PI producing the filter-current reference (forming mode)."""
    e_d = v_ref.d - v_f.d
    e_q = v_ref.q - v_f.q
    i_d = gains.k_p * e_d + gains.k_i * zeta.d + gains.k_ff * i_g.d - omega * c_f * v_f.q
    i_q = gains.k_p * e_q + gains.k_i * zeta.q + gains.k_ff * i_g.q + omega * c_f * v_f.d
    return DqVector(i_d, i_q), DqVector(e_d, e_q)


def dc_link_derivatives(
    v_dc: float,
    chi_dc: float,
    p_c: float,
    gains: DcLinkParams,
    omega_base: float = OMEGA_BASE,
) -> tuple[float, float, float]:
    """DC capacitor balance with a PI on the DC voltage error.

    The DC source current is ``i_dc = K_p e + K_i chi + p_c / v_dc``; the last
    term is a power feed-forward.  Returns ``(dv_dc, dchi_dc, i_dc)``.
    """
    if not v_dc > 0:
        raise ValueError(f"v_dc must be > 0, got {v_dc}")
    err = gains.v_dc_ref - v_dc
    load = p_c / v_dc
    i_dc = gains.k_p * err + gains.k_i * chi_dc + load
    dv = omega_base / gains.c_dc * (i_dc - load)
    return dv, err, i_dc


def filter_derivatives(
    filt: FilterState,
    v_sw: DqVector,
    i_g: DqVector,
    omega: float,
    params: FilterParams,
    omega_base: float = OMEGA_BASE,
) -> tuple[DqVector, DqVector]:
    """LC filter in a frame rotating at ``omega`` (pu). Returns ``(di_f/dt, dv_f/dt)``."""
    i_f, v_f = filt.i_f, filt.v_f
    kl = omega_base / params.l_f
    kc = omega_base / params.c_f
    w = omega_base * omega
    di = DqVector(
        kl * (v_sw.d - v_f.d - params.r_f * i_f.d) + w * i_f.q,
        kl * (v_sw.q - v_f.q - params.r_f * i_f.q) - w * i_f.d,
    )
    dv = DqVector(
        kc * (i_f.d - i_g.d) + w * v_f.q,
        kc * (i_f.q - i_g.q) - w * v_f.d,
    )
    return di, dv
