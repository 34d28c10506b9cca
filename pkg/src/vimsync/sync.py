"""Synchronization units: the virtual induction machine (VIM) and the SRF-PLL.

Both units produce a frame frequency ``omega_s`` (pu) and angle ``theta_s``
from terminal measurements.  Time is in seconds, electrical quantities in pu,
and transfer-function arguments ``s`` in pu frequency (rad/s divided by the
base angular frequency).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core import DqVector, PerUnitBase

OMEGA_BASE = 2.0 * math.pi * 50.0

#: Table I damping of 10 N m s/rad on the 1.5 MW machine base.
_TABLE1_DAMPING = PerUnitBase(s_base=1.5e6).damping_pu(10.0)


class DegenerateStateError(ValueError):
    """Raised when a state violates a division guard of the model."""


@dataclass(frozen=True)
class VimParams:
    h_inertia: float = 5.0
    d_damping: float = _TABLE1_DAMPING
    r_r: float = 0.0005
    l_r: float = 0.05
    l_m: float = 0.6
    omega0_star: float = 1.0
    k_nu_d: float = 0.001
    slip_min: float = -0.01
    slip_max: float = 0.01
    eps_div: float = 0.05

    def __post_init__(self):
        problems = []
        if not self.h_inertia > 0:
            problems.append(f"h_inertia must be > 0, got {self.h_inertia}")
        for name in ("r_r", "l_r", "l_m"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0, got {getattr(self, name)}")
        if not self.d_damping >= 0:
            problems.append(f"d_damping must be >= 0, got {self.d_damping}")
        if not (self.slip_min < 0 < self.slip_max):
            problems.append(f"need slip_min < 0 < slip_max, got ({self.slip_min}, {self.slip_max})")
        if not self.eps_div > 0:
            problems.append(f"eps_div must be > 0, got {self.eps_div}")
        if not self.omega0_star > 0:
            problems.append(f"omega0_star must be > 0, got {self.omega0_star}")
        if problems:
            raise ValueError("invalid VimParams: " + "; ".join(problems))

    @property
    def rotor_rate(self) -> float:
        """Proportional slip gain R_r/L_r (pu)."""
        return self.r_r / self.l_r


@dataclass(frozen=True)
class VimState:
    tau_e: float = 0.0
    delta_omega_r: float = 0.0


@dataclass(frozen=True)
class VimAlgebraic:
    phi: float = 0.0
    phi_d: float = 0.0
    phi_q: float = 0.0
    omega_nu_tilde: float = 0.0
    omega_nu: float = 0.0
    omega_s: float = 1.0

    def as_tuple(self) -> tuple[float, ...]:
        return (self.phi, self.phi_d, self.phi_q, self.omega_nu_tilde, self.omega_nu, self.omega_s)


@dataclass(frozen=True)
class PllParams:
    k_p: float = 0.5
    k_i: float = 20.0
    omega0: float = 1.0

    def __post_init__(self):
        if not (self.k_p > 0 and self.k_i > 0):
            raise ValueError(f"PLL gains must be > 0, got k_p={self.k_p}, k_i={self.k_i}")


@dataclass(frozen=True)
class PllState:
    epsilon: float = 0.0
    theta_s: float = 0.0


@dataclass(frozen=True)
class TransformerParams:
    r_t: float = 0.01
    l_t: float = 0.05


def wrap_angle(theta: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return (theta + math.pi) % (2.0 * math.pi) - math.pi


# --- transfer functions --------------------------------------------------------


def k_psi_eval(s: complex, params: VimParams) -> complex:
    """Rotor-flux transfer function R_r L_m / (R_r + s L_r)."""
    if math.isinf(abs(s)):
        return 0j
    den = params.r_r + s * params.l_r
    if den == 0:
        raise ZeroDivisionError(f"K_psi has a pole at s = {-params.rotor_rate}")
    return params.r_r * params.l_m / den


def k_e_eval(s: complex, params: VimParams, si_mode: bool = False) -> complex:
    """Torque transfer function (L_m/L_r) K_psi(s), times 3/2 when ``si_mode`` is set."""
    k_pf = 1.5 if si_mode else 1.0
    return k_pf * (params.l_m / params.l_r) * k_psi_eval(s, params)


# --- slip saturation ----------------------------------------------------------


def _two_sum(a: float, b: float) -> tuple[float, float]:
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _half_sum_abs(a: float, b: float, sign: float) -> float:
    # (a + b + sign*|b - a|) / 2 with |b - a| carried as an unevaluated sum,
    # so the result is the exact max (sign=+1) or min (sign=-1).
    s, e = _two_sum(b, -a)
    if s < 0 or (s == 0 and e < 0):
        s, e = -s, -e
    return 0.5 * math.fsum((a, b, sign * s, sign * e))


def smooth_max(a: float, b: float) -> float:
    """max{a, b} = (a + b + |b - a|) / 2."""
    return _half_sum_abs(a, b, 1.0)


def smooth_min(a: float, b: float) -> float:
    """min{a, b} = (a + b - |b - a|) / 2."""
    return _half_sum_abs(a, b, -1.0)


def saturate_slip(omega_nu_tilde: float, slip_min: float, slip_max: float) -> float:
    """Saturate the slip with the nested min/max expression.

    The lower bound is applied first, ``w_hat = max{w, lo}``, then the upper
    bound ``min{w_hat, hi}``; both are written with absolute values as in the
    algebraic DAE form.  Each half-sum is evaluated with compensated summation,
    so the result equals ``min(max(w, lo), hi)`` exactly in floating point.
    """
    if not slip_min < slip_max:
        raise ValueError(f"need slip_min < slip_max, got ({slip_min}, {slip_max})")
    w_hat = smooth_max(omega_nu_tilde, slip_min)
    return smooth_min(w_hat, slip_max)


def clamp(x: float, lo: float, hi: float) -> float:
    return max(lo, min(x, hi))


# --- VIM ----------------------------------------------------------------------


def safe_denominator(i_d: float, eps: float) -> float:
    """sign(i_d) * max(|i_d|, eps), with sign(0) = +1."""
    mag = max(abs(i_d), eps)
    return -mag if i_d < 0 else mag


def vim_derivatives(
    state: VimState,
    v_f: DqVector,
    i_g: DqVector,
    params: VimParams,
    omega_base: float = OMEGA_BASE,
    si_mode: bool = False,
) -> tuple[float, float]:
    """Time derivatives of the electrical torque and the rotor speed deviation.

    Returns ``(d tau_e/dt, d delta_omega_r/dt)`` in pu/s.  The torque state is
    a first-order lag with DC gain K_e(0) on ``i_d * i_q``; the rotor obeys the
    pu swing equation ``2H d(dw)/dt = p/(w0 + dw) - tau_e - D dw``.
    """
    omega_r = params.omega0_star + state.delta_omega_r
    if not omega_r > params.eps_div:
        raise DegenerateStateError(f"rotor speed {omega_r} below division guard {params.eps_div}")
    k_pf = 1.5 if si_mode else 1.0
    rate = params.rotor_rate
    gain = k_pf * params.r_r * params.l_m**2 / params.l_r**2
    d_tau = omega_base * (-rate * state.tau_e + gain * i_g.d * i_g.q)
    p_c = v_f.d * i_g.d + v_f.q * i_g.q
    tau_m = p_c / omega_r
    d_dw = (tau_m - state.tau_e - params.d_damping * state.delta_omega_r) / (2.0 * params.h_inertia)
    return d_tau, d_dw


def transformer_current_derivative(
    v_f: DqVector,
    v_t: DqVector,
    i_g: DqVector,
    omega_s: float,
    net: TransformerParams,
    omega_base: float = OMEGA_BASE,
) -> DqVector:
    """di_g/dt of the output transformer in a frame rotating at ``omega_s`` (pu/s)."""
    k = omega_base / net.l_t
    r = net.r_t * k
    w = omega_base * omega_s
    # -w * j i_g = -w * (-i_q, i_d)
    return DqVector(
        k * (v_f.d - v_t.d) - r * i_g.d + w * i_g.q,
        k * (v_f.q - v_t.q) - r * i_g.q - w * i_g.d,
    )


def vim_slip_terms(
    i_g: DqVector,
    phi: float,
    params: VimParams,
    omega_base: float = OMEGA_BASE,
) -> float:
    """Unsaturated slip (R_r/L_r) i_q/i_d + k_nu_d * phi / omega_base."""
    den = safe_denominator(i_g.d, params.eps_div)
    return params.rotor_rate * i_g.q / den + params.k_nu_d * phi / omega_base


def vim_algebraic_residuals(
    state: VimState,
    alg: VimAlgebraic,
    v_f: DqVector,
    i_g: DqVector,
    v_t: DqVector,
    net: TransformerParams,
    params: VimParams,
    omega_base: float = OMEGA_BASE,
) -> list[float]:
    """Residuals of (phi_d, phi_q, phi, omega_nu_tilde, omega_nu, omega_s)."""
    di = transformer_current_derivative(v_f, v_t, i_g, alg.omega_s, net, omega_base)
    den = safe_denominator(i_g.d, params.eps_div)
    quotient_rate = alg.phi_q / den - i_g.q * alg.phi_d / (den * den)
    slip = vim_slip_terms(i_g, alg.phi, params, omega_base)
    return [
        alg.phi_d - di.d,
        alg.phi_q - di.q,
        alg.phi - quotient_rate,
        alg.omega_nu_tilde - slip,
        alg.omega_nu - saturate_slip(alg.omega_nu_tilde, params.slip_min, params.slip_max),
        alg.omega_s - (params.omega0_star + state.delta_omega_r + alg.omega_nu),
    ]


def solve_vim_algebraic(
    state: VimState,
    v_f: DqVector,
    i_g: DqVector,
    v_t: DqVector,
    net: TransformerParams,
    params: VimParams,
    omega_base: float = OMEGA_BASE,
    tol: float = 1e-13,
    max_iter: int = 50,
) -> VimAlgebraic:
    """Solve the algebraic loop of the VIM for given states and measurements.

    Every algebraic variable is an affine function of ``omega_s`` up to the
    saturation, so the loop reduces to a scalar piecewise-linear equation
    ``omega_s = h(omega_s)`` that secant iteration solves in a few steps.
    """

    def h(omega_s):
        di = transformer_current_derivative(v_f, v_t, i_g, omega_s, net, omega_base)
        den = safe_denominator(i_g.d, params.eps_div)
        phi = di.q / den - i_g.q * di.d / (den * den)
        w_tilde = vim_slip_terms(i_g, phi, params, omega_base)
        w_nu = saturate_slip(w_tilde, params.slip_min, params.slip_max)
        return params.omega0_star + state.delta_omega_r + w_nu, (di, phi, w_tilde, w_nu)

    w0 = params.omega0_star + state.delta_omega_r
    r0 = h(w0)[0] - w0
    w1 = w0 + r0
    for _ in range(max_iter):
        r1 = h(w1)[0] - w1
        if abs(r1) < tol:
            break
        slope = (r1 - r0) / (w1 - w0) if w1 != w0 else -1.0
        if slope == 0:
            slope = -1.0
        w0, r0 = w1, r1
        w1 = w1 - r1 / slope
    _, (di, phi, w_tilde, w_nu) = h(w1)
    return VimAlgebraic(phi, di.d, di.q, w_tilde, w_nu, w1)


# --- PLL ----------------------------------------------------------------------


def pll_frequency(state: PllState, v_f: DqVector, params: PllParams) -> float:
    """omega_s = omega0 + K_P v_q + K_I epsilon."""
    return params.omega0 + params.k_p * v_f.q + params.k_i * state.epsilon


def pll_derivatives(
    state: PllState,
    v_f: DqVector,
    params: PllParams,
    omega_base: float = OMEGA_BASE,
    omega_frame: float = 0.0,
) -> tuple[float, float]:
    """Returns ``(d epsilon/dt, d theta_s/dt)``.

    ``v_f`` must be expressed in the PLL's own frame.  ``omega_frame`` is the
    speed of the frame ``theta_s`` is measured against (0 for an absolute angle).
    """
    omega_s = pll_frequency(state, v_f, params)
    return v_f.q, omega_base * (omega_s - omega_frame)
