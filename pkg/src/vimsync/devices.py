"""Device blocks that plug into the assembled network DAE.

A device owns a slice of the differential vector ``x`` and of the algebraic
vector ``y`` and couples to the network through the voltage of one bus.  Its
single entry point ``evaluate(x, y, v)`` returns the state derivatives, the
algebraic residuals and the current it injects into the bus, expressed on the
system base in the global frame.

The global frame rotates at nominal speed.  Converter controls live in a
local frame at angle ``theta`` with respect to it; synchronous machines use
their rotor angle ``delta``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field, fields, is_dataclass, replace

import numpy as np
from scipy.optimize import brentq

from .converter import (
    EPS_V,
    CurrentControlGains,
    DcLinkParams,
    FilterParams,
    FilterState,
    FollowingOuterParams,
    FollowingOuterState,
    FormingParams,
    VoltageControlGains,
    current_controller,
    current_reference_floored,
    dc_link_derivatives,
    filter_derivatives,
    following_outer_derivatives,
    forming_droop_derivatives,
    limit_current,
    voltage_controller,
)
from .core import DqVector, instantaneous_power
from .network import (
    RlLoad,
    SgModel,
    SgSetpoints,
    rl_load_derivative,
    sg_derivatives,
    sg_equilibrium,
    sg_injection,
    sg_stator_currents,
    sg_stator_residuals,
)
from .sync import (
    OMEGA_BASE,
    DegenerateStateError,
    PllParams,
    PllState,
    TransformerParams,
    VimAlgebraic,
    VimParams,
    VimState,
    pll_derivatives,
    pll_frequency,
    safe_denominator,
    saturate_slip,
    vim_algebraic_residuals,
    vim_derivatives,
)


class InitializationError(RuntimeError):
    pass


def _replace_nested(cfg, name: str, value):
    """Return ``cfg`` with the first field called ``name`` (searched depth-first) replaced."""
    names = {f.name for f in fields(cfg)}
    if name in names:
        return replace(cfg, **{name: value}), True
    for f in fields(cfg):
        sub = getattr(cfg, f.name)
        if is_dataclass(sub):
            new_sub, done = _replace_nested(sub, name, value)
            if done:
                return replace(cfg, **{f.name: new_sub}), True
    return cfg, False


class Device:
    """Base class; subclasses set the name lists and implement ``evaluate``."""

    kind = "device"
    x_names: tuple[str, ...] = ()
    y_names: tuple[str, ...] = ()
    angle_states: tuple[str, ...] = ()

    def __init__(self, name: str, bus: str, rating: float = 1.0):
        if not rating > 0:
            raise ValueError(f"device {name!r}: rating must be > 0, got {rating}")
        self.name = name
        self.bus = bus
        self.rating = float(rating)

    @property
    def n_x(self) -> int:
        return len(self.x_names)

    @property
    def n_y(self) -> int:
        return len(self.y_names)

    #: shunt capacitance (system pu) the device adds to its bus
    shunt_capacitance = 0.0

    def evaluate(self, x, y, v: DqVector, omega_base: float = OMEGA_BASE):
        raise NotImplementedError

    def channels(self, x, y, v: DqVector) -> dict[str, float]:
        return {}

    def set_param(self, name: str, value) -> None:
        new, done = _replace_nested(self.config, name, value)
        if not done:
            raise KeyError(f"device {self.name!r} has no parameter {name!r}")
        self.config = new

    # --- equilibrium helpers -------------------------------------------------
    #: power-flow role: "pq" (fixed injection), "pv", "slack" or "load"
    pf_role = "pq"

    def pf_injection(self) -> complex:
        """Complex power injected on the system base in the power flow (PQ devices)."""
        return 0j

    def init_from_terminal(self, v_bus: complex, s_inj: complex) -> tuple[list[float], list[float]]:
        raise NotImplementedError

    def cold_start(self, v_bus: complex) -> tuple[list[float], list[float]]:
        return self.init_from_terminal(v_bus, 0j)


# --- converters ------------------------------------------------------------------


@dataclass(frozen=True)
class FollowingConfig:
    sync: str = "vim"
    outer: FollowingOuterParams = field(default_factory=FollowingOuterParams)
    vim: VimParams = field(default_factory=VimParams)
    pll: PllParams = field(default_factory=PllParams)
    filt: FilterParams = field(default_factory=FilterParams)
    current: CurrentControlGains = field(default_factory=CurrentControlGains)
    dc: DcLinkParams = field(default_factory=DcLinkParams)
    trafo: TransformerParams = field(default_factory=TransformerParams)
    i_max: float = 1.2
    # cut-off of the first-order filter on the current reference [rad/s]
    omega_ref: float = 500.0
    eps_v: float = EPS_V

    def __post_init__(self):
        if self.sync not in ("vim", "pll"):
            raise ValueError(f"sync must be 'vim' or 'pll', got {self.sync!r}")
        if not self.i_max > 0:
            raise ValueError(f"i_max must be > 0, got {self.i_max}")
        if not self.omega_ref > 0:
            raise ValueError(f"omega_ref must be > 0, got {self.omega_ref}")


@dataclass(frozen=True)
class FormingConfig:
    droop: FormingParams = field(default_factory=FormingParams)
    voltage: VoltageControlGains = field(default_factory=VoltageControlGains)
    filt: FilterParams = field(default_factory=FilterParams)
    current: CurrentControlGains = field(default_factory=CurrentControlGains)
    dc: DcLinkParams = field(default_factory=DcLinkParams)
    trafo: TransformerParams = field(default_factory=TransformerParams)
    i_max: float = 1.2


_COMMON = ("i_f_d", "i_f_q", "v_f_d", "v_f_q", "i_g_d", "i_g_q", "xi_d", "xi_q")


def _rot(d: float, q: float, angle: float) -> DqVector:
    c, s = math.cos(angle), math.sin(angle)
    return DqVector(c * d - s * q, s * d + c * q)


def _electrical_chain(cfg, i_ref, i_f, v_f, i_g, xi, v_dc, chi, v_t, omega, omega_base):
    """Current loop, DC link, LC filter and transformer shared by both converter modes."""
    v_sw_ref, dxi, _ = current_controller(i_ref, i_f, v_f, xi, cfg.current, omega, cfg.filt.l_f)
    if not v_dc > cfg.dc.v_dc_min:
        raise DegenerateStateError(f"DC voltage {v_dc} collapsed below {cfg.dc.v_dc_min}")
    k_dc = v_dc / cfg.dc.v_dc_ref
    v_sw = DqVector(k_dc * v_sw_ref.d, k_dc * v_sw_ref.q)
    p_sw = v_sw.d * i_f.d + v_sw.q * i_f.q
    dv_dc, dchi, _ = dc_link_derivatives(v_dc, chi, p_sw, cfg.dc, omega_base)
    di_f, dv_f = filter_derivatives(FilterState(i_f, v_f), v_sw, i_g, omega, cfg.filt, omega_base)
    kt = omega_base / cfg.trafo.l_t
    w = omega_base * omega
    di_g = DqVector(
        kt * (v_f.d - v_t.d - cfg.trafo.r_t * i_g.d) + w * i_g.q,
        kt * (v_f.q - v_t.q - cfg.trafo.r_t * i_g.q) - w * i_g.d,
    )
    # controller integrators run in seconds; only the electrical states carry omega_base
    return di_f, dv_f, di_g, dxi, dv_dc, dchi


def _steady_chain(cfg, v_bus: complex, i_g: complex):
    """Phasor steady state of transformer and LC filter for a given output current."""
    t = cfg.trafo
    f = cfg.filt
    v_f = v_bus + complex(t.r_t, t.l_t) * i_g
    i_f = i_g + 1j * f.c_f * v_f
    v_sw = v_f + complex(f.r_f, f.l_f) * i_f
    return v_f, i_f, v_sw


def _xi_for(cfg, v_sw: complex, v_f: complex, i_f: complex) -> complex:
    # v_sw = v_f + k_i xi + j l_f i_f  (zero tracking error, omega = 1)
    return (v_sw - v_f - 1j * cfg.filt.l_f * i_f) / cfg.current.k_i


class FollowingConverter(Device):
    """Grid-following converter with PLL or VIM synchronization."""

    kind = "following"
    angle_states = ("theta",)

    def __init__(self, name: str, bus: str, rating: float = 1.0, config: FollowingConfig | None = None):
        super().__init__(name, bus, rating)
        self.config = config or FollowingConfig()

    @property
    def sync(self) -> str:
        return self.config.sync

    @property
    def x_names(self):
        tail = ("tau_e", "delta_omega_r", "theta") if self.sync == "vim" else ("epsilon", "theta")
        return _COMMON + ("v_dc", "chi_dc", "p_tilde", "q_tilde", "i_ref_d", "i_ref_q") + tail

    @property
    def y_names(self):
        if self.sync == "vim":
            return ("phi", "phi_d", "phi_q", "omega_nu_tilde", "omega_nu", "omega_s")
        return ()

    @property
    def kind_label(self) -> str:
        return f"following_{self.sync}"

    def _unpack(self, x, v):
        i_f = DqVector(x[0], x[1])
        v_f = DqVector(x[2], x[3])
        i_g = DqVector(x[4], x[5])
        xi = DqVector(x[6], x[7])
        theta = x[-1]
        v_t = _rot(v.d, v.q, -theta)
        return i_f, v_f, i_g, xi, theta, v_t

    def omega_s(self, x, y, v_f: DqVector) -> float:
        if self.sync == "vim":
            return y[5]
        return pll_frequency(PllState(x[14], x[15]), v_f, self.config.pll)

    def evaluate(self, x, y, v, omega_base=OMEGA_BASE):
        cfg = self.config
        i_f, v_f, i_g, xi, theta, v_t = self._unpack(x, v)
        v_dc, chi, p_t, q_t = x[8], x[9], x[10], x[11]
        i_ref = DqVector(x[12], x[13])
        omega_s = self.omega_s(x, y, v_f)
        p_c, q_c = instantaneous_power(v_f, i_g)
        v_mag = math.hypot(v_f.d, v_f.q)
        dp, dq = following_outer_derivatives(FollowingOuterState(p_t, q_t), (p_c, q_c, v_mag, omega_s), cfg.outer)
        i_raw = limit_current(current_reference_floored(p_t, q_t, v_f, cfg.eps_v), cfg.i_max)
        di_ref = (cfg.omega_ref * (i_raw.d - i_ref.d), cfg.omega_ref * (i_raw.q - i_ref.q))
        di_f, dv_f, di_g, dxi, dv_dc, dchi = _electrical_chain(
            cfg, i_ref, i_f, v_f, i_g, xi, v_dc, chi, v_t, omega_s, omega_base
        )
        f = [di_f.d, di_f.q, dv_f.d, dv_f.q, di_g.d, di_g.q, dxi.d, dxi.q, dv_dc, dchi, dp, dq, *di_ref]
        if self.sync == "vim":
            state = VimState(x[14], x[15])
            alg = VimAlgebraic(*y)
            d_tau, d_dw = vim_derivatives(state, v_f, i_g, cfg.vim, omega_base)
            g = vim_algebraic_residuals(state, alg, v_f, i_g, v_t, cfg.trafo, cfg.vim, omega_base)
            f += [d_tau, d_dw, omega_base * (omega_s - 1.0)]
        else:
            d_eps, d_theta = pll_derivatives(PllState(x[14], x[15]), v_f, cfg.pll, omega_base, omega_frame=1.0)
            g = []
            f += [d_eps, d_theta]
        inj = _rot(self.rating * i_g.d, self.rating * i_g.q, theta)
        return f, g, inj

    def channels(self, x, y, v):
        i_f, v_f, i_g, xi, theta, v_t = self._unpack(x, v)
        omega_s = self.omega_s(x, y, v_f)
        p_c, q_c = instantaneous_power(v_f, i_g)
        ch = {
            "p_c": p_c,
            "q_c": q_c,
            "v_f_mag": math.hypot(v_f.d, v_f.q),
            "i_g_mag": math.hypot(i_g.d, i_g.q),
            "omega_s": omega_s,
            "f_s": omega_s * OMEGA_BASE / (2.0 * math.pi),
        }
        if self.sync == "vim":
            ch["f_nu"] = y[4] * 50.0
            ch["delta_f_r"] = x[15] * 50.0
        return ch

    # --- initialization ----------------------------------------------------

    @property
    def pf_role(self):
        return "pq"

    def pf_injection(self) -> complex:
        o = self.config.outer
        return self.rating * complex(o.p_set, o.q_set)

    def _local_angle_vim(self, i_g: complex, p_c: float) -> float:
        """Angle of the output current in the VIM frame from the torque and speed balance."""
        vim = self.config.vim
        mag = abs(i_g)
        gain = vim.l_m**2 / vim.l_r

        def residual(alpha):
            i_d, i_q = mag * math.cos(alpha), mag * math.sin(alpha)
            w_nu = saturate_slip(vim.rotor_rate * i_q / safe_denominator(i_d, vim.eps_div), vim.slip_min, vim.slip_max)
            omega_r = 1.0 - w_nu
            dw = omega_r - vim.omega0_star
            return p_c / omega_r - gain * i_d * i_q - vim.d_damping * dw

        if mag < 1e-9:
            return 0.0
        grid = np.linspace(-math.pi / 2 + 1e-6, math.pi / 2 - 1e-6, 721)
        vals = [residual(a) for a in grid]
        roots = []
        for a0, a1, r0, r1 in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
            if r0 == 0.0:
                roots.append(a0)
            elif r0 * r1 < 0:
                roots.append(brentq(residual, a0, a1, xtol=1e-15, rtol=1e-15))
        if not roots:
            raise InitializationError(
                f"VIM {self.name!r}: no frame angle balances torque for |i_g|={mag:.4g}, p_c={p_c:.4g}"
            )
        # the branch with the d-axis current dominant is the normal operating point
        return min(roots, key=abs)

    def init_from_terminal(self, v_bus: complex, s_inj: complex):
        cfg = self.config
        s = s_inj / self.rating
        i_g = (s / v_bus).conjugate() if abs(v_bus) > 0 else 0j
        v_f, i_f, v_sw = _steady_chain(cfg, v_bus, i_g)
        p_c = (v_f * i_g.conjugate()).real
        if self.sync == "vim":
            alpha = self._local_angle_vim(i_g, p_c)
            theta = cmath.phase(i_g) - alpha if abs(i_g) > 1e-9 else cmath.phase(v_f)
        else:
            theta = cmath.phase(v_f)
        rot = cmath.exp(-1j * theta)
        v_f_l, i_f_l, i_g_l, v_sw_l = v_f * rot, i_f * rot, i_g * rot, v_sw * rot
        vm = abs(v_f_l)
        pq = i_f_l * vm / v_f_l if vm > 0 else 0j
        xi = _xi_for(cfg, v_sw_l, v_f_l, i_f_l)
        x = [
            i_f_l.real, i_f_l.imag, v_f_l.real, v_f_l.imag, i_g_l.real, i_g_l.imag,
            xi.real, xi.imag,
            cfg.dc.v_dc_ref, 0.0, pq.real, -pq.imag, i_f_l.real, i_f_l.imag,
        ]
        if self.sync == "vim":
            vim = cfg.vim
            i_d, i_q = i_g_l.real, i_g_l.imag
            w_tilde = vim.rotor_rate * i_q / safe_denominator(i_d, vim.eps_div)
            w_nu = saturate_slip(w_tilde, vim.slip_min, vim.slip_max)
            dw = 1.0 - vim.omega0_star - w_nu
            tau = vim.l_m**2 / vim.l_r * i_d * i_q
            x += [tau, dw, theta]
            y = [0.0, 0.0, 0.0, w_tilde, w_nu, 1.0]
        else:
            x += [0.0, theta]
            y = []
        return x, y

    def cold_start(self, v_bus: complex):
        """Converter de-energized: filter, controls and sync unit at rest."""
        cfg = self.config
        x = [0.0] * 8 + [cfg.dc.v_dc_ref, 0.0, 0.0, 0.0, 0.0, 0.0]
        if self.sync == "vim":
            x += [0.0, 0.0, 0.0]
            y = [0.0, 0.0, 0.0, 0.0, 0.0, cfg.vim.omega0_star]
        else:
            x += [0.0, 0.0]
            y = []
        return x, y


class FormingConverter(Device):
    """Droop-controlled grid-forming converter with a cascaded voltage and current loop."""

    kind = "forming"
    kind_label = "forming"
    angle_states = ("theta",)
    x_names = _COMMON + ("zeta_d", "zeta_q", "v_dc", "chi_dc", "p_filt", "q_filt", "theta")
    y_names = ()

    def __init__(self, name: str, bus: str, rating: float = 1.0, config: FormingConfig | None = None):
        super().__init__(name, bus, rating)
        self.config = config or FormingConfig()

    def evaluate(self, x, y, v, omega_base=OMEGA_BASE):
        cfg = self.config
        i_f = DqVector(x[0], x[1])
        v_f = DqVector(x[2], x[3])
        i_g = DqVector(x[4], x[5])
        xi = DqVector(x[6], x[7])
        zeta = DqVector(x[8], x[9])
        v_dc, chi, p_filt, q_filt, theta = x[10], x[11], x[12], x[13], x[14]
        v_t = _rot(v.d, v.q, -theta)
        p_c, q_c = instantaneous_power(v_f, i_g)
        dp, dq, dtheta, omega_c, v_cd = forming_droop_derivatives(
            (p_filt, q_filt, theta), (p_c, q_c), cfg.droop, omega_base, omega_frame=1.0
        )
        i_raw, dzeta = voltage_controller(DqVector(v_cd, 0.0), v_f, i_g, zeta, cfg.voltage, omega_c, cfg.filt.c_f)
        i_ref = limit_current(i_raw, cfg.i_max)
        if i_ref is not i_raw:
            aw = 1.0 / (cfg.voltage.k_i * cfg.current.t_aw)
            dzeta = DqVector(dzeta.d + aw * (i_ref.d - i_raw.d), dzeta.q + aw * (i_ref.q - i_raw.q))
        di_f, dv_f, di_g, dxi, dv_dc, dchi = _electrical_chain(
            cfg, i_ref, i_f, v_f, i_g, xi, v_dc, chi, v_t, omega_c, omega_base
        )
        f = [
            di_f.d, di_f.q, dv_f.d, dv_f.q, di_g.d, di_g.q, dxi.d, dxi.q,
            dzeta.d, dzeta.q, dv_dc, dchi, dp, dq, dtheta,
        ]
        inj = _rot(self.rating * i_g.d, self.rating * i_g.q, theta)
        return f, [], inj

    def channels(self, x, y, v):
        v_f = DqVector(x[2], x[3])
        i_g = DqVector(x[4], x[5])
        p_c, q_c = instantaneous_power(v_f, i_g)
        d = self.config.droop
        omega_c = d.omega_set + d.r_p * (d.p_set - x[12])
        return {
            "p_c": p_c,
            "q_c": q_c,
            "v_f_mag": math.hypot(v_f.d, v_f.q),
            "i_g_mag": math.hypot(i_g.d, i_g.q),
            "omega_s": omega_c,
            "f_s": omega_c * OMEGA_BASE / (2.0 * math.pi),
        }

    def pf_injection(self) -> complex:
        d = self.config.droop
        return self.rating * complex(d.p_set, d.q_set)

    def init_from_terminal(self, v_bus: complex, s_inj: complex):
        cfg = self.config
        i_g = (s_inj / self.rating / v_bus).conjugate()
        v_f, i_f, v_sw = _steady_chain(cfg, v_bus, i_g)
        theta = cmath.phase(v_f)
        rot = cmath.exp(-1j * theta)
        v_f_l, i_f_l, i_g_l, v_sw_l = v_f * rot, i_f * rot, i_g * rot, v_sw * rot
        s_c = v_f_l * i_g_l.conjugate()
        xi = _xi_for(cfg, v_sw_l, v_f_l, i_f_l)
        zeta = (i_f_l - cfg.voltage.k_ff * i_g_l - 1j * cfg.filt.c_f * v_f_l) / cfg.voltage.k_i
        x = [
            i_f_l.real, i_f_l.imag, v_f_l.real, v_f_l.imag, i_g_l.real, i_g_l.imag, xi.real, xi.imag,
            zeta.real, zeta.imag, cfg.dc.v_dc_ref, 0.0, s_c.real, s_c.imag, theta,
        ]
        return x, []

    def cold_start(self, v_bus: complex):
        d = self.config.droop
        x = [0.0] * 10 + [self.config.dc.v_dc_ref, 0.0, d.p_set, d.q_set, cmath.phase(v_bus)]
        return x, []


# --- passive and source devices -----------------------------------------------------


class StiffSource(Device):
    """Ideal source behind a series RL impedance (finite short-circuit ratio)."""

    kind = "stiff_grid"
    kind_label = "stiff_grid"
    x_names = ("i_d", "i_q")
    pf_role = "slack"

    def __init__(self, name: str, bus: str, v_mag: float = 1.0, theta: float = 0.0, r: float = 0.0, l: float = 0.1):
        super().__init__(name, bus, 1.0)
        if not l > 0:
            raise ValueError(f"source inductance must be > 0, got {l}")
        self.config = _SourceConfig(v_mag, theta, r, l)

    @property
    def source(self) -> DqVector:
        c = self.config
        return DqVector(c.v_mag * math.cos(c.theta), c.v_mag * math.sin(c.theta))

    def evaluate(self, x, y, v, omega_base=OMEGA_BASE):
        c = self.config
        e = self.source
        k = omega_base / c.l
        di = (
            k * (e.d - v.d - c.r * x[0]) + omega_base * x[1],
            k * (e.q - v.q - c.r * x[1]) - omega_base * x[0],
        )
        return list(di), [], DqVector(x[0], x[1])

    def channels(self, x, y, v):
        p, q = instantaneous_power(v, DqVector(x[0], x[1]))
        return {"p": p, "q": q}

    def init_from_terminal(self, v_bus: complex, s_inj: complex):
        c = self.config
        e = complex(*self.source)
        i = (e - v_bus) / complex(c.r, c.l)
        return [i.real, i.imag], []


@dataclass(frozen=True)
class _SourceConfig:
    v_mag: float
    theta: float
    r: float
    l: float


@dataclass(frozen=True)
class LoadConfig:
    p: float
    q: float


class ImpedanceLoad(Device):
    """Constant-impedance load sized to consume ``p + jq`` (system pu) at 1 pu voltage.

    Inductive loads are a series RL branch with a current state; capacitive
    loads become a conductance in parallel with a shunt capacitor.
    """

    kind = "rl_load"
    kind_label = "rl_load"
    pf_role = "load"

    def __init__(self, name: str, bus: str, p: float, q: float = 0.0):
        super().__init__(name, bus, 1.0)
        self.config = LoadConfig(p, q)
        self._build()

    def _build(self):
        p, q = self.config.p, self.config.q
        if p < 0:
            raise ValueError(f"load {self.name!r}: p must be >= 0, got {p}")
        self.series = q > 0
        if self.series:
            self.model = RlLoad.from_power(p, q)
        else:
            self.model = None

    @property
    def x_names(self):
        return ("i_d", "i_q") if self.series else ()

    @property
    def shunt_capacitance(self):
        return 0.0 if self.series else -self.config.q

    @property
    def conductance(self):
        return 0.0 if self.series else self.config.p

    def set_param(self, name, value):
        was_series = self.series
        super().set_param(name, value)
        self._build()
        if self.series != was_series:
            raise ValueError(f"load {self.name!r}: a step may not change the load between inductive and capacitive")

    def admittance(self) -> complex:
        if self.series:
            return 1.0 / complex(self.model.r_load, self.model.l_load)
        return complex(self.config.p, -self.config.q)

    def evaluate(self, x, y, v, omega_base=OMEGA_BASE):
        if self.series:
            load = RlLoad(self.model.r_load, self.model.l_load, DqVector(x[0], x[1]))
            di = rl_load_derivative(load, v, 1.0, omega_base)
            return [di.d, di.q], [], DqVector(-x[0], -x[1])
        g = self.conductance
        # shunt capacitance is handled by the network as part of the bus
        return [], [], DqVector(-g * v.d, -g * v.q)

    def channels(self, x, y, v):
        if self.series:
            p, q = instantaneous_power(v, DqVector(x[0], x[1]))
        else:
            vm2 = v.d**2 + v.q**2
            p, q = self.config.p * vm2, self.config.q * vm2
        return {"p": p, "q": q}

    def init_from_terminal(self, v_bus: complex, s_inj: complex):
        if self.series:
            i = v_bus * self.admittance()
            return [i.real, i.imag], []
        return [], []


@dataclass(frozen=True)
class SgConfig:
    model: SgModel = field(default_factory=SgModel)
    setpoints: SgSetpoints = field(default_factory=SgSetpoints)
    # power-flow targets
    p_gen: float = 0.5
    v_set: float = 1.0


class SynchronousGenerator(Device):
    kind = "sg"
    kind_label = "sg"
    y_names = ("i_d", "i_q")
    angle_states = ("delta",)

    def __init__(self, name: str, bus: str, rating: float = 1.0, config: SgConfig | None = None, slack: bool = False):
        super().__init__(name, bus, rating)
        self.config = config or SgConfig()
        self.slack = slack

    @property
    def x_names(self):
        return self.config.model.state_names

    @property
    def pf_role(self):
        return "slack" if self.slack else "pv"

    def pf_injection(self) -> complex:
        return complex(self.rating * self.config.p_gen, 0.0)

    def evaluate(self, x, y, v, omega_base=OMEGA_BASE):
        cfg = self.config
        i_dq = DqVector(y[0], y[1])
        f = sg_derivatives(cfg.model, x, v, cfg.setpoints, i_dq, 1.0, omega_base)
        g = list(sg_stator_residuals(cfg.model, x, i_dq, v, cfg.setpoints))
        ig = sg_injection(i_dq, x[0])
        return f, g, DqVector(self.rating * ig.d, self.rating * ig.q)

    def channels(self, x, y, v):
        ig = sg_injection(DqVector(y[0], y[1]), x[0])
        p, q = instantaneous_power(v, ig)
        return {"p": p, "q": q, "omega": x[1], "f": x[1] * 50.0}

    def init_from_terminal(self, v_bus: complex, s_inj: complex):
        state, i_dq, sp = sg_equilibrium(self.config.model, v_bus, s_inj / self.rating)
        self.config = replace(self.config, setpoints=sp)
        return list(state), [i_dq.d, i_dq.q]

    #: name of the setpoint freed when this machine pins the frame angle
    free_param = "p_set"

    def get_free(self) -> float:
        return self.config.setpoints.p_set

    def set_free(self, value: float) -> None:
        self.config = replace(self.config, setpoints=replace(self.config.setpoints, p_set=float(value)))


DEVICE_TYPES = ("following_pll", "following_vim", "forming", "sg", "stiff_grid", "rl_load")
