"""Network elements in a common synchronously rotating frame.

Everything here is on the system per-unit base unless stated otherwise.  A
series element obeys ``(l/w_b) di/dt = v_from - v_to - r i - w l j i`` and a
shunt capacitor ``(c/w_b) dv/dt = i_net - w c j v`` where ``w`` is the frame
speed in pu.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .core import DqVector
from .sync import OMEGA_BASE


@dataclass(frozen=True)
class Branch:
    """Series RL branch (transformer, line series part, source impedance)."""

    r: float
    l: float
    from_bus: str = ""
    to_bus: str = ""
    tap: float = 1.0
    i: DqVector = DqVector(0.0, 0.0)

    def __post_init__(self):
        if not self.l > 0:
            raise ValueError(f"branch inductance must be > 0, got {self.l}")
        if not self.r >= 0:
            raise ValueError(f"branch resistance must be >= 0, got {self.r}")
        if not self.tap > 0:
            raise ValueError(f"tap ratio must be > 0, got {self.tap}")


@dataclass(frozen=True)
class PiLine:
    r_b: float
    l_b: float
    c_b: float
    from_bus: str = ""
    to_bus: str = ""
    i: DqVector = DqVector(0.0, 0.0)
    v_from: DqVector = DqVector(0.0, 0.0)
    v_to: DqVector = DqVector(0.0, 0.0)

    def __post_init__(self):
        if not (self.r_b > 0 and self.l_b > 0 and self.c_b > 0):
            raise ValueError(f"pi-line parameters must be > 0, got r={self.r_b}, l={self.l_b}, c={self.c_b}")

    @property
    def series(self) -> Branch:
        return Branch(self.r_b, self.l_b, self.from_bus, self.to_bus, i=self.i)


@dataclass(frozen=True)
class RlLoad:
    r_load: float
    l_load: float
    i: DqVector = DqVector(0.0, 0.0)

    def __post_init__(self):
        if self.r_load < 0 or self.l_load < 0 or (self.r_load == 0 and self.l_load == 0):
            raise ValueError("load impedance must be non-negative and non-zero")

    @classmethod
    def from_power(cls, p: float, q: float, v: float = 1.0) -> RlLoad:
        """Series RL consuming ``p + jq`` at voltage magnitude ``v`` and nominal frequency."""
        s2 = p * p + q * q
        if s2 == 0:
            raise ValueError("load power must be non-zero")
        z_scale = v * v / s2
        return cls(p * z_scale, q * z_scale)

    def power_at(self, v: float = 1.0, omega: float = 1.0) -> tuple[float, float]:
        z = complex(self.r_load, omega * self.l_load)
        s = v * v / z.conjugate()
        return s.real, s.imag


@dataclass(frozen=True)
class SgModel:
    """Synchronous generator on its own MVA base.

    ``order`` 6 is a subtransient model with two rotor circuits per axis
    (flux-decay plus dampers); ``order`` 2 is the classical constant-EMF
    model behind ``x_d1``.  Governor and AVR are single lags.
    """

    order: int = 6
    h: float = 5.0
    damping: float = 0.0
    r_a: float = 0.003
    x_d: float = 1.8
    x_q: float = 1.7
    x_d1: float = 0.3
    x_q1: float = 0.55
    x_d2: float = 0.25
    x_q2: float = 0.25
    t_d01: float = 8.0
    t_q01: float = 0.4
    t_d02: float = 0.03
    t_q02: float = 0.05
    r_gov: float = 0.05
    t_gov: float = 0.5
    k_avr: float = 50.0
    t_avr: float = 0.05

    def __post_init__(self):
        if self.order not in (2, 6):
            raise ValueError(f"SG order must be 2 or 6, got {self.order}")
        if not self.h > 0:
            raise ValueError(f"inertia constant must be > 0, got {self.h}")
        for name in ("t_d01", "t_q01", "t_d02", "t_q02", "t_gov", "t_avr"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if not self.r_gov > 0:
            raise ValueError(f"governor droop must be > 0, got {self.r_gov}")

    @property
    def state_names(self) -> tuple[str, ...]:
        if self.order == 2:
            return ("delta", "omega", "p_m")
        return ("delta", "omega", "e_q1", "e_d1", "e_q2", "e_d2", "p_m", "e_fd")

    @property
    def x_stator(self) -> tuple[float, float]:
        """Reactances behind which the internal EMF acts, (x_d, x_q)."""
        if self.order == 2:
            return self.x_d1, self.x_d1
        return self.x_d2, self.x_q2


@dataclass(frozen=True)
class SgSetpoints:
    p_set: float = 0.5
    v_ref: float = 1.0
    # AVR bias so that the proportional regulator holds v_ref at equilibrium
    e_fd_ref: float = 1.0
    # classical model internal EMF
    e_q1: float = 1.0


def transformer_derivatives(
    branch: Branch,
    v_f: DqVector,
    v_t: DqVector,
    omega_s: float,
    omega_base: float = OMEGA_BASE,
) -> DqVector:
    """di/dt of a series RL branch in a frame rotating at ``omega_s``."""
    i = branch.i
    k = omega_base / branch.l
    w = omega_base * omega_s
    v_from_d, v_from_q = v_f.d / branch.tap, v_f.q / branch.tap
    return DqVector(
        k * (v_from_d - v_t.d) - k * branch.r * i.d + w * i.q,
        k * (v_from_q - v_t.q) - k * branch.r * i.q - w * i.d,
    )


def shunt_capacitor_derivative(
    c: float,
    v: DqVector,
    i_net: DqVector,
    omega: float,
    omega_base: float = OMEGA_BASE,
    g: float = 0.0,
) -> DqVector:
    """dv/dt of a shunt capacitor with conductance ``g`` fed by net current ``i_net``."""
    k = omega_base / c
    w = omega_base * omega
    return DqVector(
        k * (i_net.d - g * v.d) + w * v.q,
        k * (i_net.q - g * v.q) - w * v.d,
    )


def pi_line_derivatives(
    line: PiLine,
    v_from: DqVector,
    v_to: DqVector,
    omega_frame: float,
    i_ext_from: DqVector = DqVector(0.0, 0.0),
    i_ext_to: DqVector = DqVector(0.0, 0.0),
    omega_base: float = OMEGA_BASE,
) -> tuple[DqVector, DqVector, DqVector]:
    """Dynamic pi-section: series current plus both half shunts.

    ``i_ext_*`` are currents injected into the end nodes from outside the
    line.  Returns ``(di, dv_from, dv_to)``.
    """
    di = transformer_derivatives(line.series, v_from, v_to, omega_frame, omega_base)
    half = 0.5 * line.c_b
    dv_from = shunt_capacitor_derivative(half, v_from, i_ext_from - line.i, omega_frame, omega_base)
    dv_to = shunt_capacitor_derivative(half, v_to, i_ext_to + line.i, omega_frame, omega_base)
    return di, dv_from, dv_to


def rl_load_derivative(
    load: RlLoad, v: DqVector, omega: float, omega_base: float = OMEGA_BASE
) -> DqVector:
    """Current drawn by a series RL load, di/dt."""
    return transformer_derivatives(Branch(load.r_load, load.l_load, i=load.i), v, DqVector(0.0, 0.0), omega, omega_base)


@dataclass(frozen=True)
class StiffGrid:
    """Ideal voltage source, optionally behind an impedance of magnitude 1/scr."""

    v_mag: float = 1.0
    theta: float = 0.0
    scr: float | None = None
    x_over_r: float = 10.0

    def __post_init__(self):
        if not self.v_mag > 0:
            raise ValueError(f"source voltage must be > 0, got {self.v_mag}")
        if self.scr is not None and not self.scr > 0:
            raise ValueError(f"SCR must be > 0, got {self.scr}")

    @property
    def source(self) -> DqVector:
        return DqVector(self.v_mag * math.cos(self.theta), self.v_mag * math.sin(self.theta))

    @property
    def impedance(self) -> tuple[float, float] | None:
        """Series (r, l) of the grid equivalent, or ``None`` for an infinite bus."""
        if self.scr is None or math.isinf(self.scr):
            return None
        z = 1.0 / self.scr
        x = z * self.x_over_r / math.hypot(1.0, self.x_over_r)
        return x / self.x_over_r, x

    def terminal_voltage(self, i_out: DqVector, omega: float = 1.0) -> DqVector:
        """Steady-state terminal voltage while the source delivers phasor current ``i_out``."""
        zi = self.impedance
        if zi is None:
            return self.source
        z = complex(zi[0], omega * zi[1])
        return DqVector.from_complex(self.source.to_complex() - z * i_out.to_complex())


def stiff_grid(v_mag: float, theta: float, scr: float | None = None, x_over_r: float = 10.0) -> StiffGrid:
    return StiffGrid(v_mag, theta, scr, x_over_r)


# --- synchronous generator ---------------------------------------------------


def _to_machine(v: DqVector, delta: float) -> DqVector:
    # (v_d + j v_q) = V_global * exp(-j (delta - pi/2))
    return v.rotate(math.pi / 2.0 - delta)


def _to_global(v: DqVector, delta: float) -> DqVector:
    return v.rotate(delta - math.pi / 2.0)


def sg_internal_emf(sg: SgModel, state, setpoints: SgSetpoints) -> DqVector:
    if sg.order == 2:
        return DqVector(0.0, setpoints.e_q1)
    return DqVector(state[5], state[4])


def sg_stator_currents(sg: SgModel, state, v_terminal: DqVector, setpoints: SgSetpoints) -> DqVector:
    """Solve the algebraic stator equations for the machine-frame currents.

    ``v_terminal`` is on the machine base in the global frame.
    """
    delta = state[0]
    v = _to_machine(v_terminal, delta)
    e = sg_internal_emf(sg, state, setpoints)
    x_d, x_q = sg.x_stator
    # e_d - v_d = r i_d - x_q i_q ; e_q - v_q = x_d i_d + r i_q
    a, b, c, d = sg.r_a, -x_q, x_d, sg.r_a
    rhs_d, rhs_q = e.d - v.d, e.q - v.q
    det = a * d - b * c
    return DqVector((d * rhs_d - b * rhs_q) / det, (a * rhs_q - c * rhs_d) / det)


def sg_stator_residuals(sg: SgModel, state, i_dq: DqVector, v_terminal: DqVector, setpoints: SgSetpoints) -> DqVector:
    v = _to_machine(v_terminal, state[0])
    e = sg_internal_emf(sg, state, setpoints)
    x_d, x_q = sg.x_stator
    return DqVector(
        e.d - v.d - sg.r_a * i_dq.d + x_q * i_dq.q,
        e.q - v.q - sg.r_a * i_dq.q - x_d * i_dq.d,
    )


def sg_injection(i_dq: DqVector, delta: float) -> DqVector:
    """Machine-frame stator current expressed in the global frame (generator convention)."""
    return _to_global(i_dq, delta)


def sg_derivatives(
    sg: SgModel,
    state,
    v_terminal: DqVector,
    setpoints: SgSetpoints,
    i_dq: DqVector | None = None,
    omega_frame: float = 1.0,
    omega_base: float = OMEGA_BASE,
) -> list[float]:
    """State derivatives of the generator, governor and AVR.

    ``state`` follows ``sg.state_names``; ``i_dq`` defaults to the solution
    of the stator equations.
    """
    if i_dq is None:
        i_dq = sg_stator_currents(sg, state, v_terminal, setpoints)
    delta, omega = state[0], state[1]
    v = _to_machine(v_terminal, delta)
    i_d, i_q = i_dq.d, i_dq.q
    p_e = (v.d + sg.r_a * i_d) * i_d + (v.q + sg.r_a * i_q) * i_q
    d_delta = omega_base * (omega - omega_frame)
    if sg.order == 2:
        p_m = state[2]
        d_omega = (p_m - p_e - sg.damping * (omega - 1.0)) / (2.0 * sg.h)
        d_pm = (setpoints.p_set - (omega - 1.0) / sg.r_gov - p_m) / sg.t_gov
        return [d_delta, d_omega, d_pm]
    _, _, e_q1, e_d1, e_q2, e_d2, p_m, e_fd = state
    d_omega = (p_m - p_e - sg.damping * (omega - 1.0)) / (2.0 * sg.h)
    d_eq1 = (e_fd - e_q1 - (sg.x_d - sg.x_d1) * i_d) / sg.t_d01
    d_ed1 = (-e_d1 + (sg.x_q - sg.x_q1) * i_q) / sg.t_q01
    d_eq2 = (e_q1 - e_q2 - (sg.x_d1 - sg.x_d2) * i_d) / sg.t_d02
    d_ed2 = (e_d1 - e_d2 + (sg.x_q1 - sg.x_q2) * i_q) / sg.t_q02
    d_pm = (setpoints.p_set - (omega - 1.0) / sg.r_gov - p_m) / sg.t_gov
    v_mag = math.hypot(v_terminal.d, v_terminal.q)
    d_efd = (setpoints.e_fd_ref + sg.k_avr * (setpoints.v_ref - v_mag) - e_fd) / sg.t_avr
    return [d_delta, d_omega, d_eq1, d_ed1, d_eq2, d_ed2, d_pm, d_efd]


def sg_equilibrium(sg: SgModel, v_terminal: complex, s_out: complex) -> tuple[list[float], DqVector, SgSetpoints]:
    """Steady state of the generator delivering ``s_out`` at terminal phasor ``v_terminal``.

    Both arguments are on the machine base.  Returns ``(state, i_dq, setpoints)``.
    """
    i = (s_out / v_terminal).conjugate()
    x_d, x_q = sg.x_stator
    # q-axis location from the x_q voltage-behind-reactance
    e_q_loc = v_terminal + complex(sg.r_a, sg.x_q) * i
    delta = math.atan2(e_q_loc.imag, e_q_loc.real)
    rot = complex(math.cos(math.pi / 2 - delta), math.sin(math.pi / 2 - delta))
    vm = v_terminal * rot
    im = i * rot
    v_d, v_q, i_d, i_q = vm.real, vm.imag, im.real, im.imag
    p_e = (v_d + sg.r_a * i_d) * i_d + (v_q + sg.r_a * i_q) * i_q
    v_mag = abs(v_terminal)
    if sg.order == 2:
        e_q1 = v_q + sg.r_a * i_q + sg.x_d1 * i_d
        # classical model uses x_d1 on both axes: the d-axis EMF must vanish
        delta_c = math.atan2((v_terminal + complex(sg.r_a, sg.x_d1) * i).imag, (v_terminal + complex(sg.r_a, sg.x_d1) * i).real)
        rot = complex(math.cos(math.pi / 2 - delta_c), math.sin(math.pi / 2 - delta_c))
        vm, im = v_terminal * rot, i * rot
        e_q1 = vm.imag + sg.r_a * im.imag + sg.x_d1 * im.real
        setpoints = SgSetpoints(p_set=p_e, v_ref=v_mag, e_fd_ref=0.0, e_q1=e_q1)
        return [delta_c, 1.0, p_e], DqVector(im.real, im.imag), setpoints
    e_d2 = v_d + sg.r_a * i_d - sg.x_q2 * i_q
    e_q2 = v_q + sg.r_a * i_q + sg.x_d2 * i_d
    e_d1 = (sg.x_q - sg.x_q1) * i_q
    e_q1 = e_q2 + (sg.x_d1 - sg.x_d2) * i_d
    e_fd = e_q1 + (sg.x_d - sg.x_d1) * i_d
    setpoints = SgSetpoints(p_set=p_e, v_ref=v_mag, e_fd_ref=e_fd, e_q1=e_q1)
    state = [delta, 1.0, e_q1, e_d1, e_q2, e_d2, p_e, e_fd]
    return state, DqVector(i_d, i_q), setpoints
