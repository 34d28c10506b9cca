"""Semi-explicit index-1 DAE: assembly, equilibrium and implicit integration.

The assembled power system uses one global frame rotating at nominal speed.
Bus voltages (on capacitive nodes) and branch currents are differential
states whose dynamics are linear; devices add their own states and algebraic
variables and exchange a current injection with their bus.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from .core import DqVector, TimeSeries
from .devices import Device, ImpedanceLoad, StiffSource, SynchronousGenerator
from .sync import OMEGA_BASE, DegenerateStateError, wrap_angle

log = logging.getLogger(__name__)

EVENT_KINDS = (
    "setpoint_step",
    "breaker_open",
    "breaker_close",
    "load_step",
    "three_phase_fault_on",
    "fault_clear",
)


class AssemblyError(ValueError):
    pass


class SolverError(RuntimeError):
    """Newton failure that step-size halving could not cure."""

    def __init__(self, message: str, t: float | None = None, history=None, partial: TimeSeries | None = None):
        super().__init__(message)
        self.t = t
        self.history = list(history or [])
        self.partial = partial


class EquilibriumError(SolverError):
    pass


class IndexViolationError(SolverError):
    """The algebraic Jacobian is singular: the DAE is not index 1 at this point."""


@dataclass(frozen=True)
class SolveOptions:
    dt: float = 1e-4
    newton_tol: float = 1e-10
    max_newton_iters: int = 12
    # the chord Jacobian is refreshed once an iteration needs more steps than this
    jacobian_refresh: int = 4
    max_halvings: int = 4
    # backward-Euler steps after each discontinuity damp trapezoidal ringing
    be_steps_after_event: int = 2
    record_every: int = 1
    fault_resistance: float = 1e-3
    min_bus_capacitance: float = 0.01
    # decay time constant of the current of an opened breaker [s]
    open_branch_tau: float = 1e-3

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not self.newton_tol > 0:
            raise ValueError(f"newton_tol must be > 0, got {self.newton_tol}")
        if self.max_newton_iters < 1 or self.record_every < 1:
            raise ValueError("max_newton_iters and record_every must be >= 1")


@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.time >= 0:
            raise ValueError(f"event time must be >= 0, got {self.time}")
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}; expected one of {EVENT_KINDS}")


# --- generic DAE -----------------------------------------------------------------


class DaeSystem:
    """``x' = f(x, y, t)``, ``0 = g(x, y, t)`` with named states."""

    def __init__(self, x_names, y_names=(), angle_states=(), events=()):
        self.x_names = tuple(x_names)
        self.y_names = tuple(y_names)
        self.angle_indices = np.array([self.x_names.index(n) for n in angle_states], dtype=int)
        self.events = sorted(events, key=lambda e: e.time)
        self.condition_log: list[float] = []

    @property
    def n_x(self) -> int:
        return len(self.x_names)

    @property
    def n_y(self) -> int:
        return len(self.y_names)

    def residuals(self, x, y, t=0.0):
        raise NotImplementedError

    def f(self, x, y, t=0.0):
        return self.residuals(x, y, t)[0]

    def g(self, x, y, t=0.0):
        return self.residuals(x, y, t)[1]

    def jacobian(self, x, y, t=0.0, central=False, h=None):
        """Finite-difference blocks ``(f_x, f_y, g_x, g_y)``."""
        z = np.concatenate([x, y])
        n_x = self.n_x
        base = None if central else np.concatenate(self.residuals(x, y, t))
        jac = np.empty((z.size, z.size))
        for j in range(z.size):
            step = (h if h is not None else (1e-6 if central else 1.5e-8)) * max(1.0, abs(z[j]))
            zp = z.copy()
            zp[j] += step
            rp = np.concatenate(self.residuals(zp[:n_x], zp[n_x:], t))
            if central:
                zm = z.copy()
                zm[j] -= step
                rm = np.concatenate(self.residuals(zm[:n_x], zm[n_x:], t))
                jac[:, j] = (rp - rm) / (2.0 * step)
            else:
                jac[:, j] = (rp - base) / step
        return jac[:n_x, :n_x], jac[:n_x, n_x:], jac[n_x:, :n_x], jac[n_x:, n_x:]

    def channels(self, x, y, t=0.0) -> dict[str, float]:
        out = dict(zip(self.x_names, map(float, x)))
        out.update(zip(self.y_names, map(float, y)))
        return out

    def apply_event(self, event: Event, x, y):
        raise NotImplementedError(f"{type(self).__name__} does not handle {event.kind} events")

    # mutable state touched by events; simulate restores it so reruns are deterministic
    def snapshot(self):
        return None

    def restore(self, snap) -> None:
        pass

    def wrap(self, x):
        if self.angle_indices.size:
            x = x.copy()
            x[self.angle_indices] = (x[self.angle_indices] + math.pi) % (2.0 * math.pi) - math.pi
        return x

    # equilibrium pins: (state index, getter, setter) replacing a state by a free parameter
    def pins(self):
        return []


class FunctionalSystem(DaeSystem):
    """DAE from plain callables ``f(x, y, t)`` and ``g(x, y, t)``."""

    def __init__(self, f, g=None, n_x=None, n_y=0, x_names=None, y_names=None, angle_states=(), events=()):
        if x_names is None:
            x_names = [f"x{k}" for k in range(n_x)]
        if y_names is None:
            y_names = [f"y{k}" for k in range(n_y)]
        super().__init__(x_names, y_names, angle_states, events)
        self._f = f
        self._g = g

    def residuals(self, x, y, t=0.0):
        f = np.asarray(self._f(x, y, t), dtype=float)
        g = np.asarray(self._g(x, y, t), dtype=float) if self._g is not None else np.zeros(0)
        return f, g


# --- power-system assembly -----------------------------------------------------------


@dataclass(frozen=True)
class NetBranch:
    """Series RL branch with optional total shunt capacitance ``c`` (pi-section) and tap."""

    name: str
    from_bus: str
    to_bus: str
    r: float
    l: float
    c: float = 0.0
    tap: float = 1.0

    def __post_init__(self):
        if not self.l > 0:
            raise AssemblyError(f"branch {self.name!r}: l must be > 0, got {self.l}")
        if self.r < 0 or self.c < 0:
            raise AssemblyError(f"branch {self.name!r}: r and c must be >= 0")
        if not self.tap > 0:
            raise AssemblyError(f"branch {self.name!r}: tap must be > 0")
        if self.from_bus == self.to_bus:
            raise AssemblyError(f"branch {self.name!r} connects bus {self.from_bus!r} to itself")


class InfiniteBus(Device):
    """Stiff grid with infinite short-circuit ratio: fixes its bus voltage."""

    kind = "stiff_grid"
    kind_label = "stiff_grid"
    pf_role = "slack"

    def __init__(self, name: str, bus: str, v_mag: float = 1.0, theta: float = 0.0):
        super().__init__(name, bus, 1.0)
        if not v_mag > 0:
            raise ValueError(f"source voltage must be > 0, got {v_mag}")
        self.v_mag = v_mag
        self.theta = theta

    @property
    def voltage(self) -> DqVector:
        return DqVector(self.v_mag * math.cos(self.theta), self.v_mag * math.sin(self.theta))

    def evaluate(self, x, y, v, omega_base=OMEGA_BASE):
        return [], [], DqVector(0.0, 0.0)

    def init_from_terminal(self, v_bus, s_inj):
        return [], []


class PowerSystem(DaeSystem):
    """Network of buses and branches with devices attached to buses."""

    def __init__(
        self,
        buses,
        branches,
        devices,
        events=(),
        options: SolveOptions | None = None,
        name: str = "",
        omega_base: float = OMEGA_BASE,
    ):
        self.name = name
        self.options = options or SolveOptions()
        self.omega_base = omega_base
        buses = [str(b) for b in buses]
        if not buses:
            raise AssemblyError("network has no buses")
        if len(set(buses)) != len(buses):
            dup = sorted({b for b in buses if buses.count(b) > 1})
            raise AssemblyError(f"duplicate bus names: {dup}")
        self.buses = buses
        self.branches = list(branches)
        names = [b.name for b in self.branches]
        if len(set(names)) != len(names):
            raise AssemblyError(f"duplicate branch names: {sorted({n for n in names if names.count(n) > 1})}")
        for br in self.branches:
            for b in (br.from_bus, br.to_bus):
                if b not in buses:
                    raise AssemblyError(f"branch {br.name!r} references unknown bus {b!r}")
        self.devices = list(devices)
        if not self.devices:
            raise AssemblyError("scenario has no devices")
        dnames = [d.name for d in self.devices]
        if len(set(dnames)) != len(dnames):
            raise AssemblyError(f"duplicate device names: {sorted({n for n in dnames if dnames.count(n) > 1})}")
        for d in self.devices:
            if d.bus not in buses:
                raise AssemblyError(f"device {d.name!r} references unknown bus {d.bus!r}")
        self._check_connected()

        self.fixed = {}
        for d in self.devices:
            if isinstance(d, InfiniteBus):
                if d.bus in self.fixed:
                    raise AssemblyError(f"bus {d.bus!r} has two infinite sources")
                self.fixed[d.bus] = d
        self.free_buses = [b for b in buses if b not in self.fixed]
        self.bus_index = {b: k for k, b in enumerate(self.free_buses)}
        self.branch_index = {br.name: k for k, br in enumerate(self.branches)}
        self.open_branches: set[str] = set()
        self.fault_g: dict[str, float] = {}

        nb, nbr = len(self.free_buses), len(self.branches)
        self.n_net = 2 * (nb + nbr)
        x_names = [f"bus_{b}.v_{c}" for b in self.free_buses for c in "dq"]
        x_names += [f"{br.name}.i_{c}" for br in self.branches for c in "dq"]
        y_names = []
        self.x_slices, self.y_slices = [], []
        angle_states = []
        for d in self.devices:
            s = len(x_names)
            x_names += [f"{d.name}.{n}" for n in d.x_names]
            self.x_slices.append((s, len(x_names)))
            s = len(y_names)
            y_names += [f"{d.name}.{n}" for n in d.y_names]
            self.y_slices.append((s, len(y_names)))
            angle_states += [f"{d.name}.{n}" for n in d.angle_states]
        super().__init__(x_names, y_names, angle_states, events)
        for ev in self.events:
            self._validate_event(ev)
        self._build_matrix()

    # --- topology -------------------------------------------------------------

    def _check_connected(self):
        adj = {b: set() for b in self.buses}
        for br in self.branches:
            adj[br.from_bus].add(br.to_bus)
            adj[br.to_bus].add(br.from_bus)
        seen, stack = set(), [self.buses[0]]
        while stack:
            b = stack.pop()
            if b in seen:
                continue
            seen.add(b)
            stack.extend(adj[b] - seen)
        dangling = [b for b in self.buses if b not in seen]
        if dangling:
            raise AssemblyError(f"buses not connected to the network: {dangling}")

    def device(self, name: str) -> Device:
        for d in self.devices:
            if d.name == name:
                return d
        raise KeyError(f"no device named {name!r}")

    def device_slice(self, name: str):
        k = [d.name for d in self.devices].index(name)
        return self.x_slices[k], self.y_slices[k]

    def bus_capacitance(self) -> np.ndarray:
        c = np.zeros(len(self.free_buses))
        for br in self.branches:
            for b in (br.from_bus, br.to_bus):
                if b in self.bus_index:
                    c[self.bus_index[b]] += 0.5 * br.c
        for d in self.devices:
            if d.bus in self.bus_index:
                c[self.bus_index[d.bus]] += d.shunt_capacitance
        return np.maximum(c, self.options.min_bus_capacitance)

    def _build_matrix(self):
        wb = self.omega_base
        nb = len(self.free_buses)
        n = self.n_net
        m = np.zeros((n, n))
        c = np.zeros(n)
        cap = self.bus_capacitance()
        self.cap = cap
        self.kc = np.repeat(wb / cap, 2)
        for k in range(nb):
            r = 2 * k
            g = self.fault_g.get(self.free_buses[k], 0.0)
            m[r, r] = -wb / cap[k] * g
            m[r + 1, r + 1] = -wb / cap[k] * g
            m[r, r + 1] = wb
            m[r + 1, r] = -wb
        tau_open = self.options.open_branch_tau
        for j, br in enumerate(self.branches):
            r = 2 * (nb + j)
            if br.name in self.open_branches:
                m[r, r] = m[r + 1, r + 1] = -1.0 / tau_open
                continue
            kl = wb / br.l
            m[r, r] = m[r + 1, r + 1] = -kl * br.r
            m[r, r + 1] = wb
            m[r + 1, r] = -wb
            for bus, coef in ((br.from_bus, kl / br.tap), (br.to_bus, -kl)):
                if bus in self.bus_index:
                    cb = 2 * self.bus_index[bus]
                    m[r, cb] += coef
                    m[r + 1, cb + 1] += coef
                else:
                    v = self.fixed[bus].voltage
                    c[r] += coef * v.d
                    c[r + 1] += coef * v.q
            # KCL: the branch draws i/tap from its from-bus and delivers i to its to-bus
            for bus, coef in ((br.from_bus, -1.0 / br.tap), (br.to_bus, 1.0)):
                if bus in self.bus_index:
                    kb = self.bus_index[bus]
                    m[2 * kb, r] += wb / cap[kb] * coef
                    m[2 * kb + 1, r + 1] += wb / cap[kb] * coef
        self.m = m
        self.c = c

    # --- evaluation -------------------------------------------------------------

    def _bus_voltage(self, xl, bus) -> DqVector:
        k = self.bus_index.get(bus)
        if k is None:
            return self.fixed[bus].voltage
        return DqVector(xl[2 * k], xl[2 * k + 1])

    def residuals(self, x, y, t=0.0):
        xl = x.tolist()
        yl = y.tolist()
        fx = np.empty(self.n_x)
        gy = np.empty(self.n_y)
        inj = np.zeros(2 * len(self.free_buses))
        wb = self.omega_base
        for d, (xs, xe), (ys, ye) in zip(self.devices, self.x_slices, self.y_slices):
            v = self._bus_voltage(xl, d.bus)
            f_d, g_d, i_d = d.evaluate(xl[xs:xe], yl[ys:ye], v, wb)
            fx[xs:xe] = f_d
            gy[ys:ye] = g_d
            k = self.bus_index.get(d.bus)
            if k is not None:
                inj[2 * k] += i_d.d
                inj[2 * k + 1] += i_d.q
        n = self.n_net
        fx[:n] = self.m @ x[:n] + self.c
        fx[: inj.size] += self.kc * inj
        return fx, gy

    def jacobian(self, x, y, t=0.0, central=False, h=None):
        """Analytic network blocks plus finite-difference device blocks."""
        n_x, n_y, n = self.n_x, self.n_y, self.n_net
        fx = np.zeros((n_x, n_x))
        fy = np.zeros((n_x, n_y))
        gx = np.zeros((n_y, n_x))
        gy = np.zeros((n_y, n_y))
        fx[:n, :n] = self.m
        xl = x.tolist()
        yl = y.tolist()
        wb = self.omega_base
        rel = h if h is not None else (1e-6 if central else 1.5e-8)
        for d, (xs, xe), (ys, ye) in zip(self.devices, self.x_slices, self.y_slices):
            k = self.bus_index.get(d.bus)
            v0 = self._bus_voltage(xl, d.bus)
            xd, yd = xl[xs:xe], yl[ys:ye]
            cols = [("x", j) for j in range(xe - xs)] + [("y", j) for j in range(ye - ys)]
            if k is not None:
                cols += [("v", 0), ("v", 1)]
            if not cols:
                continue
            if not central:
                base = self._flat(d.evaluate(xd, yd, v0, wb))
            for kind, j in cols:
                ref = xd[j] if kind == "x" else yd[j] if kind == "y" else v0[j]
                step = rel * max(1.0, abs(ref))
                plus = self._flat(self._eval_shift(d, xd, yd, v0, kind, j, step))
                if central:
                    minus = self._flat(self._eval_shift(d, xd, yd, v0, kind, j, -step))
                    col = (plus - minus) / (2.0 * step)
                else:
                    col = (plus - base) / step
                nfx, nfy = xe - xs, ye - ys
                dfx, dgy, dinj = col[:nfx], col[nfx : nfx + nfy], col[nfx + nfy :]
                if kind == "x":
                    gcol = xs + j
                    fx[xs:xe, gcol] = dfx
                    gx[ys:ye, gcol] = dgy
                    if k is not None:
                        fx[2 * k : 2 * k + 2, gcol] += self.kc[2 * k] * dinj
                elif kind == "y":
                    gcol = ys + j
                    fy[xs:xe, gcol] = dfx
                    gy[ys:ye, gcol] = dgy
                    if k is not None:
                        fy[2 * k : 2 * k + 2, gcol] += self.kc[2 * k] * dinj
                else:
                    gcol = 2 * k + j
                    fx[xs:xe, gcol] += dfx
                    gx[ys:ye, gcol] += dgy
                    fx[2 * k : 2 * k + 2, gcol] += self.kc[2 * k] * dinj
        return fx, fy, gx, gy

    @staticmethod
    def _flat(res):
        f, g, i = res
        return np.array([*f, *g, i[0], i[1]], dtype=float)

    def _eval_shift(self, d, xd, yd, v, kind, j, step):
        if kind == "x":
            xd = list(xd)
            xd[j] += step
        elif kind == "y":
            yd = list(yd)
            yd[j] += step
        else:
            v = DqVector(v.d + step, v.q) if j == 0 else DqVector(v.d, v.q + step)
        return d.evaluate(xd, yd, v, self.omega_base)

    def channels(self, x, y, t=0.0):
        xl, yl = x.tolist(), y.tolist()
        out = {}
        for b in self.buses:
            v = self._bus_voltage(xl, b)
            out[f"bus_{b}.v_mag"] = math.hypot(v.d, v.q)
        for d, (xs, xe), (ys, ye) in zip(self.devices, self.x_slices, self.y_slices):
            v = self._bus_voltage(xl, d.bus)
            for key, val in d.channels(xl[xs:xe], yl[ys:ye], v).items():
                out[f"{d.name}.{key}"] = val
        out.update(zip(self.x_names, xl))
        out.update(zip(self.y_names, yl))
        return out

    # --- events -------------------------------------------------------------------

    def _validate_event(self, ev: Event):
        p = ev.payload
        if ev.kind in ("breaker_open", "breaker_close"):
            if p.get("branch") not in self.branch_index:
                raise AssemblyError(f"event at t={ev.time}: unknown branch {p.get('branch')!r}")
        elif ev.kind in ("three_phase_fault_on", "fault_clear"):
            if p.get("bus") not in self.bus_index:
                raise AssemblyError(f"event at t={ev.time}: fault bus {p.get('bus')!r} unknown or fixed")
        elif ev.kind in ("setpoint_step", "load_step"):
            self.device(p.get("device"))

    def apply_event(self, event: Event, x, y):
        p = event.payload
        x = x.copy()
        if event.kind == "breaker_open":
            self.open_branches.add(p["branch"])
            j = self.branch_index[p["branch"]]
            r = 2 * (len(self.free_buses) + j)
            x[r : r + 2] = 0.0
        elif event.kind == "breaker_close":
            self.open_branches.discard(p["branch"])
        elif event.kind == "three_phase_fault_on":
            self.fault_g[p["bus"]] = 1.0 / float(p.get("r", self.options.fault_resistance))
        elif event.kind == "fault_clear":
            self.fault_g.pop(p["bus"], None)
        elif event.kind == "setpoint_step":
            self.device(p["device"]).set_param(p["param"], float(p["value"]))
        elif event.kind == "load_step":
            dev = self.device(p["device"])
            if "scale" in p:
                dev.set_param("p", dev.config.p * float(p["scale"]))
                dev.set_param("q", dev.config.q * float(p["scale"]))
            for key in ("p", "q"):
                if key in p:
                    dev.set_param(key, float(p[key]))
        self._build_matrix()
        return x, y

    def snapshot(self):
        return set(self.open_branches), dict(self.fault_g), [getattr(d, "config", None) for d in self.devices]

    def restore(self, snap) -> None:
        branches, fault_g, configs = snap
        self.open_branches = set(branches)
        self.fault_g = dict(fault_g)
        for d, c in zip(self.devices, configs):
            if c is not None and d.config is not c:
                d.config = c
                if isinstance(d, ImpedanceLoad):
                    d._build()
        self._build_matrix()

    # --- equilibrium support ---------------------------------------------------------

    def pins(self):
        if self.fixed or any(isinstance(d, StiffSource) for d in self.devices):
            return []
        for d, (xs, _) in zip(self.devices, self.x_slices):
            if isinstance(d, SynchronousGenerator) and d.slack:
                return [(xs, d.get_free, d.set_free)]
        return []

    def power_flow(self, zero_injection=(), tol=1e-12, max_iter=30):
        """Newton-Raphson load flow at nominal frequency.

        Returns ``(V, S)``: complex voltage per bus name and complex power
        injected per device name (system base).  Devices in
        ``zero_injection`` are treated as disconnected.
        """
        nodes = list(self.buses)
        src_nodes = {}
        for d in self.devices:
            if isinstance(d, StiffSource):
                src_nodes[d.name] = f"__src_{d.name}"
                nodes.append(src_nodes[d.name])
        idx = {b: k for k, b in enumerate(nodes)}
        n = len(nodes)
        ybus = np.zeros((n, n), dtype=complex)

        def add_series(a, b, z, tap=1.0):
            yv = 1.0 / z
            ia, ib = idx[a], idx[b]
            ybus[ia, ia] += yv / tap**2
            ybus[ib, ib] += yv
            ybus[ia, ib] -= yv / tap
            ybus[ib, ia] -= yv / tap

        for br in self.branches:
            if br.name in self.open_branches:
                continue
            add_series(br.from_bus, br.to_bus, complex(br.r, br.l), br.tap)
        cap = self.bus_capacitance()
        for b in self.free_buses:
            k = self.bus_index[b]
            dev_c = sum(d.shunt_capacitance for d in self.devices if d.bus == b)
            ybus[idx[b], idx[b]] += 1j * (cap[k] - dev_c) + self.fault_g.get(b, 0.0)
        for d in self.devices:
            if isinstance(d, ImpedanceLoad):
                ybus[idx[d.bus], idx[d.bus]] += d.admittance()
            elif isinstance(d, StiffSource):
                add_series(src_nodes[d.name], d.bus, complex(d.config.r, d.config.l))

        v = np.ones(n, dtype=complex)
        slack, pv = set(), {}
        p_spec = np.zeros(n)
        q_spec = np.zeros(n)
        for d in self.devices:
            if isinstance(d, InfiniteBus):
                slack.add(idx[d.bus])
                v[idx[d.bus]] = complex(*d.voltage)
            elif isinstance(d, StiffSource):
                k = idx[src_nodes[d.name]]
                slack.add(k)
                v[k] = complex(*d.source)
        has_stiff = bool(slack)
        for d in self.devices:
            if isinstance(d, SynchronousGenerator):
                k = idx[d.bus]
                if d.slack and not has_stiff:
                    slack.add(k)
                    v[k] = d.config.v_set
                elif k not in slack:
                    pv[k] = d.config.v_set
                    p_spec[k] += d.rating * d.config.p_gen
            elif d.pf_role == "pq" and d.name not in zero_injection:
                s = d.pf_injection()
                p_spec[idx[d.bus]] += s.real
                q_spec[idx[d.bus]] += s.imag
        if not slack:
            raise EquilibriumError("no slack source (stiff grid or slack generator) for the power flow")
        for k, vm in pv.items():
            v[k] = vm
        pvq = [k for k in range(n) if k not in slack]
        pq = [k for k in pvq if k not in pv]
        for it in range(max_iter):
            s_calc = v * np.conj(ybus @ v)
            mis = np.concatenate([(s_calc.real - p_spec)[pvq], (s_calc.imag - q_spec)[pq]])
            if np.max(np.abs(mis), initial=0.0) < tol:
                break
            ds_dva, ds_dvm = _ds_dv(ybus, v)
            jac = np.block(
                [
                    [ds_dva.real[np.ix_(pvq, pvq)], ds_dvm.real[np.ix_(pvq, pq)]],
                    [ds_dva.imag[np.ix_(pq, pvq)], ds_dvm.imag[np.ix_(pq, pq)]],
                ]
            )
            dx = np.linalg.solve(jac, -mis)
            va = np.angle(v)
            vm = np.abs(v)
            va[pvq] += dx[: len(pvq)]
            vm[pq] += dx[len(pvq) :]
            v = vm * np.exp(1j * va)
        else:
            raise EquilibriumError(f"power flow did not converge, mismatch {np.max(np.abs(mis)):.3e}")
        s_bus = v * np.conj(ybus @ v)
        volts = {b: complex(v[idx[b]]) for b in nodes}
        s_dev = {}
        for b in self.buses:
            k = idx[b]
            here = [d for d in self.devices if d.bus == b]
            fixed_s = 0j
            for d in here:
                if d.pf_role == "pq":
                    s_dev[d.name] = 0j if d.name in zero_injection else d.pf_injection()
                    fixed_s += s_dev[d.name]
                elif isinstance(d, (ImpedanceLoad, InfiniteBus)):
                    s_dev[d.name] = 0j
            gens = [d for d in here if isinstance(d, SynchronousGenerator)]
            total_rating = sum(d.rating for d in gens)
            for d in gens:
                s_dev[d.name] = (complex(s_bus[k]) - fixed_s) * d.rating / total_rating
        for d in self.devices:
            if isinstance(d, StiffSource):
                s_dev[d.name] = complex(s_bus[idx[src_nodes[d.name]]])
        return volts, s_dev

    def initial_state(self, cold_start=(), zero_injection=None):
        """State built from the power flow; devices in ``cold_start`` start de-energized."""
        cold = set(cold_start)
        volts, s_dev = self.power_flow(zero_injection=cold if zero_injection is None else zero_injection)
        x = np.zeros(self.n_x)
        y = np.zeros(self.n_y)
        for b, k in self.bus_index.items():
            x[2 * k], x[2 * k + 1] = volts[b].real, volts[b].imag
        nb = len(self.free_buses)
        for j, br in enumerate(self.branches):
            if br.name in self.open_branches:
                continue
            i = (volts[br.from_bus] / br.tap - volts[br.to_bus]) / complex(br.r, br.l)
            x[2 * (nb + j)], x[2 * (nb + j) + 1] = i.real, i.imag
        for d, (xs, xe), (ys, ye) in zip(self.devices, self.x_slices, self.y_slices):
            if d.name in cold:
                xd, yd = d.cold_start(volts[d.bus])
            else:
                xd, yd = d.init_from_terminal(volts[d.bus], s_dev[d.name])
            x[xs:xe] = xd
            y[ys:ye] = yd
        return x, y


def _ds_dv(ybus, v):
    i = ybus @ v
    dv = np.diag(v)
    di = np.diag(i)
    dvn = np.diag(v / np.abs(v))
    ds_dvm = dv @ np.conj(ybus @ dvn) + np.conj(di) @ dvn
    ds_dva = 1j * dv @ np.conj(di - ybus @ dv)
    return ds_dva, ds_dvm


def assemble(scenario) -> PowerSystem:
    """Build the power-system DAE of a validated scenario."""
    from .scenario import build_system

    return build_system(scenario)


# --- Newton machinery --------------------------------------------------------------------


def _finite(a) -> bool:
    return bool(np.all(np.isfinite(a)))


def algebraic_condition(system: DaeSystem, x, y, t=0.0) -> float:
    """Condition number of dg/dy (1.0 when there are no algebraic variables)."""
    if system.n_y == 0:
        return 1.0
    _, _, _, gy = system.jacobian(x, y, t)
    return float(np.linalg.cond(gy))


def solve_algebraic(system: DaeSystem, x, y, t=0.0, tol=1e-10, max_iter=30):
    """Re-converge ``g(x, y) = 0`` for fixed ``x``."""
    if system.n_y == 0:
        return y
    y = y.copy()
    history = []
    for _ in range(max_iter):
        g = system.residuals(x, y, t)[1]
        err = float(np.max(np.abs(g)))
        history.append(err)
        if err < tol:
            return y
        gy = system.jacobian(x, y, t)[3]
        y = y - np.linalg.solve(gy, g)
    raise SolverError(f"algebraic re-initialization failed at t={t}", t=t, history=history)


class _Newton:
    """Trapezoidal / backward-Euler corrector with a reusable (chord) Jacobian."""

    def __init__(self, system: DaeSystem, opts: SolveOptions):
        self.system = system
        self.opts = opts
        self.lu = None
        self.key = None

    def invalidate(self):
        self.lu = None

    def _factor(self, x, y, t, a):
        fx, fy, gx, gy = self.system.jacobian(x, y, t)
        n_x = self.system.n_x
        top = np.hstack([np.eye(n_x) - a * fx, -a * fy])
        bottom = np.hstack([gx, gy])
        jac = np.vstack([top, bottom])
        self.lu = sla.lu_factor(jac, check_finite=False)
        self.key = a

    def _residual(self, x, y, x_n, f_n, t, a, method):
        f, g = self.system.residuals(x, y, t)
        rx = x - x_n - a * (f + f_n) if method == "trap" else x - x_n - a * f
        res = np.concatenate([rx, g])
        return res, f, (float(np.max(np.abs(res))) if res.size else 0.0)

    def step(self, x_n, y_n, f_n, t, dt, method="trap"):
        """Solve one step; the Jacobian is reused until convergence slows down.

        A stale Jacobian is refreshed at the current iterate as soon as a
        chord step fails to contract the residual, which also handles crossing
        the non-smooth points of the device models.
        """
        a = 0.5 * dt if method == "trap" else dt
        t1 = t + dt
        # explicit predictor keeps the first chord step inside the contraction region
        x, y = x_n + dt * f_n, y_n.copy()
        if self.lu is None or self.key != a:
            self._factor(x, y, t1, a)
        fresh = False
        history = []
        res, f, err = self._residual(x, y, x_n, f_n, t1, a, method)
        for it in range(self.opts.max_newton_iters + 1):
            history.append(err)
            if not math.isfinite(err):
                raise SolverError("non-finite residual", t=t, history=history)
            if err < self.opts.newton_tol:
                return x, y, f, it
            if it == self.opts.max_newton_iters:
                break
            if not fresh and it >= self.opts.jacobian_refresh:
                self._factor(x, y, t1, a)
                fresh = True
            trial = self._try(x, y, res, err, x_n, f_n, t1, a, method, fresh)
            if trial is None and not fresh:
                self._factor(x, y, t1, a)
                fresh = True
                trial = self._try(x, y, res, err, x_n, f_n, t1, a, method, fresh)
            if trial is None:
                break
            x, y, res, f, new = trial
            fresh = False
            err = new
        raise SolverError(f"Newton did not converge at t={t1:.6g}", t=t, history=history)

    def _try(self, x, y, res, err, x_n, f_n, t, a, method, fresh):
        """Newton update; with a stale Jacobian only contracting steps are accepted.

        The step is shortened only when it leaves the model's domain.
        """
        n_x = self.system.n_x
        dz = sla.lu_solve(self.lu, -res, check_finite=False)
        alpha = 1.0
        for _ in range(8):
            x1 = x + alpha * dz[:n_x]
            y1 = y + alpha * dz[n_x:]
            try:
                res1, f1, new = self._residual(x1, y1, x_n, f_n, t, a, method)
            except (DegenerateStateError, OverflowError, ValueError):
                alpha *= 0.5
                continue
            if not math.isfinite(new):
                alpha *= 0.5
                continue
            if new < err or fresh:
                return x1, y1, res1, f1, new
            return None
        return None


def step(system: DaeSystem, x, y, t, dt, opts: SolveOptions | None = None, method="trap"):
    """One implicit step from ``(x, y)`` at ``t``; returns ``(x', y')``."""
    opts = opts or SolveOptions(dt=dt)
    newton = _Newton(system, opts)
    f_n = system.residuals(x, y, t)[0]
    x1, y1, _, _ = newton.step(np.asarray(x, float), np.asarray(y, float), f_n, t, dt, method)
    return x1, y1


def simulate(
    system: DaeSystem,
    t_end: float,
    opts: SolveOptions | None = None,
    x0=None,
    y0=None,
    t0: float = 0.0,
    channels=None,
) -> TimeSeries:
    """Integrate from ``(x0, y0)`` to ``t_end`` applying the system's scheduled events.

    ``channels`` optionally restricts the recorded channel names.
    """
    opts = opts or getattr(system, "options", None) or SolveOptions()
    x = np.asarray(x0, dtype=float).copy()
    y = np.asarray(y0 if y0 is not None else np.zeros(system.n_y), dtype=float).copy()
    events = []
    for ev in system.events:
        if ev.time > t_end:
            warnings.warn(f"event {ev.kind} at t={ev.time} is after t_end={t_end}; ignored", RuntimeWarning)
        elif ev.time >= t0:
            events.append(ev)
    snap = system.snapshot()
    try:
        return _simulate(system, t_end, opts, x, y, t0, channels, events)
    finally:
        system.restore(snap)


def _simulate(system, t_end, opts, x, y, t0, channels, events):
    newton = _Newton(system, opts)
    times, rows = [], []
    names = None

    def record(t, x, y):
        nonlocal names
        ch = system.channels(x, y, t)
        if names is None:
            names = [k for k in ch if channels is None or k in channels]
        times.append(t)
        rows.append([ch[k] for k in names])

    def partial():
        if not times:
            return None
        arr = np.array(rows, dtype=float)
        return TimeSeries(np.array(times), {k: arr[:, j] for j, k in enumerate(names)})

    t = t0
    be_left = 0
    ev_idx = 0
    # events scheduled exactly at the start apply before the first sample
    while ev_idx < len(events) and events[ev_idx].time <= t:
        x, y = system.apply_event(events[ev_idx], x, y)
        ev_idx += 1
        y = solve_algebraic(system, x, y, t, opts.newton_tol)
        newton.invalidate()
        be_left = opts.be_steps_after_event
    y = solve_algebraic(system, x, y, t, opts.newton_tol)
    record(t, x, y)
    f_n = system.residuals(x, y, t)[0]
    n_step = 0
    eps_t = 1e-12 * max(1.0, abs(t_end))
    while t < t_end - eps_t:
        t_next_event = events[ev_idx].time if ev_idx < len(events) else math.inf
        dt = min(opts.dt, t_end - t, t_next_event - t)
        if dt <= eps_t:
            dt = min(opts.dt, t_end - t)
        method = "be" if be_left > 0 else "trap"
        done = False
        h = dt
        for _ in range(opts.max_halvings + 1):
            try:
                t_sub = t
                xs, ys, fs = x, y, f_n
                while t_sub < t + dt - eps_t:
                    hh = min(h, t + dt - t_sub)
                    xs, ys, fs, _ = newton.step(xs, ys, fs, t_sub, hh, method)
                    t_sub += hh
                done = True
                break
            except (SolverError, DegenerateStateError, np.linalg.LinAlgError, FloatingPointError, OverflowError) as exc:
                last_exc = exc
                newton.invalidate()
                h *= 0.5
        if not done:
            hist = getattr(last_exc, "history", [])
            raise SolverError(
                f"step at t={t:.6g} failed after {opts.max_halvings} halvings: {last_exc}",
                t=t,
                history=hist,
                partial=partial(),
            )
        if h != dt:
            newton.invalidate()
        x, y, f_n = system.wrap(xs), ys, fs
        if system.angle_indices.size:
            f_n = f_n if np.array_equal(x, xs) else system.residuals(x, y, t + dt)[0]
        t = t + dt
        if be_left > 0:
            be_left -= 1
            if be_left == 0:
                newton.invalidate()
        n_step += 1
        applied = False
        while ev_idx < len(events) and events[ev_idx].time <= t + eps_t:
            x, y = system.apply_event(events[ev_idx], x, y)
            ev_idx += 1
            applied = True
        if applied:
            y = solve_algebraic(system, x, y, t, opts.newton_tol)
            f_n = system.residuals(x, y, t)[0]
            newton.invalidate()
            be_left = opts.be_steps_after_event
            record(t, x, y)
        elif n_step % opts.record_every == 0 or t >= t_end - eps_t:
            record(t, x, y)
    return _dedupe(partial())


def _dedupe(ts: TimeSeries) -> TimeSeries:
    # an event sample shares its time stamp with the step that reached it; keep the post-event value
    t = ts.times
    keep = np.ones(t.size, dtype=bool)
    keep[:-1] = t[1:] > t[:-1]
    return TimeSeries(t[keep], {k: v[keep] for k, v in ts.channels.items()})


# --- equilibrium -------------------------------------------------------------------------


@dataclass
class Equilibrium:
    x: np.ndarray
    y: np.ndarray
    residual: float
    condition: float
    history: list


def find_equilibrium(
    system: DaeSystem,
    guess=None,
    opts: SolveOptions | None = None,
    tol: float | None = None,
    max_iter: int = 60,
    fallback: bool = True,
) -> Equilibrium:
    """Damped Newton on ``f = 0, g = 0``.

    ``guess`` is ``(x, y)``; for a :class:`PowerSystem` it defaults to the
    power-flow initialization.  Pinned states (frame reference) are held and
    their paired parameters solved instead.  On divergence the system is
    time-marched for 2 s and Newton is retried once.
    """
    opts = opts or getattr(system, "options", None) or SolveOptions()
    tol = opts.newton_tol if tol is None else tol
    if guess is None:
        if not isinstance(system, PowerSystem):
            raise ValueError("an initial guess is required")
        guess = system.initial_state()
    x0, y0 = (np.asarray(g, dtype=float).copy() for g in guess)
    if not (_finite(x0) and _finite(y0)):
        raise ValueError("equilibrium guess must be finite")
    try:
        x, y, hist = _newton_equilibrium(system, x0, y0, tol, max_iter)
    except (EquilibriumError, DegenerateStateError, np.linalg.LinAlgError) as exc:
        if not fallback:
            if isinstance(exc, EquilibriumError):
                raise
            raise EquilibriumError(f"equilibrium Newton failed: {exc}") from exc
        log.info("equilibrium Newton failed (%s); time-marching 2 s before retrying", exc)
        try:
            ts_opts = replace(opts, record_every=10**9)
            saved_events = system.events
            system.events = []
            try:
                xs, ys = _march(system, x0, y0, 2.0, ts_opts)
            finally:
                system.events = saved_events
            x, y, hist = _newton_equilibrium(system, xs, ys, tol, max_iter)
        except (SolverError, DegenerateStateError, np.linalg.LinAlgError) as exc2:
            history = getattr(exc, "history", [])
            raise EquilibriumError(
                f"equilibrium not found; Newton residual history {['%.3e' % h for h in history[-8:]]}; "
                f"time-march fallback failed: {exc2}",
                history=history,
            ) from exc2
    cond = algebraic_condition(system, x, y)
    if not math.isfinite(cond) or cond > 1e14:
        raise IndexViolationError(f"dg/dy is singular at the equilibrium (cond = {cond:.3e})")
    system.condition_log.append(cond)
    log.info("equilibrium found: residual %.3e, cond(dg/dy) = %.3e", hist[-1], cond)
    return Equilibrium(x, y, hist[-1], cond, hist)


def _march(system, x, y, t_end, opts):
    newton = _Newton(system, opts)
    f_n = system.residuals(x, y, 0.0)[0]
    t = 0.0
    while t < t_end:
        x, y, f_n, _ = newton.step(x, y, f_n, t, opts.dt, "be")
        x = system.wrap(x)
        t += opts.dt
    return x, y


def _newton_equilibrium(system, x, y, tol, max_iter):
    pins = system.pins()
    n_x = system.n_x
    pin_idx = [p[0] for p in pins]

    def pack(x, y):
        z = np.concatenate([x, y])
        for k, (i, get, _) in enumerate(pins):
            z[i] = get()
        return z

    def unpack(z):
        xz, yz = z[:n_x].copy(), z[n_x:].copy()
        for (i, _, setter) in pins:
            setter(float(z[i]))
            xz[i] = x_pinned[i]
        return xz, yz

    x_pinned = x.copy()
    z = pack(x, y)

    def resid(z):
        xz, yz = unpack(z)
        f, g = system.residuals(xz, yz)
        return np.concatenate([f, g])

    history = []
    r = resid(z)
    for _ in range(max_iter):
        err = float(np.max(np.abs(r)))
        history.append(err)
        if not math.isfinite(err):
            raise EquilibriumError("non-finite residual during equilibrium search", history=history)
        if err < tol:
            xz, yz = unpack(z)
            return xz, yz, history
        xz, yz = unpack(z)
        fx, fy, gx, gy = system.jacobian(xz, yz)
        jac = np.block([[fx, fy], [gx, gy]])
        for i in pin_idx:
            step = 1e-7 * max(1.0, abs(z[i]))
            zp = z.copy()
            zp[i] += step
            jac[:, i] = (resid(zp) - r) / step
            unpack(z)
        try:
            dz = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError as exc:
            raise EquilibriumError(f"singular Jacobian in equilibrium search: {exc}", history=history) from exc
        # rows are equilibrated for the merit function: network rows carry omega_base and
        # would otherwise reject the full Newton step that converges quadratically
        w = 1.0 / np.maximum(np.max(np.abs(jac), axis=1), 1e-12)
        alpha = 1.0
        norm0 = float(np.linalg.norm(w * r))
        for _ in range(30):
            z_try = z + alpha * dz
            try:
                r_try = resid(z_try)
                ok = _finite(r_try) and np.linalg.norm(w * r_try) <= (1.0 - 1e-4 * alpha) * norm0
            except (DegenerateStateError, OverflowError, ValueError):
                ok = False
            if ok:
                break
            alpha *= 0.5
        else:
            unpack(z)
            raise EquilibriumError(
                f"line search failed; residual history {['%.3e' % h for h in history[-8:]]}", history=history
            )
        z, r = z_try, r_try
    unpack(z)
    raise EquilibriumError(
        f"no convergence in {max_iter} iterations; residual history {['%.3e' % h for h in history[-8:]]}",
        history=history,
    )
