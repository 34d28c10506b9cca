"""Scenario configuration: JSON ingestion with unit tags, validation and assembly.

A scenario file is a JSON tree.  Every numeric parameter may be written either
as a bare number in its canonical unit or as ``{"value": x, "unit": "..."}``.
Loading converts everything to the canonical units used by the models (pu on
the device base, seconds, rad/s for filter cut-offs) and rejects unknown keys.
``emit`` writes the canonical form back with explicit unit tags, so
``load_config_dict(emit(cfg)) == cfg``.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field, fields, is_dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Any

from .converter import (
    CurrentControlGains,
    DcLinkParams,
    FilterParams,
    FollowingOuterParams,
    FormingParams,
    VoltageControlGains,
)
from .dae import EVENT_KINDS, Event, InfiniteBus, NetBranch, PowerSystem, SolveOptions
from .devices import (
    FollowingConfig,
    FollowingConverter,
    FormingConfig,
    FormingConverter,
    ImpedanceLoad,
    SgConfig,
    StiffSource,
    SynchronousGenerator,
)
from .network import SgModel, stiff_grid
from .sync import PllParams, TransformerParams, VimParams

DEVICE_TYPES = ("following_pll", "following_vim", "forming", "sg", "stiff_grid", "rl_load")
INIT_MODES = ("equilibrium", "cold_start")


class ConfigError(ValueError):
    """Schema or invariant violations, each tagged with its field path."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = list(errors)
        super().__init__("; ".join(f"{p}: {m}" for p, m in self.errors))


# --- units ----------------------------------------------------------------------

# quantity kind of every parameter that is not plain per unit
_KIND = {
    "t_aw": "time", "t_d01": "time", "t_q01": "time", "t_d02": "time", "t_q02": "time",
    "t_gov": "time", "t_avr": "time", "time": "time", "dt": "time", "t_end": "time",
    "open_branch_tau": "time",
    "omega_ref": "rate", "omega_z": "rate",
    "omega_set": "frequency", "omega0_star": "frequency", "omega0": "frequency",
    "h_inertia": "inertia", "h": "inertia",
    "d_damping": "damping",
    "theta": "angle",
    "v_mag": "voltage", "v_set": "voltage", "v_ref": "voltage",
    "p_set": "power", "q_set": "power", "p": "power", "q": "power", "p_gen": "power",
    "rating": "rating",
}

CANONICAL_UNIT = {
    "pu": "pu", "time": "s", "rate": "rad/s", "frequency": "pu", "inertia": "s",
    "damping": "pu", "angle": "rad", "voltage": "pu", "power": "pu", "rating": "pu",
}


@dataclass(frozen=True)
class BaseSpec:
    """System base: apparent power [MVA], line voltage [V], frequency [Hz]."""

    s_base_mva: float = 1.5
    v_base: float = 690.0
    f_base: float = 50.0

    @property
    def omega_base(self) -> float:
        return 2.0 * math.pi * self.f_base


def _factor(kind: str, unit: str, base: BaseSpec, s_dev_mva: float) -> float:
    """Multiplier taking ``unit`` to the canonical unit of ``kind``."""
    wb = base.omega_base
    s_dev = s_dev_mva * 1e6
    table = {
        "pu": {"pu": 1.0, "1": 1.0},
        "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6},
        "rate": {"rad/s": 1.0, "1/s": 1.0, "Hz": 2.0 * math.pi},
        "frequency": {"pu": 1.0, "Hz": 1.0 / base.f_base, "rad/s": 1.0 / wb},
        "inertia": {"s": 1.0, "kg m^2": 0.5 * wb**2 / s_dev},
        "damping": {"pu": 1.0, "N m s/rad": wb**2 / s_dev},
        "angle": {"rad": 1.0, "deg": math.pi / 180.0},
        "voltage": {"pu": 1.0, "V": 1.0 / base.v_base, "kV": 1e3 / base.v_base},
        "power": {"pu": 1.0, "W": 1.0 / s_dev, "kW": 1e3 / s_dev, "MW": 1e6 / s_dev,
                  "var": 1.0 / s_dev, "kvar": 1e3 / s_dev, "Mvar": 1e6 / s_dev},
        "rating": {"pu": 1.0, "MVA": 1.0 / base.s_base_mva, "kVA": 1e-3 / base.s_base_mva},
    }
    try:
        return table[kind][unit]
    except KeyError:
        raise ValueError(f"unit {unit!r} not valid for a {kind} quantity; use one of {sorted(table[kind])}") from None


class _Ctx:
    def __init__(self, base: BaseSpec):
        self.base = base
        self.errors: list[tuple[str, str]] = []

    def err(self, path: str, msg: str):
        self.errors.append((path, msg))

    def number(self, raw, name: str, path: str, s_dev_mva: float | None = None):
        kind = _KIND.get(name, "pu")
        unit = CANONICAL_UNIT[kind]
        value = raw
        if isinstance(raw, dict):
            extra = set(raw) - {"value", "unit"}
            if extra or "value" not in raw:
                self.err(path, f"unit-tagged value needs exactly 'value' and 'unit', got keys {sorted(raw)}")
                return None
            value, unit = raw["value"], raw.get("unit", unit)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.err(path, f"expected a number, got {value!r}")
            return None
        try:
            k = _factor(kind, unit, self.base, s_dev_mva if s_dev_mva is not None else self.base.s_base_mva)
        except ValueError as exc:
            self.err(path, str(exc))
            return None
        out = float(value) * k
        if not math.isfinite(out):
            self.err(path, f"value must be finite, got {value!r}")
            return None
        return out

    def keys(self, obj, allowed, path: str, required=()) -> bool:
        if not isinstance(obj, dict):
            self.err(path, f"expected an object, got {type(obj).__name__}")
            return False
        for k in obj:
            if k not in allowed:
                self.err(f"{path}.{k}" if path else k, f"unknown key (allowed: {sorted(allowed)})")
        for k in required:
            if k not in obj:
                self.err(f"{path}.{k}" if path else k, "missing required key")
        return True


# --- config types ---------------------------------------------------------------------


@dataclass(frozen=True)
class BranchSpec:
    name: str
    from_bus: str
    to_bus: str
    r: float
    l: float
    c: float = 0.0
    tap: float = 1.0


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    buses: tuple[str, ...]
    branches: tuple[BranchSpec, ...]
    # file the network came from, kept so that emit can reference it again
    source: str | None = None


@dataclass(frozen=True)
class DeviceSpec:
    """``params`` holds canonical values, nested one level for parameter groups."""

    name: str
    type: str
    bus: str
    rating: float = 1.0
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EventSpec:
    time: float
    kind: str
    payload: dict = field(default_factory=dict)


@dataclass(frozen=True)
class InitSpec:
    mode: str = "equilibrium"
    cold_devices: tuple[str, ...] = ()


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    network: NetworkSpec
    devices: tuple[DeviceSpec, ...]
    base: BaseSpec = field(default_factory=BaseSpec)
    events: tuple[EventSpec, ...] = ()
    solver: SolveOptions = field(default_factory=SolveOptions)
    init: InitSpec = field(default_factory=InitSpec)
    t_end: float = 3.0
    channels: tuple[str, ...] | None = None
    description: str = ""

    def device(self, name: str) -> DeviceSpec:
        for d in self.devices:
            if d.name == name:
                return d
        raise KeyError(f"no device named {name!r}")

    def with_device(self, name: str, **changes) -> ScenarioConfig:
        """Copy with one device spec replaced field-wise."""
        self.device(name)
        devs = tuple(replace(d, **changes) if d.name == name else d for d in self.devices)
        return replace(self, devices=devs)

    def with_param(self, name: str, path: str, value: float) -> ScenarioConfig:
        """Copy with a canonical parameter set; ``path`` is ``"group.field"`` or ``"field"``."""
        dev = self.device(name)
        params = {k: (dict(v) if isinstance(v, dict) else v) for k, v in dev.params.items()}
        if "." in path:
            group, key = path.split(".", 1)
            params.setdefault(group, {})[key] = value
        else:
            params[path] = value
        return self.with_device(name, params=params)


# --- parameter schemas per device type ---------------------------------------------------

_GROUPS = {
    "following_pll": {"outer": FollowingOuterParams, "pll": PllParams, "filt": FilterParams,
                      "current": CurrentControlGains, "dc": DcLinkParams, "trafo": TransformerParams},
    "following_vim": {"outer": FollowingOuterParams, "vim": VimParams, "filt": FilterParams,
                      "current": CurrentControlGains, "dc": DcLinkParams, "trafo": TransformerParams},
    "forming": {"droop": FormingParams, "voltage": VoltageControlGains, "filt": FilterParams,
                "current": CurrentControlGains, "dc": DcLinkParams, "trafo": TransformerParams},
    "sg": {"model": SgModel},
    "stiff_grid": {},
    "rl_load": {},
}
_SCALARS = {
    "following_pll": ("i_max", "omega_ref", "eps_v"),
    "following_vim": ("i_max", "omega_ref", "eps_v"),
    "forming": ("i_max",),
    "sg": ("p_gen", "v_set", "slack"),
    "stiff_grid": ("v_mag", "theta", "scr", "x_over_r"),
    "rl_load": ("p", "q"),
}
_REQUIRED = {"rl_load": ("p",)}
_BOOL = {"slack"}
_INT = {"order", "max_newton_iters", "jacobian_refresh", "max_halvings", "be_steps_after_event", "record_every"}


def _parse_scalar(ctx: _Ctx, name, raw, path, s_dev):
    if name in _BOOL:
        if not isinstance(raw, bool):
            ctx.err(path, f"expected true/false, got {raw!r}")
            return None
        return raw
    if name in _INT:
        if isinstance(raw, bool) or not isinstance(raw, int):
            ctx.err(path, f"expected an integer, got {raw!r}")
            return None
        return raw
    return ctx.number(raw, name, path, s_dev)


def _parse_params(ctx: _Ctx, dtype: str, raw: dict, path: str, s_dev: float) -> dict:
    groups, scalars = _GROUPS[dtype], _SCALARS[dtype]
    if not ctx.keys(raw, set(groups) | set(scalars), path, _REQUIRED.get(dtype, ())):
        return {}
    out: dict[str, Any] = {}
    for key, val in raw.items():
        sub = f"{path}.{key}"
        if key in groups:
            allowed = {f.name for f in fields(groups[key])}
            if not ctx.keys(val, allowed, sub):
                continue
            out[key] = {}
            for k, v in val.items():
                if k in allowed:
                    parsed = _parse_scalar(ctx, k, v, f"{sub}.{k}", s_dev)
                    if parsed is not None:
                        out[key][k] = parsed
        elif key in scalars:
            if key == "scr" and val is None:
                out[key] = None
                continue
            parsed = _parse_scalar(ctx, key, val, sub, s_dev)
            if parsed is not None:
                out[key] = parsed
    return out


# --- loading ------------------------------------------------------------------------------

_TOP_KEYS = {"name", "description", "base", "network", "devices", "events", "solver",
             "initialization", "t_end", "channels"}


def data_dir() -> Path:
    return Path(str(resources.files("vimsync") / "data"))


def fixture_path(name: str) -> Path:
    """Path of a shipped scenario fixture (``fig2_vim`` or ``fig2_vim.json``)."""
    stem = name[:-5] if name.endswith(".json") else name
    return data_dir() / "scenarios" / f"{stem}.json"


def load_fixture(name: str) -> ScenarioConfig:
    return load_config(fixture_path(name))


def _parse_base(ctx: _Ctx, raw) -> BaseSpec:
    if raw is None:
        return BaseSpec()
    if not ctx.keys(raw, {"s_base", "v_base", "f_base"}, "base"):
        return BaseSpec()
    units = {"s_base": {"MVA": 1.0, "kVA": 1e-3, "VA": 1e-6},
             "v_base": {"V": 1.0, "kV": 1e3},
             "f_base": {"Hz": 1.0}}
    vals = {}
    for key, table in units.items():
        if key not in raw:
            continue
        item = raw[key]
        value, unit = (item.get("value"), item.get("unit")) if isinstance(item, dict) else (item, None)
        unit = unit or next(iter(table))
        if unit not in table or isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
            ctx.err(f"base.{key}", f"expected a positive number in {sorted(table)}, got {item!r}")
            continue
        vals[key] = float(value) * table[unit]
    return BaseSpec(vals.get("s_base", 1.5), vals.get("v_base", 690.0), vals.get("f_base", 50.0))


def _parse_network(ctx: _Ctx, raw, base_dir: Path | None) -> NetworkSpec | None:
    source = None
    if isinstance(raw, dict) and set(raw) == {"file"}:
        source = raw["file"]
        candidates = []
        if base_dir is not None:
            candidates.append(base_dir / source)
        candidates.append(data_dir() / "networks" / source)
        path = next((p for p in candidates if p.is_file()), None)
        if path is None:
            ctx.err("network.file", f"network file {source!r} not found")
            return None
        with open(path) as fh:
            raw = json.load(fh)
    if not ctx.keys(raw, {"name", "buses", "branches", "base_mva", "dispatch"}, "network", ("buses", "branches")):
        return None
    buses = raw.get("buses", [])
    if not isinstance(buses, list) or not buses:
        ctx.err("network.buses", "expected a non-empty list of bus names")
        return None
    buses = tuple(str(b) for b in buses)
    branches = []
    for k, br in enumerate(raw.get("branches", [])):
        p = f"network.branches[{k}]"
        if not ctx.keys(br, {"name", "from", "to", "r", "l", "c", "tap"}, p, ("name", "from", "to", "r", "l")):
            continue
        vals = {}
        for key in ("r", "l", "c", "tap"):
            if key in br:
                v = ctx.number(br[key], key, f"{p}.{key}")
                if v is not None:
                    vals[key] = v
        branches.append(BranchSpec(str(br["name"]), str(br["from"]), str(br["to"]), vals.get("r", 0.0),
                                   vals.get("l", 0.0), vals.get("c", 0.0), vals.get("tap", 1.0)))
    return NetworkSpec(str(raw.get("name", "")), buses, tuple(branches), source)


def load_config_dict(raw: dict, base_dir: Path | None = None) -> ScenarioConfig:
    """Validate a JSON tree and return the canonical config; raises ``ConfigError``."""
    ctx = _Ctx(BaseSpec())
    if not ctx.keys(raw, _TOP_KEYS, "", ("name", "network", "devices")):
        raise ConfigError(ctx.errors)
    ctx.base = _parse_base(ctx, raw.get("base"))
    network = _parse_network(ctx, raw.get("network"), base_dir)

    devices = []
    names = set()
    for k, dev in enumerate(raw.get("devices", [])):
        p = f"devices[{k}]"
        if not ctx.keys(dev, {"name", "type", "bus", "rating", "params"}, p, ("name", "type", "bus")):
            continue
        dtype = dev.get("type")
        if dtype not in DEVICE_TYPES:
            ctx.err(f"{p}.type", f"unknown device type {dtype!r}; expected one of {DEVICE_TYPES}")
            continue
        name = str(dev.get("name"))
        if name in names:
            ctx.err(f"{p}.name", f"duplicate device name {name!r}")
        names.add(name)
        rating = 1.0
        if "rating" in dev:
            rating = ctx.number(dev["rating"], "rating", f"{p}.rating")
            if rating is not None and not rating > 0:
                ctx.err(f"{p}.rating", f"rating must be > 0, got {rating}")
            rating = rating or 1.0
        bus = str(dev.get("bus"))
        if network is not None and bus not in network.buses:
            ctx.err(f"{p}.bus", f"unknown bus {bus!r}")
        # SI values convert on the device's own base
        params = _parse_params(ctx, dtype, dev.get("params", {}), f"{p}.params", rating * ctx.base.s_base_mva)
        devices.append(DeviceSpec(name, dtype, bus, rating, params))

    events = []
    for k, ev in enumerate(raw.get("events", [])):
        p = f"events[{k}]"
        if not ctx.keys(ev, {"time", "kind", "payload"}, p, ("time", "kind")):
            continue
        t = ctx.number(ev["time"], "time", f"{p}.time")
        kind = ev.get("kind")
        if kind not in EVENT_KINDS:
            ctx.err(f"{p}.kind", f"unknown event kind {kind!r}; expected one of {EVENT_KINDS}")
            continue
        payload = _parse_payload(ctx, kind, ev.get("payload", {}), f"{p}.payload", devices, network)
        if t is not None and payload is not None:
            if t < 0:
                ctx.err(f"{p}.time", "event time must be >= 0")
            events.append(EventSpec(t, kind, payload))

    solver = SolveOptions()
    if "solver" in raw:
        allowed = {f.name for f in fields(SolveOptions)}
        if ctx.keys(raw["solver"], allowed, "solver"):
            vals = {}
            for k, v in raw["solver"].items():
                if k in allowed:
                    parsed = _parse_scalar(ctx, k, v, f"solver.{k}", None)
                    if parsed is not None:
                        vals[k] = parsed
            try:
                solver = SolveOptions(**vals)
            except ValueError as exc:
                ctx.err("solver", str(exc))

    init = InitSpec()
    if "initialization" in raw:
        ini = raw["initialization"]
        if ctx.keys(ini, {"mode", "cold_devices"}, "initialization"):
            mode = ini.get("mode", "equilibrium")
            cold = tuple(ini.get("cold_devices", ()))
            if mode not in INIT_MODES:
                ctx.err("initialization.mode", f"expected one of {INIT_MODES}, got {mode!r}")
            for c in cold:
                if c not in names:
                    ctx.err("initialization.cold_devices", f"unknown device {c!r}")
            init = InitSpec(mode, cold)

    t_end = 3.0
    if "t_end" in raw:
        t_end = ctx.number(raw["t_end"], "t_end", "t_end")
        if t_end is not None and not t_end > 0:
            ctx.err("t_end", "must be > 0")
    channels = raw.get("channels")
    if channels is not None:
        if not isinstance(channels, list) or not all(isinstance(c, str) for c in channels):
            ctx.err("channels", "expected a list of channel names or null")
        channels = tuple(channels)

    if ctx.errors:
        raise ConfigError(ctx.errors)
    cfg = ScenarioConfig(
        name=str(raw["name"]),
        network=network,
        devices=tuple(devices),
        base=ctx.base,
        events=tuple(events),
        solver=solver,
        init=init,
        t_end=t_end,
        channels=channels,
        description=str(raw.get("description", "")),
    )
    # model invariants (positive inductances, slip limits, ...) are checked by building the devices
    errors = []
    for k, spec in enumerate(cfg.devices):
        try:
            make_device(spec, cfg.base)
        except (ValueError, TypeError) as exc:
            errors.append((f"devices[{k}].params", str(exc)))
    if errors:
        raise ConfigError(errors)
    return cfg


def _parse_payload(ctx, kind, raw, path, devices, network):
    if not isinstance(raw, dict):
        ctx.err(path, "payload must be an object")
        return None
    dev_names = {d.name: d for d in devices}
    if kind in ("breaker_open", "breaker_close"):
        ctx.keys(raw, {"branch"}, path, ("branch",))
        if network is not None and raw.get("branch") not in {b.name for b in network.branches}:
            ctx.err(f"{path}.branch", f"unknown branch {raw.get('branch')!r}")
        return {"branch": raw.get("branch")}
    if kind in ("three_phase_fault_on", "fault_clear"):
        ctx.keys(raw, {"bus", "r"}, path, ("bus",))
        if network is not None and str(raw.get("bus")) not in network.buses:
            ctx.err(f"{path}.bus", f"unknown bus {raw.get('bus')!r}")
        out = {"bus": str(raw.get("bus"))}
        if "r" in raw:
            out["r"] = ctx.number(raw["r"], "r", f"{path}.r")
        return out
    if kind == "setpoint_step":
        ctx.keys(raw, {"device", "param", "value"}, path, ("device", "param", "value"))
        dev = dev_names.get(raw.get("device"))
        if dev is None:
            ctx.err(f"{path}.device", f"unknown device {raw.get('device')!r}")
            return None
        param = str(raw.get("param"))
        value = ctx.number(raw.get("value"), param, f"{path}.value", dev.rating * ctx.base.s_base_mva)
        return {"device": dev.name, "param": param, "value": value}
    # load_step
    ctx.keys(raw, {"device", "scale", "p", "q"}, path, ("device",))
    dev = dev_names.get(raw.get("device"))
    if dev is None or dev.type != "rl_load":
        ctx.err(f"{path}.device", f"load_step needs an rl_load device, got {raw.get('device')!r}")
        return None
    out = {"device": dev.name}
    for key in ("scale", "p", "q"):
        if key in raw:
            out[key] = ctx.number(raw[key], "pu" if key == "scale" else key, f"{path}.{key}")
    return out


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError([("", f"invalid JSON: {exc}")]) from None
    return load_config_dict(raw, path.parent)


# --- emission -------------------------------------------------------------------------------


def _tag(name: str, value):
    if isinstance(value, bool) or isinstance(value, int) and name in _INT or value is None:
        return value
    return {"value": value, "unit": CANONICAL_UNIT[_KIND.get(name, "pu")]}


def emit(cfg: ScenarioConfig) -> dict:
    """Canonical JSON tree of a config (unit-tagged)."""
    b = cfg.base
    net = cfg.network
    if net.source is not None:
        network = {"file": net.source}
    else:
        network = {
            "name": net.name,
            "buses": list(net.buses),
            "branches": [
                {"name": br.name, "from": br.from_bus, "to": br.to_bus, "r": br.r, "l": br.l, "c": br.c, "tap": br.tap}
                for br in net.branches
            ],
        }
    devices = []
    for d in cfg.devices:
        params = {}
        for k, v in d.params.items():
            params[k] = {kk: _tag(kk, vv) for kk, vv in v.items()} if isinstance(v, dict) else _tag(k, v)
        devices.append({"name": d.name, "type": d.type, "bus": d.bus, "rating": _tag("rating", d.rating), "params": params})
    events = [{"time": _tag("time", e.time), "kind": e.kind, "payload": _emit_payload(e)} for e in cfg.events]
    solver = {f.name: _tag(f.name, getattr(cfg.solver, f.name)) for f in fields(SolveOptions)}
    return {
        "name": cfg.name,
        "description": cfg.description,
        "base": {
            "s_base": {"value": b.s_base_mva, "unit": "MVA"},
            "v_base": {"value": b.v_base, "unit": "V"},
            "f_base": {"value": b.f_base, "unit": "Hz"},
        },
        "network": network,
        "devices": devices,
        "events": events,
        "solver": solver,
        "initialization": {"mode": cfg.init.mode, "cold_devices": list(cfg.init.cold_devices)},
        "t_end": _tag("t_end", cfg.t_end),
        "channels": list(cfg.channels) if cfg.channels is not None else None,
    }


def _emit_payload(e: EventSpec) -> dict:
    out = dict(e.payload)
    if e.kind == "setpoint_step":
        out["value"] = _tag(out["param"], out["value"])
    return out


def save_config(cfg: ScenarioConfig, path) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(emit(cfg), fh, indent=2)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --- assembly -----------------------------------------------------------------------------------


def _build_dataclass(cls, values: dict):
    return cls(**values) if values else cls()


def make_device(spec: DeviceSpec, base: BaseSpec | None = None):
    """Instantiate the model object of one device spec."""
    p = spec.params
    t = spec.type
    if t in ("following_pll", "following_vim"):
        kw = {g: _build_dataclass(cls, p.get(g, {})) for g, cls in _GROUPS[t].items()}
        kw.update({k: p[k] for k in _SCALARS[t] if k in p})
        return FollowingConverter(spec.name, spec.bus, spec.rating, FollowingConfig(sync=t.split("_")[1], **kw))
    if t == "forming":
        kw = {g: _build_dataclass(cls, p.get(g, {})) for g, cls in _GROUPS[t].items()}
        kw.update({k: p[k] for k in _SCALARS[t] if k in p})
        return FormingConverter(spec.name, spec.bus, spec.rating, FormingConfig(**kw))
    if t == "sg":
        model = _build_dataclass(SgModel, p.get("model", {}))
        cfg = SgConfig(model=model, p_gen=p.get("p_gen", 0.5), v_set=p.get("v_set", 1.0))
        return SynchronousGenerator(spec.name, spec.bus, spec.rating, cfg, slack=p.get("slack", False))
    if t == "stiff_grid":
        grid = stiff_grid(p.get("v_mag", 1.0), p.get("theta", 0.0), p.get("scr"), p.get("x_over_r", 10.0))
        z = grid.impedance
        if z is None:
            return InfiniteBus(spec.name, spec.bus, grid.v_mag, grid.theta)
        return StiffSource(spec.name, spec.bus, grid.v_mag, grid.theta, z[0], z[1])
    if t == "rl_load":
        return ImpedanceLoad(spec.name, spec.bus, p["p"], p.get("q", 0.0))
    raise ValueError(f"unknown device type {t!r}")


def build_system(cfg: ScenarioConfig) -> PowerSystem:
    """Assemble a fresh ``PowerSystem``; every call returns independent objects."""
    branches = [NetBranch(b.name, b.from_bus, b.to_bus, b.r, b.l, b.c, b.tap) for b in cfg.network.branches]
    devices = [make_device(d, cfg.base) for d in cfg.devices]
    events = [Event(e.time, e.kind, dict(e.payload)) for e in cfg.events]
    return PowerSystem(
        cfg.network.buses, branches, devices, events, cfg.solver, name=cfg.name, omega_base=cfg.base.omega_base
    )


def initial_point(system: PowerSystem, cfg: ScenarioConfig):
    """Initial ``(x, y)``: an equilibrium or the scripted cold start of the listed devices."""
    from .dae import find_equilibrium

    if cfg.init.mode == "cold_start":
        return system.initial_state(cold_start=cfg.init.cold_devices)
    eq = find_equilibrium(system)
    return eq.x, eq.y


def flatten_params(cfg) -> dict:
    """Flat ``group.field -> value`` view of a dataclass config tree (for reporting)."""
    out = {}

    def walk(obj, prefix):
        for f in fields(obj):
            v = getattr(obj, f.name)
            if is_dataclass(v):
                walk(v, f"{prefix}{f.name}.")
            else:
                out[f"{prefix}{f.name}"] = v

    walk(cfg, "")
    return out


def run(cfg: ScenarioConfig, t_end: float | None = None, dt: float | None = None):
    """Build, initialize and simulate a scenario; returns ``(system, TimeSeries)``."""
    from .dae import simulate

    opts = cfg.solver if dt is None else replace(cfg.solver, dt=dt)
    system = build_system(replace(cfg, solver=opts))
    x0, y0 = initial_point(system, cfg)
    ts = simulate(system, cfg.t_end if t_end is None else t_end, opts, x0, y0, channels=cfg.channels)
    return system, ts
