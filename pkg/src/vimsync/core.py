"""Per-unit bases, dq vectors and time-series containers."""

from __future__ import annotations

import csv
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True)
class PerUnitBase:
    """Three-phase per-unit base.

    ``v_base`` is line-to-line RMS. Current and torque bases are derived so
    that ``s_base = sqrt(3) * v_base * i_base`` and ``t_base = s_base / omega_base``.
    """

    s_base: float = 1.5e6
    v_base: float = 690.0
    omega_base: float = 2.0 * math.pi * 50.0

    def __post_init__(self):
        for name in ("s_base", "v_base", "omega_base"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be finite and > 0, got {value!r}")

    @property
    def i_base(self) -> float:
        return self.s_base / (math.sqrt(3.0) * self.v_base)

    @property
    def t_base(self) -> float:
        return self.s_base / self.omega_base

    @property
    def z_base(self) -> float:
        return self.v_base**2 / self.s_base

    @property
    def f_base(self) -> float:
        return self.omega_base / (2.0 * math.pi)

    def to_pu(self, value: float, kind: str) -> float:
        return value / self._base_of(kind)

    def to_si(self, value: float, kind: str) -> float:
        return value * self._base_of(kind)

    def _base_of(self, kind: str) -> float:
        bases = {
            "power": self.s_base,
            "voltage": self.v_base,
            "current": self.i_base,
            "torque": self.t_base,
            "impedance": self.z_base,
            "angular_frequency": self.omega_base,
        }
        try:
            return bases[kind]
        except KeyError:
            raise ValueError(f"unknown quantity kind {kind!r}") from None

    def inertia_constant(self, j_inertia: float) -> float:
        """Normalized inertia constant H [s] of a rotor with moment of inertia J [kg m^2]."""
        return 0.5 * j_inertia * self.omega_base**2 / self.s_base

    def damping_pu(self, d_si: float) -> float:
        """Damping torque coefficient [N m s/rad] expressed in pu torque per pu speed."""
        return d_si * self.omega_base**2 / self.s_base


class DqVector(NamedTuple):
    """Two-component signal in a rotating dq frame (per unit)."""

    d: float
    q: float

    def norm(self) -> float:
        return math.hypot(self.d, self.q)

    def __add__(self, other):  # type: ignore[override]
        return DqVector(self.d + other.d, self.q + other.q)

    def __sub__(self, other):
        return DqVector(self.d - other.d, self.q - other.q)

    def __neg__(self):
        return DqVector(-self.d, -self.q)

    def scale(self, alpha: float) -> DqVector:
        return DqVector(alpha * self.d, alpha * self.q)

    def dot(self, other) -> float:
        return self.d * other.d + self.q * other.q

    def rotate(self, angle: float) -> DqVector:
        """Express the vector in a frame lagging by ``-angle`` (i.e. multiply by e^{j angle})."""
        c, s = math.cos(angle), math.sin(angle)
        return DqVector(c * self.d - s * self.q, s * self.d + c * self.q)

    @classmethod
    def from_complex(cls, z: complex) -> DqVector:
        return cls(z.real, z.imag)

    def to_complex(self) -> complex:
        return complex(self.d, self.q)


def rotate90(v: DqVector) -> DqVector:
    """Apply the 90-degree rotation [[0, -1], [1, 0]], i.e. multiplication by j."""
    return DqVector(-v.q, v.d)


def instantaneous_power(v_f: DqVector, i_g: DqVector) -> tuple[float, float]:
    """Active and reactive power ``(v.i, v.rotate90(i))`` on an amplitude-invariant base."""
    p = v_f.d * i_g.d + v_f.q * i_g.q
    q = v_f.q * i_g.d - v_f.d * i_g.q
    return p, q


@dataclass
class TimeSeries:
    """Named per-unit traces sampled on a common, strictly increasing time axis."""

    times: np.ndarray
    channels: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1:
            raise ValueError("time axis must be one-dimensional")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("time axis must be strictly increasing")
        for name, trace in list(self.channels.items()):
            trace = np.asarray(trace, dtype=float)
            if trace.shape != self.times.shape:
                raise ValueError(
                    f"channel {name!r} has {trace.size} samples, time axis has {self.times.size}"
                )
            self.channels[name] = trace

    def __getitem__(self, name: str) -> np.ndarray:
        return self.channels[name]

    def __len__(self) -> int:
        return self.times.size

    def names(self) -> list[str]:
        return list(self.channels)

    def window(self, t_start: float, t_stop: float = math.inf) -> TimeSeries:
        mask = (self.times >= t_start) & (self.times <= t_stop)
        return TimeSeries(self.times[mask], {k: v[mask] for k, v in self.channels.items()})

    def value_at(self, name: str, t: float) -> float:
        return float(np.interp(t, self.times, self.channels[name]))

    def to_csv(self, path: str | os.PathLike) -> None:
        """Write ``time_s`` plus every channel at full double precision, atomically."""
        header = ["time_s", *self.channels]
        columns = [self.times, *self.channels.values()]
        write_csv_atomic(path, header, zip(*columns))

    @classmethod
    def from_csv(cls, path: str | os.PathLike) -> TimeSeries:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = np.array([[float(v) for v in row] for row in reader], dtype=float)
        if header[0] != "time_s":
            raise ValueError(f"first column must be time_s, got {header[0]!r}")
        rows = rows.reshape(-1, len(header))
        return cls(rows[:, 0], {name: rows[:, k] for k, name in enumerate(header) if k > 0})


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv_atomic(path, header, rows) -> None:
    """Write a CSV via a temporary file in the target directory and rename it into place."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", suffix=".csv", dir=directory)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
