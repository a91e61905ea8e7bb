"""Scalar input signals, vector inputs and scenario files."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError


class Signal:
    """Scalar function of time with a left derivative."""

    def __call__(self, t):
        raise NotImplementedError

    def derivative(self, t):
        raise NotImplementedError

    def to_json(self):
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(Signal):
    value: float

    def __call__(self, t):
        return float(self.value)

    def derivative(self, t):
        return 0.0

    def to_json(self):
        return {"constant": self.value}


@dataclass(frozen=True)
class PiecewiseLinear(Signal):
    """Linear interpolation between breakpoints, constant outside them.

    ``derivative`` returns the slope of the segment ending at ``t`` (the left
    derivative), which is what a backward-in-time scheme sees.
    """

    times: tuple
    values: tuple

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.size == 0 or t.size != len(self.values):
            raise ValidationError("piecewise-linear signal needs matching, nonempty times and values")
        if np.any(np.diff(t) < 0):
            raise ValidationError("breakpoint times must be nondecreasing")

    def __call__(self, t):
        return float(np.interp(t, self.times, self.values))

    def derivative(self, t):
        ts, vs = self.times, self.values
        k = int(np.searchsorted(ts, t, side="left"))
        if k == 0 or k >= len(ts):
            return 0.0
        dt = ts[k] - ts[k - 1]
        return 0.0 if dt <= 0 else (vs[k] - vs[k - 1]) / dt

    def to_json(self):
        return {"pwl": [[a, b] for a, b in zip(self.times, self.values)]}


def step(time, before, after, ramp=0.0):
    """Step from ``before`` to ``after`` at ``time`` (optionally ramped).

    Without a ramp the signal is right-continuous: ``u(time) = after``.
    """
    if ramp < 0:
        raise ValidationError("ramp must be nonnegative")
    return PiecewiseLinear((time, time + ramp), (before, after))


@dataclass(frozen=True)
class Sine(Signal):
    """``offset + amplitude * sin(omega t + phase)``."""

    offset: float
    amplitude: float
    omega: float
    phase: float = 0.0

    def __call__(self, t):
        return self.offset + self.amplitude * np.sin(self.omega * t + self.phase)

    def derivative(self, t):
        return self.amplitude * self.omega * np.cos(self.omega * t + self.phase)

    def to_json(self):
        return {"sine": {"offset": self.offset, "amplitude": self.amplitude, "omega": self.omega, "phase": self.phase}}


@dataclass(frozen=True)
class InputSignal:
    """Vector input ``u(t)`` assembled from scalar channels."""

    channels: tuple

    @classmethod
    def of(cls, *channels):
        return cls(tuple(c if isinstance(c, Signal) else Constant(float(c)) for c in channels))

    @property
    def m(self):
        return len(self.channels)

    def __call__(self, t):
        return np.array([c(t) for c in self.channels], dtype=float)

    def derivative(self, t):
        return np.array([c.derivative(t) for c in self.channels], dtype=float)


def parse_signal(obj, where="signal"):
    """Signal from its JSON form.

    Accepted: a number, ``{"constant": v}``, ``{"pwl": [[t, v], ...]}``,
    ``{"step": {"time", "before", "after", "ramp"?}}`` or
    ``{"sine": {"offset", "amplitude", "omega", "phase"?}}``.
    """
    if isinstance(obj, (int, float)) and not isinstance(obj, bool):
        return Constant(float(obj))
    if not isinstance(obj, dict) or len(obj) != 1:
        raise ParseError("signal must be a number or a one-key object", field=where)
    (kind, val), = obj.items()
    try:
        if kind == "constant":
            return Constant(float(val))
        if kind == "pwl":
            pts = [(float(a), float(b)) for a, b in val]
            return PiecewiseLinear(tuple(p[0] for p in pts), tuple(p[1] for p in pts))
        if kind == "step":
            return step(float(val["time"]), float(val["before"]), float(val["after"]), float(val.get("ramp", 0.0)))
        if kind == "sine":
            return Sine(float(val["offset"]), float(val["amplitude"]), float(val["omega"]), float(val.get("phase", 0.0)))
    except (TypeError, ValueError, KeyError) as exc:
        raise ParseError(f"malformed {kind} signal: {exc}", field=where) from exc
    raise ParseError(f"unknown signal kind {kind!r}", field=where)


@dataclass(frozen=True)
class Scenario:
    """Simulation horizon plus per-node supply pressures and demand flows."""

    t_end: float
    dt: float
    supply: dict = field(default_factory=dict)
    demand: dict = field(default_factory=dict)
    t0: float = 0.0

    def input_signal(self, supply_ids, demand_ids):
        """``u = (s, d)`` ordered like the network's supply and demand nodes."""
        missing = [i for i in supply_ids if i not in self.supply] + [i for i in demand_ids if i not in self.demand]
        if missing:
            raise ValidationError(f"scenario has no signal for nodes {missing}")
        extra = set(self.supply) - set(supply_ids) | set(self.demand) - set(demand_ids)
        if extra:
            raise ValidationError(f"scenario names unknown nodes {sorted(extra)}")
        return InputSignal(tuple(self.supply[i] for i in supply_ids) + tuple(self.demand[i] for i in demand_ids))

    def to_json(self):
        return {
            "t0": self.t0,
            "t_end": self.t_end,
            "dt": self.dt,
            "supply": [{"node": k, "signal": v.to_json()} for k, v in self.supply.items()],
            "demand": [{"node": k, "signal": v.to_json()} for k, v in self.demand.items()],
        }


def parse_scenario(text):
    """Scenario from JSON text ``{t_end, dt, supply: [{node, signal}], demand: [...]}``."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(doc, dict):
        raise ParseError("scenario must be a JSON object")
    for key in ("t_end", "dt"):
        if key not in doc:
            raise ParseError("missing key", field=key)
    try:
        t0, t_end, dt = float(doc.get("t0", 0.0)), float(doc["t_end"]), float(doc["dt"])
    except (TypeError, ValueError) as exc:
        raise ParseError("t0, t_end and dt must be numbers") from exc
    if dt <= 0:
        raise ParseError("dt must be positive", field="dt")
    if t_end <= t0:
        raise ParseError("t_end must exceed t0", field="t_end")
    groups = {}
    for key in ("supply", "demand"):
        entries = doc.get(key, [])
        if not isinstance(entries, list):
            raise ParseError("expected a list", field=key)
        out = {}
        for k, ent in enumerate(entries):
            if not isinstance(ent, dict) or "node" not in ent or "signal" not in ent:
                raise ParseError("entry needs 'node' and 'signal'", field=f"{key}[{k}]")
            node = str(ent["node"])
            if node in out:
                raise ParseError(f"duplicate node {node!r}", field=f"{key}[{k}]")
            out[node] = parse_signal(ent["signal"], where=f"{key}[{k}].signal")
        groups[key] = out
    return Scenario(t_end=t_end, dt=dt, supply=groups["supply"], demand=groups["demand"], t0=t0)
