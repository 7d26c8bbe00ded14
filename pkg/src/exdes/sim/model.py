"""Refrigerator model and scenario definitions with their file grammars.

Model files describe the plant::

    chamber main cap=12000 setpoint=5.0 band=2.0 k_door=6.0 cool_share=0.3175
    chamber freezer cap=25800 setpoint=-18.0 band=2.0 k_door=4.0 cool_share=0.6825
    k_leak 1.0
    k_cool 189.0
    p_work 140.0
    p_idle 6.0
    voltage 230.0
    vibration base=0.2 delta=1.3
    sound base=32.0 delta=8.0

Scenario files script a run (times in seconds from scenario start)::

    duration 86400
    dt 1
    ambient 0 temp=25 humidity=50
    door main open=600 close=670
    fault 3600 leak rate=0.05
    fault 3600 compressor rate=48
    fault 3600 door_stuck chamber=main

Door intervals are closed: the door reads open at both endpoint samples, so
``open=600 close=670`` is an opening of exactly 70 s. Ambient directives hold
until the next one; the first must be at t=0. Fault rates are per day: a leak
scales the cooling coefficient by ``1 - rate*days_since_onset`` (floored at
zero) and compressor degradation scales working power by
``1 + rate*days_since_onset``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from ..errors import DirectiveOutOfRange, OverlappingDoorIntervals, ParseError
from ..telemetry import NS_PER_S, TOKEN_RE


@dataclass(frozen=True)
class Chamber:
    name: str
    capacity_j: float  # thermal capacity, J/degC
    setpoint_c: float
    band_c: float  # full hysteresis band width, degC
    k_door_w: float  # extra heat leak while the door is open, W/degC
    cool_share: float  # fraction of k_cool removed from this chamber

    def __post_init__(self):
        if self.capacity_j <= 0 or self.k_door_w <= 0 or self.cool_share <= 0:
            raise ValueError(f"chamber {self.name}: coefficients must be positive")
        if self.band_c <= 0:
            raise ValueError(f"chamber {self.name}: hysteresis band must be positive")


@dataclass(frozen=True)
class FridgeModel:
    chambers: tuple
    k_leak_w: float  # wall heat leak, W/degC, applied per chamber
    k_cool_w: float  # total heat removal while the compressor runs, W
    p_work_w: float  # electrical draw while running
    p_idle_w: float  # electrical draw while idle
    voltage_v: float = 230.0
    vib_base: float = 0.2
    vib_delta: float = 1.3
    sound_base: float = 32.0
    sound_delta: float = 8.0

    def __post_init__(self):
        if not self.chambers:
            raise ValueError("model needs at least one chamber")
        names = [c.name for c in self.chambers]
        if len(set(names)) != len(names):
            raise ValueError("chamber names must be unique")
        if self.k_leak_w <= 0 or self.k_cool_w <= 0 or self.voltage_v <= 0:
            raise ValueError("coefficients must be positive")
        if not self.p_work_w > self.p_idle_w >= 0:
            raise ValueError("need p_work > p_idle >= 0")

    def chamber_names(self):
        return tuple(c.name for c in self.chambers)

    def with_band(self, band_c: float) -> "FridgeModel":
        """Copy of the model with every chamber's hysteresis band replaced."""
        chambers = tuple(
            Chamber(c.name, c.capacity_j, c.setpoint_c, band_c, c.k_door_w, c.cool_share)
            for c in self.chambers
        )
        return FridgeModel(chambers, self.k_leak_w, self.k_cool_w, self.p_work_w,
                           self.p_idle_w, self.voltage_v, self.vib_base, self.vib_delta,
                           self.sound_base, self.sound_delta)


class FaultKind(Enum):
    LEAK = "leak"
    COMPRESSOR = "compressor"
    DOOR_STUCK = "door_stuck"


@dataclass(frozen=True)
class FaultDirective:
    kind: FaultKind
    onset_ns: int
    rate_per_day: float = 0.0
    chamber: str | None = None


@dataclass(frozen=True)
class Scenario:
    duration_ns: int
    dt_ns: int
    ambient: tuple  # ((t_ns, temp_c, humidity_pct), ...) time-ordered, first at 0
    doors: dict  # chamber -> ((open_ns, close_ns), ...) closed intervals
    faults: tuple = ()

    @property
    def n_steps(self) -> int:
        return self.duration_ns // self.dt_ns

    @property
    def dt_s(self) -> float:
        return self.dt_ns / NS_PER_S


def _seconds_to_ns(text: str, line_no: int, what: str) -> int:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(line_no, f"bad {what} {text!r}") from None
    if not math.isfinite(value) or value < 0:
        raise DirectiveOutOfRange(line_no, f"{what} must be a finite non-negative number")
    return int(round(value * NS_PER_S))


def _num(text: str, line_no: int, what: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(line_no, f"bad {what} {text!r}") from None
    if not math.isfinite(value):
        raise ParseError(line_no, f"{what} must be finite")
    return value


def _kv(tokens, line_no, allowed):
    got = {}
    for token in tokens:
        key, eq, value = token.partition("=")
        if not eq or key not in allowed:
            raise ParseError(line_no, f"bad clause {token!r} (allowed: {sorted(allowed)})")
        if key in got:
            raise ParseError(line_no, f"duplicate clause {key!r}")
        got[key] = value
    return got


def load_model(source: str) -> FridgeModel:
    chambers = []
    scalars = {}
    pairs = {}
    for line_no, raw in enumerate(source.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        head = tokens[0]
        if head == "chamber":
            if len(tokens) < 3 or not TOKEN_RE.match(tokens[1]):
                raise ParseError(line_no, "expected: chamber <name> key=value...")
            kv = _kv(tokens[2:], line_no, {"cap", "setpoint", "band", "k_door", "cool_share"})
            for key in ("cap", "setpoint", "band", "k_door", "cool_share"):
                if key not in kv:
                    raise ParseError(line_no, f"chamber missing {key}=")
            try:
                chambers.append(Chamber(
                    tokens[1], _num(kv["cap"], line_no, "cap"),
                    _num(kv["setpoint"], line_no, "setpoint"),
                    _num(kv["band"], line_no, "band"),
                    _num(kv["k_door"], line_no, "k_door"),
                    _num(kv["cool_share"], line_no, "cool_share"),
                ))
            except ValueError as exc:
                raise ParseError(line_no, str(exc)) from None
        elif head in ("k_leak", "k_cool", "p_work", "p_idle", "voltage"):
            if len(tokens) != 2:
                raise ParseError(line_no, f"expected: {head} <number>")
            scalars[head] = _num(tokens[1], line_no, head)
        elif head in ("vibration", "sound"):
            kv = _kv(tokens[1:], line_no, {"base", "delta"})
            if set(kv) != {"base", "delta"}:
                raise ParseError(line_no, f"expected: {head} base=<v> delta=<v>")
            pairs[head] = (_num(kv["base"], line_no, "base"), _num(kv["delta"], line_no, "delta"))
        else:
            raise ParseError(line_no, f"unknown directive {head!r}")
    for key in ("k_leak", "k_cool", "p_work", "p_idle"):
        if key not in scalars:
            raise ParseError(0, f"model missing {key}")
    try:
        return FridgeModel(
            tuple(chambers), scalars["k_leak"], scalars["k_cool"],
            scalars["p_work"], scalars["p_idle"], scalars.get("voltage", 230.0),
            *pairs.get("vibration", (0.2, 1.3)), *pairs.get("sound", (32.0, 8.0)),
        )
    except ValueError as exc:
        raise ParseError(0, str(exc)) from None


def load_scenario(source: str) -> Scenario:
    duration_ns = None
    dt_ns = None
    ambient = []
    doors = {}
    faults = []
    for line_no, raw in enumerate(source.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        head = tokens[0]
        if head == "duration":
            if len(tokens) != 2:
                raise ParseError(line_no, "expected: duration <seconds>")
            duration_ns = _seconds_to_ns(tokens[1], line_no, "duration")
        elif head == "dt":
            if len(tokens) != 2:
                raise ParseError(line_no, "expected: dt <seconds>")
            dt_ns = _seconds_to_ns(tokens[1], line_no, "dt")
            if dt_ns <= 0:
                raise DirectiveOutOfRange(line_no, "dt must be positive")
        elif head == "ambient":
            if len(tokens) < 2:
                raise ParseError(line_no, "expected: ambient <t> temp=<C> humidity=<pct>")
            t_ns = _seconds_to_ns(tokens[1], line_no, "ambient time")
            kv = _kv(tokens[2:], line_no, {"temp", "humidity"})
            if set(kv) != {"temp", "humidity"}:
                raise ParseError(line_no, "ambient needs temp= and humidity=")
            temp = _num(kv["temp"], line_no, "temp")
            humidity = _num(kv["humidity"], line_no, "humidity")
            if not 0.0 <= humidity <= 100.0:
                raise DirectiveOutOfRange(line_no, "humidity out of [0, 100]")
            ambient.append((t_ns, temp, humidity, line_no))
        elif head == "door":
            if len(tokens) != 4 or not TOKEN_RE.match(tokens[1]):
                raise ParseError(line_no, "expected: door <chamber> open=<t> close=<t>")
            kv = _kv(tokens[2:], line_no, {"open", "close"})
            if set(kv) != {"open", "close"}:
                raise ParseError(line_no, "door needs open= and close=")
            open_ns = _seconds_to_ns(kv["open"], line_no, "open")
            close_ns = _seconds_to_ns(kv["close"], line_no, "close")
            if close_ns <= open_ns:
                raise DirectiveOutOfRange(line_no, "door close must be after open")
            doors.setdefault(tokens[1], []).append((open_ns, close_ns, line_no))
        elif head == "fault":
            if len(tokens) < 3:
                raise ParseError(line_no, "expected: fault <t> <kind> ...")
            onset_ns = _seconds_to_ns(tokens[1], line_no, "fault time")
            kind_tok = tokens[2]
            if kind_tok in ("leak", "compressor"):
                kv = _kv(tokens[3:], line_no, {"rate"})
                if "rate" not in kv:
                    raise ParseError(line_no, f"{kind_tok} fault needs rate=")
                rate = _num(kv["rate"], line_no, "rate")
                if rate <= 0:
                    raise DirectiveOutOfRange(line_no, "fault rate must be positive")
                faults.append(FaultDirective(FaultKind(kind_tok), onset_ns, rate))
            elif kind_tok == "door_stuck":
                kv = _kv(tokens[3:], line_no, {"chamber"})
                if "chamber" not in kv:
                    raise ParseError(line_no, "door_stuck fault needs chamber=")
                faults.append(FaultDirective(FaultKind.DOOR_STUCK, onset_ns, 0.0, kv["chamber"]))
            else:
                raise ParseError(line_no, f"unknown fault kind {kind_tok!r}")
        else:
            raise ParseError(line_no, f"unknown directive {head!r}")

    if duration_ns is None or duration_ns <= 0:
        raise ParseError(0, "scenario missing a positive duration")
    if dt_ns is None:
        raise ParseError(0, "scenario missing dt")
    if duration_ns < dt_ns:
        raise DirectiveOutOfRange(0, "duration shorter than dt")
    if not ambient:
        raise ParseError(0, "scenario needs at least one ambient directive")
    ambient.sort(key=lambda a: a[0])
    if ambient[0][0] != 0:
        raise DirectiveOutOfRange(ambient[0][3], "first ambient directive must be at t=0")
    for entry in ambient:
        if entry[0] >= duration_ns:
            raise DirectiveOutOfRange(entry[3], "ambient directive past scenario end")

    validated_doors = {}
    for chamber, intervals in doors.items():
        intervals.sort(key=lambda iv: iv[0])
        previous_close = None
        cleaned = []
        for open_ns, close_ns, line_no in intervals:
            if close_ns >= duration_ns:
                raise DirectiveOutOfRange(line_no, "door interval past scenario end")
            if previous_close is not None and open_ns <= previous_close:
                raise OverlappingDoorIntervals(
                    line_no, f"door intervals overlap for chamber {chamber!r}")
            previous_close = close_ns
            cleaned.append((open_ns, close_ns))
        validated_doors[chamber] = tuple(cleaned)

    for fault in faults:
        if fault.onset_ns >= duration_ns:
            raise DirectiveOutOfRange(0, "fault onset past scenario end")
    faults.sort(key=lambda f: f.onset_ns)

    return Scenario(duration_ns, dt_ns,
                    tuple((t, temp, hum) for t, temp, hum, _ in ambient),
                    validated_doors, tuple(faults))
