"""Shared monitoring vocabulary: timestamps, parameters, samples, violations.

All values here are immutable after construction and safe to share between
threads. Text encodings are bit-exact: floats are written in shortest
round-trip decimal form (``repr``) and timestamps as ``<sec>.<nanos:09d>``,
so logs diff cleanly across platforms and reruns.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum

from .errors import EmptySnapshot, NonFiniteValue, ParseError

NS_PER_S = 1_000_000_000

PARAM_RE = re.compile(r"^[a-z_][a-z0-9_.]*$")
TOKEN_RE = re.compile(r"^[A-Za-z0-9_.-]+$")

#: Registered bare parameters (fixed units, no conversion system).
BASE_PARAMETERS = (
    "power_w",
    "current_a",
    "temp_ambient_c",
    "humidity_pct",
    "vibration_mm_s",
    "sound_db",
    "duty_ratio",
    "energy_wh",
)

#: Parameters that exist both bare and with a ``.<chamber>`` suffix. The bare
#: form is the cross-chamber aggregate (max), so single-chamber rules keep
#: working on multi-chamber products.
CHAMBER_PARAMETERS = ("temp_internal_c", "door_open", "door_open_duration_s")

DEFAULT_CHAMBERS = ("main", "freezer")


def parameter_registry(chambers=DEFAULT_CHAMBERS) -> frozenset[str]:
    """Closed set of parameter names valid for a product with `chambers`."""
    names = set(BASE_PARAMETERS) | set(CHAMBER_PARAMETERS)
    for chamber in chambers:
        if not TOKEN_RE.match(chamber):
            raise ValueError(f"bad chamber name: {chamber!r}")
        for param in CHAMBER_PARAMETERS:
            names.add(f"{param}.{chamber}")
    return frozenset(names)


class ViolationClass(Enum):
    """The three groups of design expectations."""

    UFB = "UFB"  # unexpected functional behavior
    UEB = "UEB"  # unexpected environmental behavior
    UUB = "UUB"  # unexpected user behavior


class Severity(Enum):
    LOG = "LOG"
    ALARM = "ALARM"

    def __lt__(self, other):
        if not isinstance(other, Severity):
            return NotImplemented
        return self is Severity.LOG and other is Severity.ALARM


@dataclass(frozen=True, order=True)
class Timestamp:
    """Scenario-relative instant; ordering is lexicographic on (seconds, nanos)."""

    seconds: int
    nanos: int = 0

    def __post_init__(self):
        if self.seconds < 0:
            raise ValueError("seconds must be non-negative")
        if not 0 <= self.nanos < NS_PER_S:
            raise ValueError("nanos out of range")

    @classmethod
    def from_ns(cls, total_ns: int) -> "Timestamp":
        return cls(total_ns // NS_PER_S, total_ns % NS_PER_S)

    def to_ns(self) -> int:
        return self.seconds * NS_PER_S + self.nanos

    def text(self) -> str:
        return f"{self.seconds}.{self.nanos:09d}"

    @classmethod
    def parse(cls, text: str) -> "Timestamp":
        sec, dot, nanos = text.partition(".")
        if not dot or len(nanos) != 9 or not sec.isdigit() or not nanos.isdigit():
            raise ValueError(f"bad timestamp text: {text!r}")
        return cls(int(sec), int(nanos))


def format_value(value: float) -> str:
    """Shortest decimal that round-trips to the same float."""
    return repr(float(value))


@dataclass(frozen=True)
class SensorSample:
    """One timestamped reading of a named parameter."""

    parameter: str
    value: float
    at: Timestamp

    def __post_init__(self):
        v = self.value
        if not math.isfinite(v):
            raise NonFiniteValue(f"{self.parameter}: {v!r}")
        if self.parameter.startswith("door_open") and v not in (0.0, 1.0):
            raise ValueError(f"door flag must be 0 or 1, got {v!r}")
        if self.parameter == "humidity_pct" and not 0.0 <= v <= 100.0:
            raise ValueError(f"humidity out of [0, 100]: {v!r}")


@dataclass(frozen=True)
class AgentId:
    """16-byte wire identity plus its human-readable model tag.

    The wire bytes are the UTF-8 tag zero-padded to 16 bytes, so tag and
    identity are mutually derivable anywhere in the fleet.
    """

    raw: bytes
    tag: str

    @classmethod
    def from_tag(cls, tag: str) -> "AgentId":
        if not TOKEN_RE.match(tag):
            raise ValueError(f"bad agent tag: {tag!r}")
        encoded = tag.encode("utf-8")
        if len(encoded) > 16:
            raise ValueError(f"agent tag longer than 16 bytes: {tag!r}")
        return cls(encoded.ljust(16, b"\x00"), tag)

    @classmethod
    def from_raw(cls, raw: bytes) -> "AgentId":
        if len(raw) != 16:
            raise ValueError("agent id must be 16 bytes")
        tag = raw.rstrip(b"\x00").decode("utf-8", errors="replace")
        if not tag or not TOKEN_RE.match(tag):
            tag = raw.hex()
        return cls(raw, tag)


@dataclass(frozen=True)
class ViolationRecord:
    """What gets logged when an expectation is violated: the situation
    identifier, the parameter values at the trigger, and a time stamp."""

    situation_id: str
    violation_class: ViolationClass
    parameters: tuple  # ((name, value), ...) in snapshot order
    at: Timestamp
    severity: Severity


def make_violation_record(rule_id, violation_class, snapshot, at, severity) -> ViolationRecord:
    """Build a record verbatim from its parts; values are never normalized."""
    if not TOKEN_RE.match(rule_id):
        raise ValueError(f"bad situation id: {rule_id!r}")
    snapshot = tuple((name, float(value)) for name, value in snapshot)
    if not snapshot:
        raise EmptySnapshot(rule_id)
    for name, value in snapshot:
        if not math.isfinite(value):
            raise NonFiniteValue(f"{name}: {value!r}")
    return ViolationRecord(rule_id, violation_class, snapshot, at, severity)


# -- canonical record line ----------------------------------------------------
#
#   t=<sec>.<nanos:09d> class=<UFB|UEB|UUB> id=<token> sev=<LOG|ALARM> \
#       <param>=<value> ...
#
# Parameters keep snapshot order; decode(encode(r)) == r.

def encode_record_line(record: ViolationRecord) -> str:
    parts = [
        f"t={record.at.text()}",
        f"class={record.violation_class.value}",
        f"id={record.situation_id}",
        f"sev={record.severity.value}",
    ]
    parts.extend(f"{name}={format_value(value)}" for name, value in record.parameters)
    return " ".join(parts)


def decode_record_line(line: str) -> ViolationRecord:
    fields = line.split(" ")
    if len(fields) < 5:
        raise ParseError(1, f"record line needs at least 5 fields: {line!r}")
    try:
        at = Timestamp.parse(_expect_key(fields[0], "t"))
        cls = ViolationClass(_expect_key(fields[1], "class"))
        rule_id = _expect_key(fields[2], "id")
        severity = Severity(_expect_key(fields[3], "sev"))
        snapshot = []
        for item in fields[4:]:
            name, _, value = item.partition("=")
            if not PARAM_RE.match(name):
                raise ValueError(f"bad parameter token: {name!r}")
            snapshot.append((name, float(value)))
    except ValueError as exc:
        raise ParseError(1, str(exc)) from exc
    return make_violation_record(rule_id, cls, snapshot, at, severity)


def _expect_key(item: str, key: str) -> str:
    prefix = key + "="
    if not item.startswith(prefix):
        raise ValueError(f"expected {prefix}..., got {item!r}")
    return item[len(prefix):]


# -- trace sample lines --------------------------------------------------------
#
# The simulator exports one sample per line as `t=<sec>.<nanos:09d> <p>=<v>`;
# the agent's --replay mode reads the same format back.

def encode_sample_line(sample: SensorSample) -> str:
    return f"t={sample.at.text()} {sample.parameter}={format_value(sample.value)}"


def decode_sample_line(line: str) -> SensorSample:
    fields = line.split(" ")
    if len(fields) != 2:
        raise ParseError(1, f"sample line needs 2 fields: {line!r}")
    try:
        at = Timestamp.parse(_expect_key(fields[0], "t"))
        name, _, value = fields[1].partition("=")
        if not PARAM_RE.match(name):
            raise ValueError(f"bad parameter token: {name!r}")
        return SensorSample(name, float(value), at)
    except ValueError as exc:
        raise ParseError(1, str(exc)) from exc
