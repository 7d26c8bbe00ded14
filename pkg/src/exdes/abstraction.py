"""Derived signals and violation-stream compression.

Raw samples become higher-level parameters here (door-open duration, the
work/idle duty ratio, accumulated energy), and violation records are folded
into compact AbstractedEvents so only filtered, aggregated summaries travel
over the uplink. ALARM-severity records bypass aggregation entirely.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .errors import ParseError, TimeRegression
from .telemetry import (
    NS_PER_S,
    PARAM_RE,
    Severity,
    Timestamp,
    TOKEN_RE,
    ViolationClass,
    ViolationRecord,
    format_value,
)


class DoorTracker:
    """Per-chamber open-duration clock; resets on every closing."""

    def __init__(self):
        self._open_since = {}  # chamber -> open since (ns)
        self._last = {}  # chamber -> last update (ns)

    def update(self, chamber: str, is_open: bool, at_ns: int) -> float:
        """Returns the current opening's duration in seconds (0 when closed)."""
        last = self._last.get(chamber)
        if last is not None and at_ns < last:
            raise TimeRegression(f"door {chamber}: {at_ns} < {last}")
        self._last[chamber] = at_ns
        if is_open:
            since = self._open_since.get(chamber)
            if since is None:
                self._open_since[chamber] = since = at_ns
            return (at_ns - since) / NS_PER_S
        self._open_since.pop(chamber, None)
        return 0.0

    def is_open(self, chamber: str) -> bool:
        return chamber in self._open_since


class DutyCycleTracker:
    """Work/idle cycle segmentation from the power channel.

    The compressor is considered on while power > `p_on_w`. A (T_work,
    T_idle) pair completes at each off-to-on transition; the reported ratio
    is sum(T_work)/sum(T_idle) over the last `window` completed pairs. The
    first phase starts at the first sample seen.
    """

    def __init__(self, p_on_w: float, window: int = 5):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.p_on_w = p_on_w
        self.pairs = deque(maxlen=window)
        self._phase = None  # "work" | "idle"
        self._phase_start_ns = 0
        self._pending_work_s = None
        self._last_ns = None

    def update(self, power_w: float, at_ns: int):
        """Returns the duty ratio, or None until the first pair completes."""
        if self._last_ns is not None and at_ns < self._last_ns:
            raise TimeRegression(f"power: {at_ns} < {self._last_ns}")
        self._last_ns = at_ns
        on = power_w > self.p_on_w
        if self._phase is None:
            self._phase = "work" if on else "idle"
            self._phase_start_ns = at_ns
        elif on and self._phase == "idle":
            idle_s = (at_ns - self._phase_start_ns) / NS_PER_S
            if self._pending_work_s is not None and idle_s > 0:
                self.pairs.append((self._pending_work_s, idle_s))
                self._pending_work_s = None
            self._phase = "work"
            self._phase_start_ns = at_ns
        elif not on and self._phase == "work":
            work_s = (at_ns - self._phase_start_ns) / NS_PER_S
            if work_s > 0:
                self._pending_work_s = work_s
            self._phase = "idle"
            self._phase_start_ns = at_ns
        return self.ratio()

    def ratio(self):
        if not self.pairs:
            return None
        work = sum(w for w, _ in self.pairs)
        idle = sum(i for _, i in self.pairs)
        return work / idle


class EnergyIntegrator:
    """Trapezoidal watt-hour accumulator over the power channel."""

    def __init__(self):
        self.energy_wh = 0.0
        self._last = None  # (power_w, at_ns)

    def update(self, power_w: float, at_ns: int) -> float:
        if self._last is not None:
            prev_p, prev_ns = self._last
            if at_ns < prev_ns:
                raise TimeRegression(f"energy: {at_ns} < {prev_ns}")
            dt_s = (at_ns - prev_ns) / NS_PER_S
            self.energy_wh += (prev_p + power_w) / 2.0 * dt_s / 3600.0
        self._last = (power_w, at_ns)
        return self.energy_wh


@dataclass(frozen=True)
class AbstractedEvent:
    """Compressed summary of one situation over one aggregation window."""

    situation_id: str
    violation_class: ViolationClass
    count: int
    first_at: Timestamp
    last_at: Timestamp
    value_min: float
    value_max: float
    value_mean: float
    severity: Severity


class _Window:
    __slots__ = ("cls", "severity", "count", "first_ns", "last_ns", "vmin", "vmax", "vmean")

    def __init__(self, record: ViolationRecord, value: float, at_ns: int):
        self.cls = record.violation_class
        self.severity = record.severity
        self.count = 1
        self.first_ns = at_ns
        self.last_ns = at_ns
        self.vmin = value
        self.vmax = value
        self.vmean = value

    def merge(self, record: ViolationRecord, value: float, at_ns: int):
        self.count += 1
        self.last_ns = at_ns
        if value < self.vmin:
            self.vmin = value
        if value > self.vmax:
            self.vmax = value
        # running count-weighted mean keeps the window constant-size
        self.vmean += (value - self.vmean) / self.count
        if self.severity < record.severity:
            self.severity = record.severity

    def to_event(self, situation_id: str) -> AbstractedEvent:
        return AbstractedEvent(
            situation_id, self.cls, self.count,
            Timestamp.from_ns(self.first_ns), Timestamp.from_ns(self.last_ns),
            self.vmin, self.vmax, self.vmean, self.severity,
        )


class AggregationWindow:
    """Tumbling per-situation windows over the LOG record stream.

    A window opens at its first record and closes (emitting one event) when a
    record arrives `duration_s` or more after it opened, or on flush. ALARM
    records never enter a window: they are emitted immediately as count-1
    events so the fast path stays fast.
    """

    def __init__(self, duration_s: float):
        if duration_s <= 0:
            raise ValueError("window duration must be positive")
        self.duration_ns = int(round(duration_s * NS_PER_S))
        self._open = {}  # situation_id -> _Window
        self._last_ns = None

    def add(self, record: ViolationRecord):
        """Ingest one record; returns the list of events emitted by this call."""
        at_ns = record.at.to_ns()
        if self._last_ns is not None and at_ns < self._last_ns:
            raise TimeRegression(f"aggregate: {at_ns} < {self._last_ns}")
        self._last_ns = at_ns
        value = record.parameters[0][1]
        if record.severity is Severity.ALARM:
            return [_Window(record, value, at_ns).to_event(record.situation_id)]
        emitted = []
        window = self._open.get(record.situation_id)
        if window is not None and at_ns - window.first_ns >= self.duration_ns:
            emitted.append(window.to_event(record.situation_id))
            window = None
        if window is None:
            self._open[record.situation_id] = _Window(record, value, at_ns)
        else:
            window.merge(record, value, at_ns)
        return emitted

    def flush(self, now_ns=None):
        """Close windows and emit their events, oldest first.

        With `now_ns` given, only windows that have been open for at least the
        window duration close; without it, everything closes (shutdown).
        """
        emitted = []
        for situation_id, window in sorted(self._open.items(), key=lambda kv: kv[1].first_ns):
            if now_ns is not None and now_ns - window.first_ns < self.duration_ns:
                continue
            emitted.append(window.to_event(situation_id))
            del self._open[situation_id]
        return emitted

    def pending_count(self) -> int:
        return sum(w.count for w in self._open.values())


# -- canonical event line --------------------------------------------------------
#
#   first=<ts> last=<ts> class=<C> id=<token> sev=<S> count=<n> min=<v> max=<v> mean=<v>
#
# This is the wire batch record, the spill format (seq-prefixed) and the
# collector store format (agent/seq-prefixed).

def encode_event_line(event: AbstractedEvent) -> str:
    return (
        f"first={event.first_at.text()} last={event.last_at.text()}"
        f" class={event.violation_class.value} id={event.situation_id}"
        f" sev={event.severity.value} count={event.count}"
        f" min={format_value(event.value_min)} max={format_value(event.value_max)}"
        f" mean={format_value(event.value_mean)}"
    )


def decode_event_line(line: str) -> AbstractedEvent:
    fields = line.split(" ")
    if len(fields) != 9:
        raise ParseError(1, f"event line needs 9 fields: {line!r}")
    try:
        kv = {}
        for item in fields:
            key, eq, value = item.partition("=")
            if not eq:
                raise ValueError(f"bad field {item!r}")
            kv[key] = value
        event = AbstractedEvent(
            situation_id=kv["id"],
            violation_class=ViolationClass(kv["class"]),
            count=int(kv["count"]),
            first_at=Timestamp.parse(kv["first"]),
            last_at=Timestamp.parse(kv["last"]),
            value_min=float(kv["min"]),
            value_max=float(kv["max"]),
            value_mean=float(kv["mean"]),
            severity=Severity(kv["sev"]),
        )
    except (KeyError, ValueError) as exc:
        raise ParseError(1, f"bad event line: {exc}") from exc
    if not TOKEN_RE.match(event.situation_id) or event.count < 1:
        raise ParseError(1, f"bad event line: {line!r}")
    if event.first_at > event.last_at:
        raise ParseError(1, "event first_at > last_at")
    return event
