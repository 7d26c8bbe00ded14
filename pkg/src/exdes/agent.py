"""The expectation agent: a deterministic event loop around one product.

Each sample, in order: derived signals update (door durations, duty ratio,
energy), the parameter frame refreshes, rules evaluate edge-triggered, LOG
records aggregate while ALARM records become immediate events plus a flush,
and control actions dispatch to their actuator. Time comes from the sample
stream, never the wall clock, so identical inputs give identical outputs.

The outbound path is built to survive anything: every event is appended to
the spill file before the first send attempt, removed only once the
collector's acked watermark covers its sequence number, and resent after
restarts or transport failures. The collector deduplicates, so delivery is
at-least-once on the wire and exactly-once in the store.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass

from .abstraction import (
    AbstractedEvent,
    AggregationWindow,
    DoorTracker,
    DutyCycleTracker,
    EnergyIntegrator,
    encode_event_line,
)
from .errors import (
    ParseError,
    SpillIoError,
    StaleVersion,
    TimeRegression,
    TransportDown,
    UnknownActuator,
)
from .rules import (
    ActionKind,
    ParameterFrame,
    compile_ruleset,
    evaluate,
    new_eval_state,
    swap_ruleset,
)
from .telemetry import (
    AgentId,
    NS_PER_S,
    SensorSample,
    Severity,
    Timestamp,
    ViolationClass,
    make_violation_record,
    parameter_registry,
)
from .wire import (
    PT_ACK,
    PT_ALARM_NOTICE,
    PT_EVENT_BATCH,
    PT_RULESET_POLL,
    PT_RULESET_UPDATE,
    decode_ack_payload,
    decode_frame,
    encode_batch_payload,
    encode_frame,
    encode_seq_record,
)

BATCH_MAX_RECORDS = 256
OVERFLOW_RULE_ID = "agent_buffer_overflow"


@dataclass(frozen=True)
class ControlActuator:
    """Bounded setpoint interface into the product.

    The only actuator kind is the thermostat hysteresis band; `fire_setpoint`
    is what a control rule applies when it triggers.
    """

    action_id: str
    chamber: str
    min_setpoint: float
    max_setpoint: float
    fire_setpoint: float

    def clamp(self, value: float) -> float:
        return min(self.max_setpoint, max(self.min_setpoint, value))


@dataclass
class AgentConfig:
    agent: AgentId
    rules_source: str
    chambers: tuple = ("main", "freezer")
    flush_interval_s: float = 300.0
    buffer_capacity: int = 1024
    spill_path: str | None = None
    collector: str | None = None  # "host:port"
    key: bytes = b""
    window_s: float = 600.0
    duty_window: int = 5
    p_on_w: float = 35.0
    actuators: tuple = ()

    def __post_init__(self):
        if self.flush_interval_s <= 0:
            raise ValueError("flush_interval_s must be positive")
        if self.buffer_capacity < 1:
            raise ValueError("buffer capacity must be >= 1")


def load_agent_config(path) -> AgentConfig:
    """Read the line-based `key = value` agent configuration file.

    Paths inside the file resolve relative to its directory; `actuator` lines
    may repeat: ``actuator = <id> chamber=<c> min=<v> max=<v> fire=<v>``.
    """
    base = os.path.dirname(os.path.abspath(path))
    values = {}
    actuators = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, eq, value = (part.strip() for part in line.partition("="))
            if not eq:
                raise ParseError(line_no, f"expected key = value, got {raw!r}")
            if key == "actuator":
                actuators.append(_parse_actuator(value, line_no))
            else:
                values[key] = value

    def path_of(key):
        return os.path.join(base, values[key]) if key in values else None

    for required in ("agent_tag", "rules"):
        if required not in values:
            raise ParseError(0, f"config missing {required}")
    with open(path_of("rules"), "r", encoding="utf-8") as fh:
        rules_source = fh.read()
    key = read_key_file(path_of("key_file")) if "key_file" in values else b""
    try:
        return AgentConfig(
            agent=AgentId.from_tag(values["agent_tag"]),
            rules_source=rules_source,
            chambers=tuple(values.get("chambers", "main,freezer").split(",")),
            flush_interval_s=float(values.get("flush_interval_s", 300.0)),
            buffer_capacity=int(values.get("buffer_capacity", 1024)),
            spill_path=path_of("spill"),
            collector=values.get("collector"),
            key=key,
            window_s=float(values.get("window_s", 600.0)),
            duty_window=int(values.get("duty_window", 5)),
            p_on_w=float(values.get("p_on_w", 35.0)),
            actuators=tuple(actuators),
        )
    except ValueError as exc:
        raise ParseError(0, f"bad config value: {exc}") from exc


def _parse_actuator(value: str, line_no: int) -> ControlActuator:
    tokens = value.split()
    if len(tokens) < 2:
        raise ParseError(line_no, "actuator needs: <id> chamber=<c> min= max= fire=")
    kv = {}
    for token in tokens[1:]:
        key, eq, val = token.partition("=")
        if not eq or key not in ("chamber", "min", "max", "fire"):
            raise ParseError(line_no, f"bad actuator clause {token!r}")
        kv[key] = val
    try:
        return ControlActuator(tokens[0], kv["chamber"], float(kv["min"]),
                               float(kv["max"]), float(kv["fire"]))
    except (KeyError, ValueError) as exc:
        raise ParseError(line_no, f"bad actuator line: {exc}") from exc


def read_key_file(path) -> bytes:
    """Shared-secret key file: hex text, whitespace ignored."""
    with open(path, "r", encoding="utf-8") as fh:
        text = "".join(fh.read().split())
    return bytes.fromhex(text)


class OutboundBuffer:
    """Sequence-numbered outbound event queue with write-ahead spill.

    Every enqueued event line is appended to the spill file (and synced)
    before any send attempt; entries only disappear once acked. At most
    `capacity` entries are held in memory, the remainder is reloaded from
    spill as the head drains. With a broken (or absent) spill the buffer
    degrades to memory-only and sheds the oldest LOG entry at capacity;
    `pop_shed_count` lets the agent log the loss as a self-violation.
    """

    def __init__(self, spill_path, capacity: int):
        self.capacity = capacity
        self.spill_path = spill_path
        self.ack_path = spill_path + ".ack" if spill_path else None
        self.acked = 0
        self.next_seq = 1
        self.entries = []  # [(seq, line), ...] oldest first, <= capacity
        self._beyond_memory = 0  # unacked entries that live only in spill
        self.spill_broken = spill_path is None
        self._shed = 0
        if spill_path:
            parent = os.path.dirname(os.path.abspath(spill_path))
            try:
                os.makedirs(parent, exist_ok=True)
            except OSError as exc:
                self._mark_broken(exc)
                return
            self._recover()

    # -- persistence ----------------------------------------------------------

    def _recover(self):
        try:
            if os.path.exists(self.ack_path):
                with open(self.ack_path, "r", encoding="utf-8") as fh:
                    self.acked = int(fh.read().strip() or "0")
            if os.path.exists(self.spill_path):
                for seq, line in self._read_spill():
                    self.next_seq = max(self.next_seq, seq + 1)
                    if seq <= self.acked:
                        continue
                    if len(self.entries) < self.capacity:
                        self.entries.append((seq, line))
                    else:
                        self._beyond_memory += 1
        except (OSError, ValueError) as exc:
            raise SpillIoError(f"cannot recover spill state: {exc}") from exc

    def _read_spill(self):
        out = []
        with open(self.spill_path, "r", encoding="utf-8") as fh:
            for raw in fh:
                line = raw.rstrip("\n")
                if not line:
                    continue
                head, _, rest = line.partition(" ")
                if not head.startswith("seq="):
                    raise ValueError(f"bad spill line {line!r}")
                out.append((int(head[len("seq="):]), rest))
        return out

    def _append_spill(self, seq: int, line: str):
        with open(self.spill_path, "a", encoding="utf-8") as fh:
            fh.write(f"seq={seq} {line}\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _persist_ack(self):
        with open(self.ack_path, "w", encoding="utf-8") as fh:
            fh.write(f"{self.acked}\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _mark_broken(self, exc):
        self.spill_broken = True
        sys.stderr.write(f"spill unavailable, events held in memory only: {exc}\n")

    # -- queue ------------------------------------------------------------------

    def enqueue(self, line: str) -> int:
        seq = self.next_seq
        self.next_seq += 1
        if not self.spill_broken:
            try:
                self._append_spill(seq, line)
            except OSError as exc:
                self._mark_broken(exc)
        if self.spill_broken:
            self.entries.append((seq, line))
            while len(self.entries) > self.capacity:
                victim = next((i for i, (_, entry) in enumerate(self.entries)
                               if " sev=ALARM " not in entry), 0)
                self.entries.pop(victim)
                self._shed += 1
        elif len(self.entries) < self.capacity and self._beyond_memory == 0:
            self.entries.append((seq, line))
        else:
            self._beyond_memory += 1
        return seq

    def pop_shed_count(self) -> int:
        shed, self._shed = self._shed, 0
        return shed

    def pending(self):
        return list(self.entries)

    def has_pending(self) -> bool:
        return bool(self.entries) or self._beyond_memory > 0

    def ack(self, watermark: int):
        if watermark <= self.acked:
            return
        self.acked = watermark
        self.entries = [(s, l) for s, l in self.entries if s > watermark]
        self._refill()
        if not self.spill_broken:
            try:
                self._persist_ack()
                if not self.has_pending():
                    with open(self.spill_path, "w", encoding="utf-8"):
                        pass  # compact: everything acked
            except OSError as exc:
                self._mark_broken(exc)

    def _refill(self):
        if self._beyond_memory <= 0 or self.spill_broken:
            return
        try:
            in_memory = {seq for seq, _ in self.entries}
            loaded = [(seq, line) for seq, line in self._read_spill()
                      if seq > self.acked and seq not in in_memory]
        except (OSError, ValueError) as exc:
            self._mark_broken(exc)
            return
        merged = sorted(set(self.entries) | set(loaded))
        self.entries = merged[:self.capacity]
        self._beyond_memory = max(0, len(merged) - self.capacity)


@dataclass(frozen=True)
class StepEffects:
    records: tuple = ()
    events: tuple = ()
    alarms: tuple = ()
    controls: tuple = ()


_NO_EFFECTS = StepEffects()


class Agent:
    """One product's expectation agent. Single-threaded by contract: the
    sample stream owns all trackers and rule state."""

    def __init__(self, config: AgentConfig, transport=None, actuator_target=None,
                 alarm_console=None):
        self.config = config
        self.registry = parameter_registry(config.chambers)
        self.actuators = {a.action_id: a for a in config.actuators}
        self.ruleset = compile_ruleset(
            config.rules_source, self.registry, frozenset(self.actuators))
        self.state = new_eval_state(self.ruleset)
        self.frame = ParameterFrame()
        self.doors = DoorTracker()
        self.duty = DutyCycleTracker(config.p_on_w, config.duty_window)
        self.energy = EnergyIntegrator()
        self.window = AggregationWindow(config.window_s)
        self.buffer = OutboundBuffer(config.spill_path, config.buffer_capacity)
        self.transport = transport
        self.actuator_target = actuator_target  # callable(chamber, setpoint)
        self.alarm_console = alarm_console
        self.on_evaluate = None  # test hook: callable(version, t_ns)
        self._door_flags = {}
        self._door_durations = {}
        self._internal_temps = {}
        self._frame_seq = 0
        self._last_ns = -1
        self._in_overflow_note = False
        self._flush_interval_ns = int(round(config.flush_interval_s * NS_PER_S))
        self._next_flush_ns = self._flush_interval_ns

    # -- ingestion ------------------------------------------------------------

    def step(self, sample: SensorSample) -> StepEffects:
        t_ns = sample.at.to_ns()
        if t_ns < self._last_ns:
            raise TimeRegression(f"sample at {t_ns} after {self._last_ns}")
        self._last_ns = t_ns
        param = sample.parameter
        value = sample.value
        frame = self.frame

        if param.startswith("door_open."):
            chamber = param[len("door_open."):]
            duration = self.doors.update(chamber, value == 1.0, t_ns)
            self._door_flags[chamber] = value
            self._door_durations[chamber] = duration
            frame.set(f"door_open_duration_s.{chamber}", duration, t_ns)
            frame.set("door_open_duration_s", max(self._door_durations.values()), t_ns)
            frame.set("door_open", max(self._door_flags.values()), t_ns)
        elif param == "power_w":
            ratio = self.duty.update(value, t_ns)
            if ratio is not None:
                frame.set("duty_ratio", ratio, t_ns)
            frame.set("energy_wh", self.energy.update(value, t_ns), t_ns)
        elif param.startswith("temp_internal_c."):
            chamber = param[len("temp_internal_c."):]
            self._internal_temps[chamber] = value
            frame.set("temp_internal_c", max(self._internal_temps.values()), t_ns)
        frame.set(param, value, t_ns)

        fired, self.state = evaluate(self.ruleset, frame, self.state)
        if self.on_evaluate is not None:
            self.on_evaluate(self.ruleset.version, t_ns)

        effects = self._dispatch(fired, t_ns) if fired else _NO_EFFECTS
        if t_ns >= self._next_flush_ns:
            self._next_flush_ns = (
                t_ns // self._flush_interval_ns + 1) * self._flush_interval_ns
            flushed = self._flush_cycle(t_ns)
            if flushed:
                effects = StepEffects(effects.records, effects.events + tuple(flushed),
                                      effects.alarms, effects.controls)
        return effects

    def _dispatch(self, fired, t_ns: int) -> StepEffects:
        records, events, alarms, controls = [], [], [], []
        for rule, record in fired:
            records.append(record)
            for event in self.window.add(record):
                self._enqueue_event(event)
                events.append(event)
                if event.severity is Severity.ALARM:
                    alarms.append(event)
            if rule.action.kind is ActionKind.CONTROL:
                actuator = self.actuators[rule.action.actuator_id]
                applied = self.control_adjust(actuator.action_id, actuator.fire_setpoint)
                controls.append((actuator.action_id, applied))
        if alarms:
            for event in alarms:
                if self.alarm_console is not None:
                    self.alarm_console(encode_event_line(event))
            self._send_alarms()
            self.flush()
        return StepEffects(tuple(records), tuple(events), tuple(alarms), tuple(controls))

    def _enqueue_event(self, event: AbstractedEvent) -> int:
        seq = self.buffer.enqueue(encode_event_line(event))
        if not self._in_overflow_note:
            shed = self.buffer.pop_shed_count()
            if shed:
                self._in_overflow_note = True
                try:
                    self._enqueue_event(self._overflow_event(shed))
                finally:
                    self._in_overflow_note = False
        return seq

    def _overflow_event(self, shed: int) -> AbstractedEvent:
        at = Timestamp.from_ns(max(self._last_ns, 0))
        return AbstractedEvent(OVERFLOW_RULE_ID, ViolationClass.UFB, 1, at, at,
                               float(shed), float(shed), float(shed), Severity.LOG)

    # -- outbound ----------------------------------------------------------------

    def _next_frame_seq(self) -> int:
        self._frame_seq += 1
        return self._frame_seq

    def _request(self, ptype: int, payload: bytes):
        frame = encode_frame(ptype, self.config.agent.raw, self._next_frame_seq(),
                             payload, self.config.key)
        return decode_frame(self.transport.request(frame), self.config.key)

    def _send_alarms(self):
        """Fast path: push ALARM events ahead of any queued LOG aggregates."""
        if self.transport is None:
            return
        alarm_entries = [(s, l) for s, l in self.buffer.pending() if " sev=ALARM " in l]
        if not alarm_entries:
            return
        payload = encode_batch_payload(
            [encode_seq_record(seq, line) for seq, line in alarm_entries])
        try:
            response = self._request(PT_ALARM_NOTICE, payload)
            if response.ptype == PT_ACK:
                self.buffer.ack(decode_ack_payload(response.payload))
        except TransportDown:
            pass  # retained; the regular flush path retries

    def flush(self) -> int:
        """Send pending events oldest-first in batches; returns acked count.

        Transport failure is not fatal: everything unacked stays in memory
        and spill for the next attempt.
        """
        if self.transport is None or not self.buffer.has_pending():
            return 0
        acked_start = self.buffer.acked
        try:
            while self.buffer.has_pending():
                batch = self.buffer.pending()[:BATCH_MAX_RECORDS]
                payload = encode_batch_payload(
                    [encode_seq_record(seq, line) for seq, line in batch])
                response = self._request(PT_EVENT_BATCH, payload)
                if response.ptype != PT_ACK:
                    break
                before = self.buffer.acked
                self.buffer.ack(decode_ack_payload(response.payload))
                if self.buffer.acked == before:
                    break  # no progress (collector missing earlier sequences)
        except TransportDown:
            pass
        return self.buffer.acked - acked_start

    def poll_ruleset(self):
        """Pull-based updates: ask the collector for a newer rule set."""
        if self.transport is None:
            return None
        frame = encode_frame(PT_RULESET_POLL, self.config.agent.raw,
                             self._next_frame_seq(), b"", self.config.key)
        try:
            raw = self.transport.request(frame)
        except TransportDown:
            return None
        response = decode_frame(raw, self.config.key)
        if response.ptype != PT_RULESET_UPDATE:
            return None  # nothing published for this agent
        try:
            return self.apply_ruleset_update(raw)
        except StaleVersion:
            return None
        except ParseError as exc:
            sys.stderr.write(f"ignoring bad ruleset update: {exc}\n")
            return None

    def _flush_cycle(self, now_ns: int):
        flushed = self.window.flush(now_ns)
        for event in flushed:
            self._enqueue_event(event)
        self.flush()
        self.poll_ruleset()
        return flushed

    def close(self):
        """Close every aggregation window, then flush; returns final events."""
        flushed = self.window.flush(None)
        for event in flushed:
            self._enqueue_event(event)
        self.flush()
        return flushed

    # -- rule updates ---------------------------------------------------------------

    def apply_ruleset_update(self, frame_bytes: bytes) -> int:
        """Authenticate, compile and atomically swap in a pushed rule set.

        Any failure (BadAuth, ParseError, StaleVersion) leaves the active set
        untouched.
        """
        frame = decode_frame(frame_bytes, self.config.key)
        if frame.ptype != PT_RULESET_UPDATE:
            raise ParseError(0, f"expected ruleset update frame, got ptype {frame.ptype}")
        source = frame.payload.decode("utf-8", errors="replace")
        incoming = compile_ruleset(source, self.registry, frozenset(self.actuators))
        self.ruleset = swap_ruleset(self.ruleset, incoming)
        self.state = new_eval_state(self.ruleset)
        return self.ruleset.version

    # -- control -----------------------------------------------------------------------

    def control_adjust(self, action_id: str, setpoint: float) -> float:
        """Clamp and apply a setpoint; logs an audit record either way."""
        actuator = self.actuators.get(action_id)
        if actuator is None:
            raise UnknownActuator(action_id)
        applied = actuator.clamp(setpoint)
        if self.actuator_target is not None:
            self.actuator_target(actuator.chamber, applied)
        at = Timestamp.from_ns(max(self._last_ns, 0))
        audit = make_violation_record(
            action_id, ViolationClass.UFB,
            [("control_setpoint", applied), ("control_requested", setpoint)],
            at, Severity.LOG)
        for event in self.window.add(audit):
            self._enqueue_event(event)
        return applied
