"""Designer-side collector: ingest, dedup, persist, notify, serve rules.

Storage is an append-only log file per agent under ``<store>/events/``, one
canonical event line per record prefixed ``agent=<tag> seq=<n>``. A line is
written and fsynced before its sequence number is acked, so anything an
agent was told is stored survives a collector crash; dedup state rebuilds
from the logs on startup. Published rule sets live under ``<store>/rules/``
and are served whenever a matching agent polls.
"""

from __future__ import annotations

import os
import socketserver
import sys
import threading

from .errors import ParseError, StaleVersion, UnknownAgent, WindowOverflow, WireError
from .rules import compile_ruleset
from .telemetry import AgentId, Severity, Timestamp, parameter_registry
from .transport import recv_frame
from .wire import (
    ADMIT,
    DedupState,
    PT_ACK,
    PT_ALARM_NOTICE,
    PT_ERROR,
    PT_EVENT_BATCH,
    PT_QUERY,
    PT_QUERY_RESULT,
    PT_RULESET_POLL,
    PT_RULESET_UPDATE,
    decode_batch_payload,
    decode_frame,
    decode_seq_record,
    dedup_admit,
    encode_ack_payload,
    encode_batch_payload,
    encode_error_payload,
    encode_frame,
)

QUERY_BATCH_LINES = 256


def stdout_alarm_sink(line: str) -> None:
    sys.stdout.write(f"ALARM {line}\n")
    sys.stdout.flush()


def file_alarm_sink(path):
    def sink(line: str) -> None:
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
    return sink


class AlarmNotifier:
    """Fans each admitted ALARM event out to every sink exactly once."""

    def __init__(self, sinks=()):
        self.sinks = list(sinks)
        self.delivered = 0

    def notify(self, store_line: str) -> None:
        for sink in self.sinks:
            sink(store_line)
        self.delivered += 1


class _AgentState:
    __slots__ = ("dedup", "index", "lock", "log_path")

    def __init__(self, log_path):
        self.dedup = DedupState()
        self.index = []  # (first_ns, seq, class_token, severity_token, line)
        self.lock = threading.Lock()
        self.log_path = log_path


def _line_fields(event_line: str) -> dict:
    fields = {}
    for item in event_line.split(" "):
        key, _, value = item.partition("=")
        fields[key] = value
    return fields


class Collector:
    """Shared core of the collector: framing in, acks out, files on disk.

    Thread safety: per-agent ingest is serialized by that agent's lock;
    queries snapshot the index under the same lock and therefore observe a
    consistent prefix of the log.
    """

    def __init__(self, store_dir, key: bytes, chambers=None, notifier=None):
        self.store_dir = str(store_dir)
        self.key = key
        self.registry = parameter_registry(chambers) if chambers else parameter_registry()
        self.notifier = notifier or AlarmNotifier()
        self.events_dir = os.path.join(self.store_dir, "events")
        self.rules_dir = os.path.join(self.store_dir, "rules")
        os.makedirs(self.events_dir, exist_ok=True)
        os.makedirs(self.rules_dir, exist_ok=True)
        self._agents = {}
        self._agents_lock = threading.Lock()
        self._rules = {}  # tag -> (version, source)
        self._scan_store()

    # -- startup recovery -------------------------------------------------------

    def _scan_store(self):
        for name in sorted(os.listdir(self.events_dir)):
            if not name.endswith(".log"):
                continue
            tag = name[:-len(".log")]
            state = self._agent_state(tag)
            with open(state.log_path, "r", encoding="utf-8") as fh:
                for raw in fh:
                    line = raw.rstrip("\n")
                    if not line:
                        continue
                    prefix, seq, event_line = self._split_store_line(line)
                    dedup_admit(state.dedup, seq)
                    self._index_line(state, seq, event_line, line)
        for name in sorted(os.listdir(self.rules_dir)):
            if not name.endswith(".rules"):
                continue
            tag = name[:-len(".rules")]
            with open(os.path.join(self.rules_dir, name), "r", encoding="utf-8") as fh:
                source = fh.read()
            self._rules[tag] = (compile_ruleset(source, self.registry).version, source)

    @staticmethod
    def _split_store_line(line: str):
        agent_part, _, rest = line.partition(" ")
        seq_part, _, event_line = rest.partition(" ")
        if not agent_part.startswith("agent=") or not seq_part.startswith("seq="):
            raise ValueError(f"bad store line {line!r}")
        return agent_part[len("agent="):], int(seq_part[len("seq="):]), event_line

    def _index_line(self, state, seq, event_line, store_line):
        fields = _line_fields(event_line)
        first_ns = Timestamp.parse(fields["first"]).to_ns()
        state.index.append((first_ns, seq, fields["class"], fields["sev"], store_line))

    def _agent_state(self, tag: str) -> _AgentState:
        with self._agents_lock:
            state = self._agents.get(tag)
            if state is None:
                state = _AgentState(os.path.join(self.events_dir, f"{tag}.log"))
                self._agents[tag] = state
            return state

    # -- frame entry point ---------------------------------------------------------

    def handle_frame(self, raw: bytes):
        """Process one frame; returns response bytes (possibly several
        concatenated frames) or None to reject the connection."""
        try:
            frame = decode_frame(raw, self.key)
        except WireError:
            return None  # no ack; the sender retries
        agent = AgentId.from_raw(frame.agent_id)
        if frame.ptype in (PT_EVENT_BATCH, PT_ALARM_NOTICE):
            return self._handle_ingest(agent, frame)
        if frame.ptype == PT_RULESET_POLL:
            return self._handle_poll(agent, frame)
        if frame.ptype == PT_RULESET_UPDATE:
            return self._handle_publish(agent, frame)
        if frame.ptype == PT_QUERY:
            return self._handle_query(agent, frame)
        return self._error(agent, frame.seq, "BAD_REQUEST", f"ptype {frame.ptype}")

    def _reply(self, agent, ptype, seq, payload):
        return encode_frame(ptype, agent.raw, seq, payload, self.key)

    def _error(self, agent, seq, code, message):
        return self._reply(agent, PT_ERROR, seq, encode_error_payload(code, message))

    # -- ingest ---------------------------------------------------------------------

    def _handle_ingest(self, agent, frame):
        try:
            records = decode_batch_payload(frame.payload)
            parsed = [decode_seq_record(record) for record in records]
        except (WireError, ParseError):
            return None
        state = self._agent_state(agent.tag)
        with state.lock:
            admitted = []
            for seq, event_line in parsed:
                try:
                    if dedup_admit(state.dedup, seq) is not ADMIT:
                        continue
                except WindowOverflow:
                    continue  # too far ahead; agent resends once the gap fills
                admitted.append((seq, event_line))
            alarm_lines = []
            if admitted:
                with open(state.log_path, "a", encoding="utf-8") as fh:
                    for seq, event_line in admitted:
                        store_line = f"agent={agent.tag} seq={seq} {event_line}"
                        fh.write(store_line + "\n")
                        self._index_line(state, seq, event_line, store_line)
                        if f" sev={Severity.ALARM.value} " in f" {event_line} ":
                            alarm_lines.append(store_line)
                    fh.flush()
                    os.fsync(fh.fileno())
            watermark = state.dedup.watermark
        for line in alarm_lines:  # after append+sync, outside the lock
            self.notifier.notify(line)
        return self._reply(agent, PT_ACK, frame.seq, encode_ack_payload(watermark))

    # -- rule repository ---------------------------------------------------------------

    def publish_ruleset(self, target_tag: str, source: str) -> int:
        """Validate and store a rule set for `target_tag`; versions must
        strictly increase. Returns the stored version."""
        ruleset = compile_ruleset(source, self.registry)
        current = self._rules.get(target_tag)
        if current is not None and ruleset.version <= current[0]:
            raise StaleVersion(
                f"published version {ruleset.version} <= current {current[0]}")
        path = os.path.join(self.rules_dir, f"{target_tag}.rules")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(source)
            fh.flush()
            os.fsync(fh.fileno())
        self._rules[target_tag] = (ruleset.version, source)
        return ruleset.version

    def ruleset_for(self, tag: str):
        return self._rules.get(tag)

    def _handle_publish(self, agent, frame):
        try:
            version = self.publish_ruleset(
                agent.tag, frame.payload.decode("utf-8", errors="replace"))
        except StaleVersion as exc:
            return self._error(agent, frame.seq, "STALE_VERSION", str(exc))
        except ParseError as exc:
            return self._error(agent, frame.seq, "PARSE_ERROR", str(exc))
        return self._reply(agent, PT_ACK, frame.seq, encode_ack_payload(version))

    def _handle_poll(self, agent, frame):
        entry = self._rules.get(agent.tag)
        if entry is None:
            watermark = self._agent_state(agent.tag).dedup.watermark
            return self._reply(agent, PT_ACK, frame.seq, encode_ack_payload(watermark))
        _, source = entry
        return self._reply(agent, PT_RULESET_UPDATE, frame.seq, source.encode("utf-8"))

    # -- queries ----------------------------------------------------------------------------

    def query(self, tag: str, violation_class=None, from_ns=None, to_ns=None):
        """Store lines for `tag` matching the filters, ordered by first_at."""
        with self._agents_lock:
            state = self._agents.get(tag)
        if state is None:
            raise UnknownAgent(tag)
        with state.lock:
            snapshot = list(state.index)
        wanted = violation_class.value if violation_class is not None else None
        out = []
        for first_ns, seq, cls, _sev, line in sorted(snapshot, key=lambda e: (e[0], e[1])):
            if wanted is not None and cls != wanted:
                continue
            if from_ns is not None and first_ns < from_ns:
                continue
            if to_ns is not None and first_ns > to_ns:
                continue
            out.append(line)
        return out

    def _handle_query(self, agent, frame):
        try:
            tag, cls, from_ns, to_ns = _parse_query(frame.payload.decode("utf-8"))
        except (ValueError, ParseError) as exc:
            return self._error(agent, frame.seq, "BAD_REQUEST", str(exc))
        try:
            lines = self.query(tag, cls, from_ns, to_ns)
        except UnknownAgent as exc:
            return self._error(agent, frame.seq, "UNKNOWN_AGENT", str(exc))
        frames = []
        for start in range(0, len(lines), QUERY_BATCH_LINES):
            chunk = lines[start:start + QUERY_BATCH_LINES]
            frames.append(self._reply(agent, PT_QUERY_RESULT, frame.seq,
                                      encode_batch_payload(chunk)))
        frames.append(self._reply(agent, PT_ACK, frame.seq, encode_ack_payload(len(lines))))
        return b"".join(frames)


def _parse_query(text: str):
    from .telemetry import ViolationClass

    tag = None
    cls = None
    from_ns = None
    to_ns = None
    for token in text.split():
        key, eq, value = token.partition("=")
        if not eq:
            raise ValueError(f"bad query token {token!r}")
        if key == "agent":
            tag = value
        elif key == "class":
            cls = ViolationClass(value)
        elif key == "from":
            from_ns = Timestamp.parse(value).to_ns()
        elif key == "to":
            to_ns = Timestamp.parse(value).to_ns()
        else:
            raise ValueError(f"unknown query key {key!r}")
    if tag is None:
        raise ValueError("query needs agent=<tag>")
    return tag, cls, from_ns, to_ns


def encode_query_payload(tag, violation_class=None, from_ts=None, to_ts=None) -> bytes:
    parts = [f"agent={tag}"]
    if violation_class is not None:
        parts.append(f"class={violation_class.value}")
    if from_ts is not None:
        parts.append(f"from={from_ts.text()}")
    if to_ts is not None:
        parts.append(f"to={to_ts.text()}")
    return " ".join(parts).encode("utf-8")


# -- TCP service ------------------------------------------------------------------

class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        while True:
            try:
                raw = recv_frame(self.request)
            except Exception:
                return
            if not raw:
                return
            response = self.server.collector.handle_frame(raw)
            if response is None:
                return  # connection-level reject; sender retries
            try:
                self.request.sendall(response)
            except OSError:
                return


class CollectorServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, collector: Collector, host: str, port: int):
        super().__init__((host, port), _Handler)
        self.collector = collector

    @property
    def address(self):
        return self.socket.getsockname()
