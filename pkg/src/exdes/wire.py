"""Authenticated binary framing for agent/collector traffic.

Frame layout (big endian, 34-byte header + payload + 36-byte trailer)::

    magic   4  b"EXDA"
    version 1  0x01
    ptype   1  1=EventBatch 2=AlarmNotice 3=Ack 4=RulesetUpdate 5=RulesetPoll
               6=Query 7=QueryResult 8=Error
    agent   16 agent identity
    seq     8  frame counter (monotone per agent connection)
    p_len   4  payload length, <= 1 MiB
    payload p_len bytes
    auth    32 HMAC-SHA256 over everything above, keyed with the shared secret
    crc     4  CRC-32 (poly 0x04C11DB7 reflected, init/xorout 0xFFFFFFFF)
               over everything above including the auth tag

Authenticity, not confidentiality: the HMAC is what makes remote rule
updates safe to apply; payload encryption would slot in as a payload codec.
Event and alarm batches carry their own per-event sequence numbers inside the
payload (`seq=<n> ` + canonical event line) so receivers deduplicate per
event, independent of frame retries.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
import zlib
from dataclasses import dataclass

from .errors import (
    BadAuth,
    BadCrc,
    BadMagic,
    ParseError,
    PayloadTooLarge,
    Truncated,
    UnsupportedVersion,
    WindowOverflow,
)

MAGIC = b"EXDA"
WIRE_VERSION = 1
MAX_PAYLOAD = 1_048_576
HEADER = struct.Struct(">4sBB16sQI")
HEADER_LEN = HEADER.size  # 34
TRAILER_LEN = 36  # 32-byte auth tag + 4-byte crc

PT_EVENT_BATCH = 1
PT_ALARM_NOTICE = 2
PT_ACK = 3
PT_RULESET_UPDATE = 4
PT_RULESET_POLL = 5
PT_QUERY = 6
PT_QUERY_RESULT = 7
PT_ERROR = 8


@dataclass(frozen=True)
class Frame:
    ptype: int
    agent_id: bytes
    seq: int
    payload: bytes


def encode_frame(ptype: int, agent_id: bytes, seq: int, payload: bytes, key: bytes) -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise PayloadTooLarge(f"{len(payload)} > {MAX_PAYLOAD}")
    if len(agent_id) != 16:
        raise ValueError("agent_id must be 16 bytes")
    head = HEADER.pack(MAGIC, WIRE_VERSION, ptype, agent_id, seq, len(payload)) + payload
    tag = hmac.new(key, head, hashlib.sha256).digest()
    crc = zlib.crc32(head + tag)
    return head + tag + struct.pack(">I", crc)


def decode_frame(data: bytes, key: bytes) -> Frame:
    """Parse and verify arbitrary bytes; checks magic, version, length, CRC,
    then the auth tag, raising a distinct error at the first failure."""
    if len(data) < 4:
        raise Truncated(f"{len(data)} bytes")
    if data[:4] != MAGIC:
        raise BadMagic(data[:4].hex())
    if len(data) < 5:
        raise Truncated(f"{len(data)} bytes")
    if data[4] != WIRE_VERSION:
        raise UnsupportedVersion(str(data[4]))
    if len(data) < HEADER_LEN + TRAILER_LEN:
        raise Truncated(f"{len(data)} bytes")
    _, _, ptype, agent_id, seq, payload_len = HEADER.unpack_from(data)
    if payload_len > MAX_PAYLOAD:
        raise Truncated(f"declared payload {payload_len} exceeds bound")
    if len(data) != HEADER_LEN + payload_len + TRAILER_LEN:
        raise Truncated(f"{len(data)} != {HEADER_LEN + payload_len + TRAILER_LEN}")
    body = data[:-4]
    (crc,) = struct.unpack_from(">I", data, len(data) - 4)
    if zlib.crc32(body) != crc:
        raise BadCrc(f"{zlib.crc32(body):08x} != {crc:08x}")
    signed, tag = body[:-32], body[-32:]
    expected = hmac.new(key, signed, hashlib.sha256).digest()
    if not hmac.compare_digest(tag, expected):
        raise BadAuth("auth tag mismatch")
    return Frame(ptype, agent_id, seq, data[HEADER_LEN:HEADER_LEN + payload_len])


# -- payload codecs --------------------------------------------------------------

def encode_batch_payload(records: list[str]) -> bytes:
    """Event/alarm batch: 4-byte count, then per record a 2-byte length and
    the UTF-8 record text (`seq=<n> ` + canonical event line)."""
    if not records:
        raise ValueError("batch must contain at least one record")
    out = [struct.pack(">I", len(records))]
    for record in records:
        raw = record.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise PayloadTooLarge(f"record of {len(raw)} bytes")
        out.append(struct.pack(">H", len(raw)))
        out.append(raw)
    return b"".join(out)


def decode_batch_payload(payload: bytes) -> list[str]:
    if len(payload) < 4:
        raise Truncated("batch payload shorter than count")
    (count,) = struct.unpack_from(">I", payload)
    if count < 1:
        raise ParseError(0, "batch count must be >= 1")
    records = []
    offset = 4
    for _ in range(count):
        if offset + 2 > len(payload):
            raise Truncated("batch record length missing")
        (length,) = struct.unpack_from(">H", payload, offset)
        offset += 2
        if offset + length > len(payload):
            raise Truncated("batch record body missing")
        records.append(payload[offset:offset + length].decode("utf-8"))
        offset += length
    if offset != len(payload):
        raise Truncated("trailing bytes after batch records")
    return records


def encode_seq_record(seq: int, event_line: str) -> str:
    return f"seq={seq} {event_line}"


def decode_seq_record(record: str):
    head, _, rest = record.partition(" ")
    if not head.startswith("seq=") or not head[4:].isdigit():
        raise ParseError(0, f"record must start with seq=<n>: {record!r}")
    return int(head[4:]), rest


def encode_ack_payload(watermark: int) -> bytes:
    return struct.pack(">Q", watermark)


def decode_ack_payload(payload: bytes) -> int:
    if len(payload) != 8:
        raise Truncated(f"ack payload of {len(payload)} bytes")
    return struct.unpack(">Q", payload)[0]


def encode_error_payload(code: str, message: str) -> bytes:
    return f"code={code} msg={message}".encode("utf-8")


def decode_error_payload(payload: bytes):
    text = payload.decode("utf-8", errors="replace")
    head, _, message = text.partition(" ")
    if not head.startswith("code=") or not message.startswith("msg="):
        raise ParseError(0, f"bad error payload: {text!r}")
    return head[5:], message[4:]


# -- per-agent receive-side deduplication -----------------------------------------

DEDUP_WINDOW = 1024


class DedupState:
    """Highest-contiguously-stored watermark plus a bounded out-of-order set."""

    __slots__ = ("watermark", "pending")

    def __init__(self, watermark: int = 0, pending=None):
        self.watermark = watermark
        self.pending = set(pending) if pending else set()

    def __repr__(self):
        return f"DedupState(watermark={self.watermark}, pending={sorted(self.pending)})"


ADMIT = "admit"
DUPLICATE = "duplicate"


def dedup_admit(state: DedupState, seq: int) -> str:
    """Admit `seq` exactly once; advances the watermark over contiguous runs.

    Sequences further than DEDUP_WINDOW ahead of the watermark raise
    WindowOverflow and must be resent after the gap fills.
    """
    if seq <= state.watermark or seq in state.pending:
        return DUPLICATE
    if seq > state.watermark + DEDUP_WINDOW:
        raise WindowOverflow(f"seq {seq} beyond watermark {state.watermark}+{DEDUP_WINDOW}")
    state.pending.add(seq)
    while state.watermark + 1 in state.pending:
        state.watermark += 1
        state.pending.remove(state.watermark)
    return ADMIT
