#!/usr/bin/env python3
"""Generate the golden wire-frame hex dumps checked into tests/golden/.

Intentionally self-contained: frames are packed here with struct/hmac/zlib
only, never through the library encoder, so the vectors stay an independent
reference for the frame layout. Run once from the repo root; the outputs are
committed.
"""

import hashlib
import hmac
import pathlib
import struct
import zlib

KEY = bytes(range(32))
AGENT = b"fridge-01".ljust(16, b"\x00")

EVENT_LINE = ("first=610.000000000 last=619.000000000 class=UUB id=door_max"
              " sev=LOG count=2 min=61.0 max=70.0 mean=65.5")
ALARM_LINE = ("first=3601.000000000 last=3601.000000000 class=UFB id=power_crit"
              " sev=ALARM count=1 min=280.5 max=280.5 mean=280.5")
RULES = "version 2\nrule door_max class=UUB when door_open_duration_s gt 60 then log\n"
STORE_LINE = "agent=fridge-01 seq=1 " + EVENT_LINE


def batch(records):
    payload = struct.pack(">I", len(records))
    for record in records:
        raw = record.encode("utf-8")
        payload += struct.pack(">H", len(raw)) + raw
    return payload


FRAMES = {
    "event_batch": (1, 7, batch([f"seq=1 {EVENT_LINE}", f"seq=2 {ALARM_LINE}"])),
    "alarm_notice": (2, 8, batch([f"seq=2 {ALARM_LINE}"])),
    "ack": (3, 9, struct.pack(">Q", 2)),
    "ruleset_update": (4, 10, RULES.encode("utf-8")),
    "ruleset_poll": (5, 11, b""),
    "query": (6, 12, b"agent=fridge-01 class=UUB"),
    "query_result": (7, 13, batch([STORE_LINE])),
    "error": (8, 14, b"code=UNKNOWN_AGENT msg=no such agent"),
}


def encode(ptype, seq, payload):
    head = struct.pack(">4sBB16sQI", b"EXDA", 1, ptype, AGENT, seq, len(payload)) + payload
    tag = hmac.new(KEY, head, hashlib.sha256).digest()
    crc = zlib.crc32(head + tag)
    return head + tag + struct.pack(">I", crc)


def main():
    out_dir = pathlib.Path(__file__).resolve().parent.parent / "tests" / "golden"
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, (ptype, seq, payload) in FRAMES.items():
        frame = encode(ptype, seq, payload)
        path = out_dir / f"frame_{name}.hex"
        path.write_text(frame.hex() + "\n", encoding="utf-8")
        print(f"{path.name}: {len(frame)} bytes")


if __name__ == "__main__":
    main()
