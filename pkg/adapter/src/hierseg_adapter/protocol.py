"""Frame codec for the inference wire protocol, standard library only.

Frame: magic "HSEG", version u8 = 1, msg_type u8, payload_len u32 LE, payload.
Types: 1 HELLO, 2 HELLO_ACK, 3 INFER, 4 SCORES, 5 ERROR, 6 SHUTDOWN.
HELLO / HELLO_ACK carry canonical JSON {task, num_classes, max_tile}.
INFER: u32 w, u32 h, u32 c=3, then w*h*3 RGB bytes.
SCORES: u32 w, u32 h, u32 K, then w*h*K little-endian float32.
"""

from __future__ import annotations

import json
import struct

MAGIC = b"HSEG"
VERSION = 1

MSG_HELLO = 1
MSG_HELLO_ACK = 2
MSG_INFER = 3
MSG_SCORES = 4
MSG_ERROR = 5
MSG_SHUTDOWN = 6

KNOWN_TYPES = frozenset({1, 2, 3, 4, 5, 6})

HEADER = struct.Struct("<4sBBI")
HEADER_SIZE = HEADER.size
DIMS = struct.Struct("<III")

MAX_PAYLOAD = 1 << 28


class FrameProblem(Exception):
    """Malformed frame; the server reports it and keeps serving."""


def encode_frame(msg_type: int, payload: bytes = b"") -> bytes:
    return HEADER.pack(MAGIC, VERSION, msg_type, len(payload)) + payload


def parse_header(header: bytes) -> tuple[int, int, str | None]:
    """Returns (msg_type, payload_len, problem). A sane length with a bad
    magic/version/type still reports the length so the payload can be drained."""
    magic, version, msg_type, length = HEADER.unpack(header)
    if length > MAX_PAYLOAD:
        raise FrameProblem(f"payload length {length} exceeds limit {MAX_PAYLOAD}")
    problem = None
    if magic != MAGIC:
        problem = f"bad magic {magic!r}"
    elif version != VERSION:
        problem = f"unsupported protocol version {version}"
    elif msg_type not in KNOWN_TYPES:
        problem = f"unknown message type {msg_type}"
    return msg_type, length, problem


def encode_hello(task: str, num_classes: int, max_tile: int) -> bytes:
    doc = {"task": task, "num_classes": int(num_classes), "max_tile": int(max_tile)}
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def decode_hello(payload: bytes) -> dict:
    try:
        doc = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FrameProblem(f"hello payload is not valid JSON: {e}") from e
    for key in ("task", "num_classes", "max_tile"):
        if key not in doc:
            raise FrameProblem(f"hello payload missing key {key!r}")
    return doc


def decode_infer(payload: bytes) -> tuple[int, int, bytes]:
    if len(payload) < DIMS.size:
        raise FrameProblem("INFER payload shorter than its dimension header")
    w, h, c = DIMS.unpack_from(payload)
    if c != 3:
        raise FrameProblem(f"INFER channel count {c} != 3")
    expected = DIMS.size + w * h * 3
    if len(payload) != expected:
        raise FrameProblem(f"INFER payload length {len(payload)} != {expected}")
    return w, h, payload[DIMS.size:]


def encode_scores(w: int, h: int, num_classes: int, scores: bytes) -> bytes:
    expected = w * h * num_classes * 4
    if len(scores) != expected:
        raise ValueError(f"scores blob is {len(scores)} bytes, expected {expected}")
    return DIMS.pack(w, h, num_classes) + scores
