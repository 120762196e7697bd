"""Length-prefixed binary frames for the remote inference protocol.

Frame layout: magic "HSEG" (4 bytes), version u8 = 1, msg_type u8,
payload_len u32 little-endian, then the payload.

Message types: 1 HELLO, 2 HELLO_ACK, 3 INFER, 4 SCORES, 5 ERROR, 6 SHUTDOWN.
HELLO / HELLO_ACK payloads are canonical UTF-8 JSON {task, num_classes, max_tile}.
INFER payload: u32 w, u32 h, u32 c=3, then w*h*3 RGB bytes, row-major.
SCORES payload: u32 w, u32 h, u32 K, then w*h*K little-endian float32,
row-major, channel-last.
"""

from __future__ import annotations

import json
import struct
from typing import Callable

import numpy as np

from ..errors import FrameError

MAGIC = b"HSEG"
VERSION = 1

MSG_HELLO = 1
MSG_HELLO_ACK = 2
MSG_INFER = 3
MSG_SCORES = 4
MSG_ERROR = 5
MSG_SHUTDOWN = 6

_MSG_TYPES = frozenset({MSG_HELLO, MSG_HELLO_ACK, MSG_INFER, MSG_SCORES, MSG_ERROR, MSG_SHUTDOWN})

HEADER = struct.Struct("<4sBBI")
HEADER_SIZE = HEADER.size
DIMS = struct.Struct("<III")

MAX_PAYLOAD = 1 << 28  # 256 MiB guard against malformed lengths


def encode_frame(msg_type: int, payload: bytes = b"") -> bytes:
    if msg_type not in _MSG_TYPES:
        raise ValueError(f"unknown message type {msg_type}")
    return HEADER.pack(MAGIC, VERSION, msg_type, len(payload)) + payload


def decode_header(header: bytes) -> tuple[int, int]:
    """Validate a 10-byte header; returns (msg_type, payload_len)."""
    if len(header) != HEADER_SIZE:
        raise FrameError(f"short frame header: {len(header)} bytes")
    magic, version, msg_type, length = HEADER.unpack(header)
    if magic != MAGIC:
        raise FrameError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FrameError(f"unsupported protocol version {version}")
    if msg_type not in _MSG_TYPES:
        raise FrameError(f"unknown message type {msg_type}")
    if length > MAX_PAYLOAD:
        raise FrameError(f"payload length {length} exceeds limit {MAX_PAYLOAD}")
    return msg_type, length


def read_frame(read_exact: Callable[[int], bytes]) -> tuple[int, bytes]:
    """Read one frame through ``read_exact(n) -> bytes``."""
    msg_type, length = decode_header(read_exact(HEADER_SIZE))
    payload = read_exact(length) if length else b""
    return msg_type, payload


def decode_frame(frame: bytes) -> tuple[int, bytes]:
    """Parse a complete frame held in memory."""
    msg_type, length = decode_header(frame[:HEADER_SIZE])
    if len(frame) != HEADER_SIZE + length:
        raise FrameError(f"frame length {len(frame)} != header + payload {HEADER_SIZE + length}")
    return msg_type, frame[HEADER_SIZE:]


def encode_hello_payload(task: str, num_classes: int, max_tile: int) -> bytes:
    doc = {"task": task, "num_classes": int(num_classes), "max_tile": int(max_tile)}
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def decode_hello_payload(payload: bytes) -> dict:
    try:
        doc = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FrameError(f"hello payload is not valid JSON: {e}") from e
    for key in ("task", "num_classes", "max_tile"):
        if key not in doc:
            raise FrameError(f"hello payload missing key {key!r}")
    return doc


def encode_infer_payload(pixels: np.ndarray) -> bytes:
    """``pixels``: (h, w, 3) uint8, row-major."""
    h, w, c = pixels.shape
    if c != 3:
        raise ValueError("INFER carries 3-channel RGB")
    return DIMS.pack(w, h, c) + np.ascontiguousarray(pixels).tobytes()


def decode_infer_payload(payload: bytes) -> np.ndarray:
    if len(payload) < DIMS.size:
        raise FrameError("INFER payload shorter than its dimension header")
    w, h, c = DIMS.unpack_from(payload)
    if c != 3:
        raise FrameError(f"INFER channel count {c} != 3")
    expected = DIMS.size + w * h * 3
    if len(payload) != expected:
        raise FrameError(f"INFER payload length {len(payload)} != {expected}")
    return np.frombuffer(payload, dtype=np.uint8, offset=DIMS.size).reshape(h, w, 3)


def encode_scores_payload(scores: np.ndarray) -> bytes:
    """``scores``: (h, w, K) float32, row-major, channel-last."""
    h, w, k = scores.shape
    return DIMS.pack(w, h, k) + np.ascontiguousarray(scores, dtype="<f4").tobytes()


def decode_scores_payload(payload: bytes) -> np.ndarray:
    if len(payload) < DIMS.size:
        raise FrameError("SCORES payload shorter than its dimension header")
    w, h, k = DIMS.unpack_from(payload)
    expected = DIMS.size + w * h * k * 4
    if len(payload) != expected:
        raise FrameError(f"SCORES payload length {len(payload)} != {expected}")
    raw = np.frombuffer(payload, dtype="<f4", offset=DIMS.size)
    return raw.reshape(h, w, k).astype(np.float32)


def encode_error_payload(message: str) -> bytes:
    return message.encode("utf-8")


def decode_error_payload(payload: bytes) -> str:
    return payload.decode("utf-8", errors="replace")
