"""Protocol conformance checks, runnable against any server implementation.

The same checks validate the built-in loopback server and external adapters:
a fixed HELLO / INFER / SHUTDOWN transcript for byte-level comparison, plus a
randomized INFER sweep verifying reply dimensions and class counts.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..core import Image
from ..errors import ProtocolError
from . import wire
from .remote import BackendConnection, ByteStream

GOLDEN_TILE = np.array(
    [[[10, 20, 30], [40, 50, 60]], [[70, 80, 90], [100, 110, 120]]], dtype=np.uint8
)


def golden_request_frames(task: str, num_classes: int, max_tile: int) -> list[bytes]:
    """The client bytes of the fixed conformance transcript."""
    return [
        wire.encode_frame(
            wire.MSG_HELLO, wire.encode_hello_payload(task, num_classes, max_tile)
        ),
        wire.encode_frame(wire.MSG_INFER, wire.encode_infer_payload(GOLDEN_TILE)),
        wire.encode_frame(wire.MSG_SHUTDOWN),
    ]


def frame_roundtrip_check(num_frames: int = 1000, seed: int = 7) -> int:
    """Random frames survive encode -> decode -> encode unchanged; returns count."""
    rng = np.random.default_rng(seed)
    types = sorted(wire._MSG_TYPES)
    checked = 0
    for _ in range(num_frames):
        msg_type = int(types[rng.integers(len(types))])
        payload = rng.integers(0, 256, size=int(rng.integers(0, 512)), dtype=np.uint8).tobytes()
        frame = wire.encode_frame(msg_type, payload)
        decoded_type, decoded_payload = wire.decode_frame(frame)
        if decoded_type != msg_type or decoded_payload != payload:
            raise AssertionError("frame round-trip mismatch")
        if wire.encode_frame(decoded_type, decoded_payload) != frame:
            raise AssertionError("frame re-encode mismatch")
        checked += 1
    return checked


def random_infer_check(
    make_stream: Callable[[], ByteStream],
    *,
    task: str,
    num_classes: int,
    max_tile: int,
    num_requests: int = 100,
    seed: int = 11,
) -> int:
    """Random INFER sizes up to ``max_tile``; every reply must decode with
    matching dimensions and class count. Returns the number of requests."""
    rng = np.random.default_rng(seed)
    conn = BackendConnection(make_stream())
    try:
        conn.handshake(task, num_classes, max_tile)
        for _ in range(num_requests):
            w = int(rng.integers(1, max_tile + 1))
            h = int(rng.integers(1, max_tile + 1))
            pixels = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
            scores = conn.infer(Image(pixels))
            if (scores.width, scores.height, scores.num_classes) != (w, h, num_classes):
                raise ProtocolError(
                    f"reply shape {scores.width}x{scores.height}x{scores.num_classes} "
                    f"!= request {w}x{h}x{num_classes}"
                )
    finally:
        conn.shutdown()
    return num_requests
