"""In-process protocol server used for the loopback self-test.

Runs a model function behind the wire protocol on one end of a socket pair,
so the client stack can be exercised with no external process.
"""

from __future__ import annotations

import socket
import threading
from typing import Callable

import numpy as np

from ..errors import ConnectionLostError, FrameError
from . import wire
from .remote import BackendConnection, ByteStream, SocketStream

ModelFn = Callable[[np.ndarray], np.ndarray]  # (h, w, 3) uint8 -> (h, w, K) float32


def constant_model(num_classes: int, class_index: int = 0, value: float = 1.0) -> ModelFn:
    def model(pixels: np.ndarray) -> np.ndarray:
        h, w, _ = pixels.shape
        scores = np.zeros((h, w, num_classes), dtype=np.float32)
        scores[:, :, class_index] = value
        return scores

    return model


def serve_stream(
    stream: ByteStream,
    model: ModelFn,
    *,
    task: str,
    num_classes: int,
    max_tile: int = 4096,
) -> None:
    """Answer frames until SHUTDOWN or the peer disconnects."""
    while True:
        try:
            msg_type, payload = wire.read_frame(stream.read_exact)
        except ConnectionLostError:
            return
        except FrameError as e:
            stream.write(wire.encode_frame(wire.MSG_ERROR, wire.encode_error_payload(str(e))))
            continue
        if msg_type == wire.MSG_SHUTDOWN:
            return
        if msg_type == wire.MSG_HELLO:
            try:
                info = wire.decode_hello_payload(payload)
            except FrameError as e:
                stream.write(wire.encode_frame(wire.MSG_ERROR, wire.encode_error_payload(str(e))))
                continue
            if info["task"] != task or int(info["num_classes"]) != num_classes:
                msg = (
                    f"handshake mismatch: client wants task={info['task']!r} "
                    f"num_classes={info['num_classes']}, server has task={task!r} "
                    f"num_classes={num_classes}"
                )
                stream.write(wire.encode_frame(wire.MSG_ERROR, wire.encode_error_payload(msg)))
                continue
            ack = wire.encode_hello_payload(task, num_classes, max_tile)
            stream.write(wire.encode_frame(wire.MSG_HELLO_ACK, ack))
            continue
        if msg_type == wire.MSG_INFER:
            try:
                pixels = wire.decode_infer_payload(payload)
                scores = np.asarray(model(pixels), dtype=np.float32)
                reply = wire.encode_frame(wire.MSG_SCORES, wire.encode_scores_payload(scores))
            except Exception as e:  # model failures surface as ERROR, not a dead server
                reply = wire.encode_frame(wire.MSG_ERROR, wire.encode_error_payload(str(e)))
            stream.write(reply)
            continue
        stream.write(
            wire.encode_frame(
                wire.MSG_ERROR,
                wire.encode_error_payload(f"unexpected message type {msg_type}"),
            )
        )


class LoopbackServer:
    """Context manager running ``serve_stream`` on a socket pair in a thread."""

    def __init__(self, model: ModelFn, *, task: str, num_classes: int, max_tile: int = 4096):
        self.model = model
        self.task = task
        self.num_classes = num_classes
        self.max_tile = max_tile
        self._client_sock: socket.socket | None = None
        self._thread: threading.Thread | None = None

    def __enter__(self) -> "LoopbackServer":
        server_sock, client_sock = socket.socketpair()
        self._client_sock = client_sock
        self._thread = threading.Thread(
            target=serve_stream,
            args=(SocketStream(server_sock),),
            kwargs={
                "model": self.model,
                "task": self.task,
                "num_classes": self.num_classes,
                "max_tile": self.max_tile,
            },
            daemon=True,
        )
        self._thread.start()
        return self

    def connect(self) -> BackendConnection:
        conn = BackendConnection(SocketStream(self._client_sock))
        conn.handshake(self.task, self.num_classes, self.max_tile)
        return conn

    def raw_stream(self) -> ByteStream:
        return SocketStream(self._client_sock)

    def __exit__(self, *exc) -> None:
        try:
            self._client_sock.close()
        except OSError:
            pass
        self._thread.join(timeout=5)
