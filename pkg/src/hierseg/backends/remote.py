"""Client side of the remote inference protocol: transports, connection, pool."""

from __future__ import annotations

import queue
import socket
import subprocess
import threading
from typing import Callable, Sequence

import numpy as np

from ..core import Image, ScoreMap
from ..errors import (
    ClassCountMismatchError,
    ConnectionLostError,
    DimensionMismatchError,
    FrameError,
    RemoteError,
)
from . import wire
from .base import SegmenterBackend


class ByteStream:
    """Blocking byte-stream transport: exact reads, buffered writes."""

    def read_exact(self, n: int) -> bytes:
        raise NotImplementedError

    def write(self, data: bytes) -> None:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


class SocketStream(ByteStream):
    def __init__(self, sock: socket.socket):
        self._sock = sock

    def read_exact(self, n: int) -> bytes:
        chunks = []
        remaining = n
        while remaining:
            try:
                chunk = self._sock.recv(remaining)
            except OSError as e:
                raise ConnectionLostError(f"socket read failed: {e}") from e
            if not chunk:
                raise ConnectionLostError("connection closed by peer")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def write(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as e:
            raise ConnectionLostError(f"socket write failed: {e}") from e

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class PipeStream(ByteStream):
    """Stdio pipes of a child process (or any file-like reader/writer pair)."""

    def __init__(self, reader, writer, process: subprocess.Popen | None = None):
        self._reader = reader
        self._writer = writer
        self._process = process

    def read_exact(self, n: int) -> bytes:
        chunks = []
        remaining = n
        while remaining:
            chunk = self._reader.read(remaining)
            if not chunk:
                raise ConnectionLostError("stream closed by peer")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def write(self, data: bytes) -> None:
        try:
            self._writer.write(data)
            self._writer.flush()
        except (OSError, ValueError) as e:
            raise ConnectionLostError(f"pipe write failed: {e}") from e

    def close(self) -> None:
        for f in (self._writer, self._reader):
            try:
                f.close()
            except (OSError, ValueError):
                pass
        if self._process is not None:
            try:
                self._process.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._process.kill()
                self._process.wait()


def connect_tcp(host: str, port: int, timeout: float | None = 30.0) -> ByteStream:
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as e:
        raise ConnectionLostError(f"cannot connect to {host}:{port}: {e}") from e
    sock.settimeout(timeout)
    return SocketStream(sock)


def spawn_stdio(command: Sequence[str]) -> ByteStream:
    """Spawn a child backend speaking the protocol over stdin/stdout."""
    proc = subprocess.Popen(
        list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE
    )
    return PipeStream(proc.stdout, proc.stdin, proc)


class BackendConnection:
    """One strictly request-reply protocol connection; one request in flight."""

    def __init__(self, stream: ByteStream):
        self._stream = stream
        self.usable = True
        self.server_info: dict | None = None

    def _fail(self, exc: Exception) -> Exception:
        self.usable = False
        return exc

    def _write(self, data: bytes) -> None:
        try:
            self._stream.write(data)
        except ConnectionLostError as e:
            raise self._fail(e)

    def _read_frame(self) -> tuple[int, bytes]:
        try:
            return wire.read_frame(self._stream.read_exact)
        except FrameError as e:
            raise self._fail(e)
        except ConnectionLostError as e:
            raise self._fail(e)

    def handshake(self, task: str, num_classes: int, max_tile: int = 4096) -> dict:
        """Exchange HELLO / HELLO_ACK; verifies task and class count."""
        self._write(
            wire.encode_frame(wire.MSG_HELLO, wire.encode_hello_payload(task, num_classes, max_tile))
        )
        msg_type, payload = self._read_frame()
        if msg_type == wire.MSG_ERROR:
            raise self._fail(RemoteError(wire.decode_error_payload(payload)))
        if msg_type != wire.MSG_HELLO_ACK:
            raise self._fail(FrameError(f"expected HELLO_ACK, got message type {msg_type}"))
        info = wire.decode_hello_payload(payload)
        if info["task"] != task:
            raise self._fail(RemoteError(f"server task {info['task']!r} != {task!r}"))
        if int(info["num_classes"]) != num_classes:
            raise self._fail(
                ClassCountMismatchError(
                    f"server num_classes {info['num_classes']} != {num_classes}"
                )
            )
        self.server_info = info
        return info

    def infer(self, img: Image) -> ScoreMap:
        return remote_infer(self, img)

    def shutdown(self) -> None:
        if self.usable:
            try:
                self._stream.write(wire.encode_frame(wire.MSG_SHUTDOWN))
            except ConnectionLostError:
                pass
            self.usable = False
        self._stream.close()


def remote_infer(conn: BackendConnection, img: Image) -> ScoreMap:
    """Send one INFER frame, decode the SCORES reply bit-exactly."""
    if not conn.usable:
        raise ConnectionLostError("connection is marked unusable")
    if conn.server_info is None:
        raise FrameError("handshake must complete before INFER")
    max_tile = int(conn.server_info["max_tile"])
    if img.width > max_tile or img.height > max_tile:
        raise RemoteError(
            f"tile {img.width}x{img.height} exceeds server max_tile {max_tile}"
        )
    conn._write(wire.encode_frame(wire.MSG_INFER, wire.encode_infer_payload(img.pixels)))
    msg_type, payload = conn._read_frame()
    if msg_type == wire.MSG_ERROR:
        # application-level failure; the connection stays usable
        raise RemoteError(wire.decode_error_payload(payload))
    if msg_type != wire.MSG_SCORES:
        raise conn._fail(FrameError(f"expected SCORES, got message type {msg_type}"))
    try:
        scores = wire.decode_scores_payload(payload)
    except FrameError as e:
        raise conn._fail(e)
    h, w, k = scores.shape
    if (w, h) != (img.width, img.height):
        raise conn._fail(
            DimensionMismatchError(
                f"SCORES {w}x{h} does not match INFER {img.width}x{img.height}"
            )
        )
    if k != int(conn.server_info["num_classes"]):
        raise conn._fail(
            ClassCountMismatchError(
                f"SCORES class count {k} != handshaken {conn.server_info['num_classes']}"
            )
        )
    return ScoreMap(np.ascontiguousarray(scores))


class RemoteBackend(SegmenterBackend):
    """Remote model behind a pool of exclusive-access connections."""

    concurrency = "exclusive"

    def __init__(
        self,
        name: str,
        task: str,
        num_classes: int,
        stream_factory: Callable[[], ByteStream],
        max_tile: int = 4096,
        pool_size: int = 1,
    ):
        self.name = name
        self.task = task
        self.num_classes = num_classes
        self.max_tile = max_tile
        self._factory = stream_factory
        self._pool: queue.Queue[BackendConnection] = queue.Queue()
        self._created = 0
        self._capacity = max(1, pool_size)
        self._lock = threading.Lock()

    def _acquire(self) -> BackendConnection:
        try:
            return self._pool.get_nowait()
        except queue.Empty:
            pass
        with self._lock:
            create = self._created < self._capacity
            if create:
                self._created += 1
        if create:
            try:
                conn = BackendConnection(self._factory())
                conn.handshake(self.task, self.num_classes, self.max_tile)
                return conn
            except Exception:
                with self._lock:
                    self._created -= 1
                raise
        return self._pool.get()

    def infer(self, img: Image) -> ScoreMap:
        conn = self._acquire()
        try:
            result = remote_infer(conn, img)
        finally:
            if conn.usable:
                self._pool.put(conn)
            else:
                with self._lock:
                    self._created -= 1
        return result

    def close(self) -> None:
        while True:
            try:
                conn = self._pool.get_nowait()
            except queue.Empty:
                break
            conn.shutdown()
