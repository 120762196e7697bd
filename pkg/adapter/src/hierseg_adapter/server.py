"""Request-reply inference server over stdio or TCP.

One request in flight per connection; model failures surface as ERROR frames
and never kill the connection. SHUTDOWN ends the session with exit code 0.
"""

from __future__ import annotations

import argparse
import logging
import socket
import sys
import threading
from dataclasses import dataclass
from typing import BinaryIO, Sequence

from . import protocol
from .models import ModelFn, load_model

log = logging.getLogger("hierseg_adapter")


@dataclass(frozen=True)
class AdapterConfig:
    task: str
    num_classes: int
    model_spec: str = "constant"
    device: str = "cpu"
    max_tile: int = 512

    def __post_init__(self) -> None:
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.max_tile < 1:
            raise ValueError("max_tile must be >= 1")


class Stream:
    """Blocking exact-read / flushing-write wrapper over a file pair or socket."""

    def __init__(self, reader: BinaryIO, writer: BinaryIO):
        self._reader = reader
        self._writer = writer

    @classmethod
    def from_socket(cls, sock: socket.socket) -> "Stream":
        f = sock.makefile("rwb")
        return cls(f, f)

    def read_exact(self, n: int) -> bytes | None:
        """``None`` on clean EOF at a frame boundary; short reads raise."""
        chunks = []
        remaining = n
        while remaining:
            chunk = self._reader.read(remaining)
            if not chunk:
                if remaining == n:
                    return None
                raise ConnectionError("stream truncated mid-frame")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def write(self, data: bytes) -> None:
        self._writer.write(data)
        self._writer.flush()


def _reply_error(stream: Stream, message: str) -> None:
    log.warning("replying ERROR: %s", message)
    stream.write(protocol.encode_frame(protocol.MSG_ERROR, message.encode("utf-8")))


def serve(config: AdapterConfig, stream: Stream, model: ModelFn | None = None) -> int:
    """Serve one connection until SHUTDOWN or EOF; returns the exit code."""
    model = model or load_model(config.model_spec)
    while True:
        header = stream.read_exact(protocol.HEADER_SIZE)
        if header is None:
            log.info("peer closed the stream")
            return 0
        try:
            msg_type, length, problem = protocol.parse_header(header)
        except protocol.FrameProblem as e:
            # length itself is untrustworthy: report and stop reading
            _reply_error(stream, str(e))
            return 0
        payload = stream.read_exact(length) if length else b""
        if payload is None:
            raise ConnectionError("stream truncated mid-frame")
        if problem is not None:
            _reply_error(stream, problem)
            continue

        if msg_type == protocol.MSG_SHUTDOWN:
            log.info("SHUTDOWN received")
            return 0

        if msg_type == protocol.MSG_HELLO:
            try:
                hello = protocol.decode_hello(payload)
            except protocol.FrameProblem as e:
                _reply_error(stream, str(e))
                continue
            mismatches = []
            if hello["task"] != config.task:
                mismatches.append(f"task {hello['task']!r} != {config.task!r}")
            if int(hello["num_classes"]) != config.num_classes:
                mismatches.append(
                    f"num_classes {hello['num_classes']} != {config.num_classes}"
                )
            if mismatches:
                _reply_error(stream, "handshake mismatch: " + "; ".join(mismatches))
                continue
            ack = protocol.encode_hello(config.task, config.num_classes, config.max_tile)
            stream.write(protocol.encode_frame(protocol.MSG_HELLO_ACK, ack))
            continue

        if msg_type == protocol.MSG_INFER:
            try:
                w, h, rgb = protocol.decode_infer(payload)
            except protocol.FrameProblem as e:
                _reply_error(stream, str(e))
                continue
            if w > config.max_tile or h > config.max_tile:
                _reply_error(stream, f"tile {w}x{h} exceeds max_tile {config.max_tile}")
                continue
            try:
                scores = model(w, h, rgb, config.num_classes)
                reply = protocol.encode_frame(
                    protocol.MSG_SCORES,
                    protocol.encode_scores(w, h, config.num_classes, scores),
                )
            except Exception as e:  # crash isolation: the model must not kill us
                log.exception("model failed")
                _reply_error(stream, f"model failure: {e}")
                continue
            stream.write(reply)
            continue

        _reply_error(stream, f"unexpected message type {msg_type} for a server")


def serve_tcp(config: AdapterConfig, host: str, port: int, model: ModelFn | None = None):
    """Accept connections forever, one thread per connection. Returns the bound
    listener so callers (tests) can learn the ephemeral port."""
    model = model or load_model(config.model_spec)
    listener = socket.create_server((host, port))

    def accept_loop() -> None:
        while True:
            try:
                sock, peer = listener.accept()
            except OSError:
                return
            log.info("connection from %s", peer)

            def handle(s=sock):
                try:
                    serve(config, Stream.from_socket(s), model)
                except ConnectionError as e:
                    log.warning("connection dropped: %s", e)
                finally:
                    s.close()

            threading.Thread(target=handle, daemon=True).start()

    threading.Thread(target=accept_loop, daemon=True).start()
    return listener


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="hierseg-adapter",
        description="Inference server speaking the hierseg backend wire protocol",
    )
    parser.add_argument("--task", required=True, help="task name the client will handshake")
    parser.add_argument("--num-classes", type=int, required=True)
    parser.add_argument("--model", default="constant",
                        help="builtin name or import:module:attr")
    parser.add_argument("--device", default="cpu", help="device hint passed to real models")
    parser.add_argument("--max-tile", type=int, default=512)
    parser.add_argument("--listen", metavar="HOST:PORT",
                        help="serve TCP instead of stdio")
    parser.add_argument("--log-level", default="WARNING")
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")

    try:
        config = AdapterConfig(
            task=args.task,
            num_classes=args.num_classes,
            model_spec=args.model,
            device=args.device,
            max_tile=args.max_tile,
        )
        model = load_model(config.model_spec)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    if args.listen:
        host, _, port = args.listen.rpartition(":")
        listener = serve_tcp(config, host or "127.0.0.1", int(port), model)
        bound = listener.getsockname()
        print(f"listening on {bound[0]}:{bound[1]}", file=sys.stderr, flush=True)
        try:
            threading.Event().wait()
        except KeyboardInterrupt:
            return 0

    stdin = sys.stdin.buffer
    stdout = sys.stdout.buffer
    try:
        return serve(config, Stream(stdin, stdout), model)
    except ConnectionError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
