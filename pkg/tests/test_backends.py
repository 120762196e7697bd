import socket
import threading

import numpy as np
import pytest

from hierseg.backends import (
    BackendConnection,
    ColorRule,
    ColorRuleSet,
    build_backend,
    color_rule_segment,
    darkness_damage_segment,
    pixel_luma,
    remote_infer,
)
from hierseg.backends import wire
from hierseg.backends.base import block_darkness_segment
from hierseg.backends.loopback import LoopbackServer, constant_model, serve_stream
from hierseg.backends.remote import SocketStream
from hierseg.core import Image
from hierseg.errors import (
    ClassCountMismatchError,
    ConfigError,
    ConnectionLostError,
    FrameError,
    RemoteError,
)


def flat(color, h=2, w=2):
    return Image(np.full((h, w, 3), color, dtype=np.uint8))


class TestColorRules:
    RULES = ColorRuleSet(
        rules=(
            ColorRule((10, 20, 30), (0, 0, 0), 1),
            ColorRule((200, 0, 0), (5, 5, 5), 2),
        ),
        default_class=0,
    )

    def test_exact_color_one_hot(self):
        scores = color_rule_segment(flat((10, 20, 30)), self.RULES, 3)
        assert (scores.scores[:, :, 1] == 1.0).all()
        assert (scores.scores[:, :, 0] == 0.0).all()

    def test_unmatched_color_default(self):
        scores = color_rule_segment(flat((90, 90, 90)), self.RULES, 3)
        assert (scores.scores[:, :, 0] == 1.0).all()

    def test_tolerance_window(self):
        scores = color_rule_segment(flat((203, 4, 3)), self.RULES, 3)
        assert (scores.scores[:, :, 2] == 1.0).all()

    def test_first_match_wins(self):
        overlapping = ColorRuleSet(
            rules=(
                ColorRule((50, 50, 50), (10, 10, 10), 1),
                ColorRule((50, 50, 50), (10, 10, 10), 2),
            ),
            default_class=0,
        )
        scores = color_rule_segment(flat((50, 50, 50)), overlapping, 3)
        assert (scores.scores[:, :, 1] == 1.0).all()


class TestDarkness:
    def test_white_is_non_damage(self):
        scores = darkness_damage_segment(flat((255, 255, 255)), 60, (185, 80, 35), 10)
        assert (scores.scores[:, :, 0] == 1.0).all()

    def test_black_is_concrete_damage(self):
        scores = darkness_damage_segment(flat((0, 0, 0)), 60, (185, 80, 35), 10)
        assert (scores.scores[:, :, 1] == 1.0).all()

    def test_rebar_color_detected(self):
        scores = darkness_damage_segment(flat((185, 80, 35)), 60, (185, 80, 35), 10)
        assert (scores.scores[:, :, 2] == 1.0).all()

    def test_luma_matches_integer_oracle(self):
        rng = np.random.default_rng(0)
        pixels = rng.integers(0, 256, size=(5, 5, 3), dtype=np.uint8)
        luma = pixel_luma(pixels)
        for y in range(5):
            for x in range(5):
                r, g, b = (int(v) for v in pixels[y, x])
                assert luma[y, x] == (299 * r + 587 * g + 114 * b) // 1000

    def test_threshold_boundary(self):
        # luma of (60, 60, 60) is exactly 60: not below the threshold
        scores = darkness_damage_segment(flat((60, 60, 60)), 60, (185, 80, 35), 0)
        assert (scores.scores[:, :, 0] == 1.0).all()


class TestBlockDarkness:
    def test_thin_line_missed_thick_block_found(self):
        pixels = np.full((6, 6, 3), 200, dtype=np.uint8)
        pixels[2, 1:5] = 0  # 1px horizontal line
        scores = block_darkness_segment(Image(pixels), 60, (185, 80, 35), 0, block_size=2)
        assert (scores.scores[:, :, 1] == 0.0).all()
        pixels[3, 1:5] = 0  # thicken to 2px
        scores = block_darkness_segment(Image(pixels), 60, (185, 80, 35), 0, block_size=2)
        assert scores.scores[2, 2, 1] == 1.0

    def test_no_detection_at_tile_edge(self):
        pixels = np.zeros((4, 4, 3), dtype=np.uint8)  # fully dark
        scores = block_darkness_segment(Image(pixels), 60, (185, 80, 35), 0, block_size=2)
        # bottom row and right column cannot anchor a 2x2 window
        assert (scores.scores[3, :, 1] == 0.0).all()
        assert (scores.scores[:, 3, 1] == 0.0).all()
        assert (scores.scores[:3, :3, 1] == 1.0).all()


class TestWireFraming:
    def test_golden_header_bytes(self):
        frame = wire.encode_frame(wire.MSG_SHUTDOWN)
        assert frame == b"HSEG\x01\x06\x00\x00\x00\x00"

    def test_golden_scores_frame(self):
        scores = np.array([[[1.0, 0.0]]], dtype=np.float32)
        frame = wire.encode_frame(wire.MSG_SCORES, wire.encode_scores_payload(scores))
        expected = (
            b"HSEG\x01\x04\x14\x00\x00\x00"
            + b"\x01\x00\x00\x00\x01\x00\x00\x00\x02\x00\x00\x00"
            + b"\x00\x00\x80\x3f" + b"\x00\x00\x00\x00"
        )
        assert frame == expected

    def test_golden_infer_frame(self):
        pixels = np.arange(12, dtype=np.uint8).reshape(2, 2, 3)
        frame = wire.encode_frame(wire.MSG_INFER, wire.encode_infer_payload(pixels))
        assert frame[:10] == b"HSEG\x01\x03\x18\x00\x00\x00"
        assert frame[10:22] == b"\x02\x00\x00\x00\x02\x00\x00\x00\x03\x00\x00\x00"
        assert frame[22:] == bytes(range(12))

    def test_roundtrip_random_payloads(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            msg_type = int(rng.choice(sorted(wire._MSG_TYPES)))
            payload = rng.integers(0, 256, size=int(rng.integers(0, 300)), dtype=np.uint8).tobytes()
            frame = wire.encode_frame(msg_type, payload)
            assert wire.decode_frame(frame) == (msg_type, payload)

    def test_scores_payload_roundtrip_bit_exact(self):
        rng = np.random.default_rng(2)
        scores = rng.random((3, 2, 5), dtype=np.float32)
        back = wire.decode_scores_payload(wire.encode_scores_payload(scores))
        assert np.array_equal(back, scores)

    def test_bad_magic_rejected(self):
        with pytest.raises(FrameError, match="magic"):
            wire.decode_frame(b"XSEG\x01\x06\x00\x00\x00\x00")

    def test_bad_version_rejected(self):
        with pytest.raises(FrameError, match="version"):
            wire.decode_frame(b"HSEG\x02\x06\x00\x00\x00\x00")

    def test_bad_type_rejected(self):
        with pytest.raises(FrameError, match="type"):
            wire.decode_frame(b"HSEG\x01\x09\x00\x00\x00\x00")

    def test_truncated_payload_rejected(self):
        with pytest.raises(FrameError):
            wire.decode_frame(b"HSEG\x01\x05\x04\x00\x00\x00ab")

    def test_hello_payload_is_canonical_json(self):
        payload = wire.encode_hello_payload("damage", 3, 512)
        assert payload == b'{"max_tile":512,"num_classes":3,"task":"damage"}'


class TestLoopback:
    def test_constant_backend_constant_scores(self):
        with LoopbackServer(constant_model(3), task="damage", num_classes=3) as server:
            conn = server.connect()
            img = Image(np.zeros((8, 8, 3), dtype=np.uint8))
            scores = remote_infer(conn, img)
            assert (scores.scores[:, :, 0] == 1.0).all()
            assert (scores.scores[:, :, 1:] == 0.0).all()
            conn.shutdown()

    def test_payload_roundtrip_bit_exact(self):
        rng = np.random.default_rng(3)
        reference = rng.random((2, 2, 4), dtype=np.float32)

        def echo_model(pixels):
            return reference

        with LoopbackServer(echo_model, task="component", num_classes=4) as server:
            conn = server.connect()
            scores = remote_infer(conn, Image(np.zeros((2, 2, 3), dtype=np.uint8)))
            assert np.array_equal(scores.scores, reference)
            conn.shutdown()

    def test_wrong_k_marks_connection_unusable(self):
        def bad_model(pixels):
            h, w, _ = pixels.shape
            return np.zeros((h, w, 5), dtype=np.float32)  # handshake said 3

        with LoopbackServer(bad_model, task="damage", num_classes=3) as server:
            conn = server.connect()
            with pytest.raises(ClassCountMismatchError):
                remote_infer(conn, Image(np.zeros((2, 2, 3), dtype=np.uint8)))
            assert not conn.usable
            with pytest.raises(ConnectionLostError):
                remote_infer(conn, Image(np.zeros((2, 2, 3), dtype=np.uint8)))

    def test_wrong_dims_marks_connection_unusable(self):
        def bad_model(pixels):
            return np.zeros((1, 1, 3), dtype=np.float32)

        with LoopbackServer(bad_model, task="damage", num_classes=3) as server:
            conn = server.connect()
            with pytest.raises(Exception) as exc_info:
                remote_infer(conn, Image(np.zeros((2, 2, 3), dtype=np.uint8)))
            assert "2x2" in str(exc_info.value)
            assert not conn.usable

    def test_model_exception_becomes_remote_error(self):
        def crashing_model(pixels):
            raise RuntimeError("model exploded")

        with LoopbackServer(crashing_model, task="damage", num_classes=3) as server:
            conn = server.connect()
            with pytest.raises(RemoteError, match="model exploded"):
                remote_infer(conn, Image(np.zeros((2, 2, 3), dtype=np.uint8)))
            # application errors leave the connection usable
            assert conn.usable

    def test_handshake_mismatch_is_error(self):
        with LoopbackServer(constant_model(3), task="damage", num_classes=3) as server:
            conn = BackendConnection(server.raw_stream())
            with pytest.raises(RemoteError, match="mismatch"):
                conn.handshake("component", 7)

    def test_oversize_tile_rejected_client_side(self):
        with LoopbackServer(constant_model(3), task="damage", num_classes=3, max_tile=4) as server:
            conn = server.connect()
            with pytest.raises(RemoteError, match="max_tile"):
                remote_infer(conn, Image(np.zeros((8, 8, 3), dtype=np.uint8)))

    def test_infer_before_handshake_rejected(self):
        with LoopbackServer(constant_model(3), task="damage", num_classes=3) as server:
            conn = BackendConnection(server.raw_stream())
            with pytest.raises(FrameError, match="handshake"):
                remote_infer(conn, Image(np.zeros((2, 2, 3), dtype=np.uint8)))

    def test_connection_loss_detected(self):
        a, b = socket.socketpair()
        b.close()
        conn = BackendConnection(SocketStream(a))
        conn.server_info = {"task": "damage", "num_classes": 3, "max_tile": 64}
        with pytest.raises(ConnectionLostError):
            remote_infer(conn, Image(np.zeros((2, 2, 3), dtype=np.uint8)))
        assert not conn.usable

    def test_malformed_frame_never_crashes_server(self):
        a, b = socket.socketpair()
        t = threading.Thread(
            target=serve_stream,
            args=(SocketStream(b),),
            kwargs={"model": constant_model(3), "task": "damage", "num_classes": 3},
            daemon=True,
        )
        t.start()
        client = SocketStream(a)
        client.write(b"JUNK\x01\x03\x00\x00\x00\x00")  # bad magic, valid structure
        msg_type, payload = wire.read_frame(client.read_exact)
        assert msg_type == wire.MSG_ERROR
        assert "magic" in wire.decode_error_payload(payload)
        client.write(wire.encode_frame(wire.MSG_SHUTDOWN))
        t.join(timeout=5)
        assert not t.is_alive()


class TestBuildBackend:
    def test_unknown_kind_is_config_error(self):
        with pytest.raises(ConfigError, match="mystery"):
            build_backend({"name": "x", "kind": "mystery"}, "damage", 3)

    def test_missing_name_is_config_error(self):
        with pytest.raises(ConfigError):
            build_backend({"kind": "darkness"}, "damage", 3)

    def test_builds_each_builtin_kind(self):
        specs = [
            {"name": "c", "kind": "color_rule", "params": {"rules": [
                {"color": [1, 2, 3], "tolerance": 0, "class_index": 1}
            ]}},
            {"name": "d", "kind": "darkness", "params": {"luma_threshold": 50}},
            {"name": "b", "kind": "block_darkness", "params": {"block_size": 2}},
            {"name": "k", "kind": "constant", "params": {"class_index": 0}},
        ]
        for spec in specs:
            backend = build_backend(spec, "damage", 3)
            out = backend.infer(Image(np.full((4, 4, 3), 200, dtype=np.uint8)))
            assert (out.width, out.height, out.num_classes) == (4, 4, 3)
