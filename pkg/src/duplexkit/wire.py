"""Length-prefixed binary wire protocol for streaming duplex sessions.

Every message is `magic u16 (0xFD5E) | type u8 | length u32 | payload`,
little-endian. Audio frames travel as 8 x u32 codes plus a u64 step
index; raw audio may be sent instead as 16-bit PCM chunks which the
server buffers into hops. The server drives one engine session per
connection (one client at a time), answering each listen frame with a
speak frame and a text token, plus marker messages as turn-taking events
fire. A client that stalls longer than the backpressure window is
dropped.
"""

from __future__ import annotations

import logging
import socket
import struct
import threading
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .codec import CodeFrame, PseudoCodec, StreamingEncoder
from .frames import Marker, MarkerKind, StreamConfig, _pack_config, _unpack_config
from .runtime import DuplexModel, DuplexState, ModelProtocolError, RuntimePolicy, step_once

log = logging.getLogger("duplexkit.wire")

WIRE_MAGIC = 0xFD5E
_MSG_HEADER = struct.Struct("<HBI")

MSG_CONFIG = 0
MSG_LISTEN_FRAME = 1
MSG_SPEAK_FRAME = 2
MSG_TEXT_TOKEN = 3
MSG_MARKER = 4
MSG_ERROR = 5
MSG_PCM_CHUNK = 6

ERR_BAD_MAGIC = 0x01
ERR_BAD_TYPE = 0x02
ERR_BAD_PAYLOAD = 0x03
ERR_PROTOCOL = 0x04

_FRAME_PAYLOAD = struct.Struct("<8IQ")
_TEXT_PAYLOAD = struct.Struct("<IQ")
_MARKER_PAYLOAD = struct.Struct("<QB")

# A client that takes longer than this to accept our output has stalled
# for more than one second of frames; the connection is closed.
BACKPRESSURE_TIMEOUT_S = 1.0


class WireError(RuntimeError):
    pass


@dataclass(frozen=True)
class WireMessage:
    type: int
    payload: bytes


def encode_message(msg_type: int, payload: bytes = b"") -> bytes:
    return _MSG_HEADER.pack(WIRE_MAGIC, msg_type, len(payload)) + payload


def encode_frame_message(msg_type: int, codes: CodeFrame, step: int) -> bytes:
    return encode_message(msg_type, _FRAME_PAYLOAD.pack(*codes, step))


def decode_frame_payload(payload: bytes) -> tuple[CodeFrame, int]:
    if len(payload) != _FRAME_PAYLOAD.size:
        raise WireError(f"frame payload must be {_FRAME_PAYLOAD.size} bytes, got {len(payload)}")
    *codes, step = _FRAME_PAYLOAD.unpack(payload)
    return tuple(codes), step


def encode_text_message(token: int, step: int) -> bytes:
    return encode_message(MSG_TEXT_TOKEN, _TEXT_PAYLOAD.pack(token, step))


def decode_text_payload(payload: bytes) -> tuple[int, int]:
    token, step = _TEXT_PAYLOAD.unpack(payload)
    return token, step


def encode_marker_message(marker: Marker) -> bytes:
    return encode_message(MSG_MARKER, _MARKER_PAYLOAD.pack(marker.step, int(marker.kind)))


def decode_marker_payload(payload: bytes) -> Marker:
    step, kind = _MARKER_PAYLOAD.unpack(payload)
    return Marker(step, MarkerKind(kind))


def encode_error_message(code: int, message: str = "") -> bytes:
    return encode_message(MSG_ERROR, bytes([code]) + message.encode("utf-8"))


def decode_error_payload(payload: bytes) -> tuple[int, str]:
    if not payload:
        raise WireError("empty error payload")
    return payload[0], payload[1:].decode("utf-8", errors="replace")


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None if not buf else buf  # partial tail signals truncation
        buf += chunk
    return buf


def read_message(sock: socket.socket) -> WireMessage | None:
    """Read one framed message; None on clean EOF."""
    header = _recv_exact(sock, _MSG_HEADER.size)
    if header is None:
        return None
    if len(header) < _MSG_HEADER.size:
        raise WireError("truncated message header")
    magic, msg_type, length = _MSG_HEADER.unpack(header)
    if magic != WIRE_MAGIC:
        raise WireError(f"bad magic 0x{magic:04X}")
    payload = b""
    if length:
        payload = _recv_exact(sock, length)
        if payload is None or len(payload) < length:
            raise WireError("truncated message payload")
    return WireMessage(msg_type, payload)


class DuplexServer:
    """Serves the wire protocol over TCP, one engine session per client."""

    def __init__(
        self,
        model_factory: Callable[[], DuplexModel],
        cfg: StreamConfig,
        host: str = "127.0.0.1",
        port: int = 0,
        policy: RuntimePolicy | None = None,
    ):
        self.model_factory = model_factory
        self.cfg = cfg
        self.policy = policy or RuntimePolicy()
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(1)
        self._sock.settimeout(0.2)
        self.address = self._sock.getsockname()
        self._stop = threading.Event()

    def stop(self) -> None:
        self._stop.set()

    def close(self) -> None:
        self.stop()
        self._sock.close()

    def serve_forever(self) -> None:
        """Accept clients sequentially until stop() is called."""
        log.info("listening on %s:%d", *self.address)
        try:
            while not self._stop.is_set():
                try:
                    conn, peer = self._sock.accept()
                except socket.timeout:
                    continue
                with conn:
                    log.info("client %s connected", peer)
                    try:
                        self._run_session(conn)
                    except (WireError, ConnectionError, socket.timeout) as exc:
                        log.warning("session ended: %s", exc)
        finally:
            self._sock.close()

    def _run_session(self, conn: socket.socket) -> None:
        conn.settimeout(BACKPRESSURE_TIMEOUT_S)
        conn.sendall(encode_message(MSG_CONFIG, _pack_config(self.cfg)))

        model = self.model_factory()
        state = DuplexState.initial(self.cfg)
        pcm = StreamingEncoder(PseudoCodec(), self.cfg)
        steps = 0

        while not self._stop.is_set():
            try:
                msg = read_message(conn)
            except WireError as exc:
                conn.sendall(encode_error_message(ERR_BAD_MAGIC if "magic" in str(exc) else ERR_BAD_PAYLOAD, str(exc)))
                return
            if msg is None:
                log.info("session closed after %d steps", steps)
                return
            if msg.type == MSG_LISTEN_FRAME:
                try:
                    codes, _ = decode_frame_payload(msg.payload)
                except WireError as exc:
                    conn.sendall(encode_error_message(ERR_BAD_PAYLOAD, str(exc)))
                    return
                steps += self._step_and_reply(conn, model, state, codes, active=None)
            elif msg.type == MSG_PCM_CHUNK:
                if len(msg.payload) % 2:
                    conn.sendall(encode_error_message(ERR_BAD_PAYLOAD, "odd PCM chunk length"))
                    return
                samples = np.frombuffer(msg.payload, dtype="<i2").astype(np.float64) / 32768.0
                for codes in pcm.push(samples):
                    steps += self._step_and_reply(conn, model, state, codes, active=None)
            elif msg.type in (MSG_SPEAK_FRAME, MSG_TEXT_TOKEN, MSG_MARKER, MSG_CONFIG, MSG_ERROR):
                conn.sendall(encode_error_message(ERR_PROTOCOL, f"client may not send type {msg.type}"))
                return
            else:
                conn.sendall(encode_error_message(ERR_BAD_TYPE, f"unknown message type {msg.type}"))
                return

    def _step_and_reply(
        self,
        conn: socket.socket,
        model: DuplexModel,
        state: DuplexState,
        codes: CodeFrame,
        active: bool | None,
    ) -> int:
        step_index = state.step
        try:
            out, markers = step_once(model, state, codes, self.cfg, self.policy, active=active)
        except ModelProtocolError as exc:
            conn.sendall(encode_error_message(ERR_PROTOCOL, str(exc)))
            raise WireError(str(exc)) from exc
        conn.sendall(encode_frame_message(MSG_SPEAK_FRAME, out.speak, step_index))
        conn.sendall(encode_text_message(out.text, step_index))
        for marker in markers:
            conn.sendall(encode_marker_message(marker))
        return 1


class WireClient:
    """Minimal blocking client for tests and the CLI loopback path."""

    def __init__(self, host: str, port: int, timeout: float = 5.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.markers: list[Marker] = []
        msg = read_message(self.sock)
        if msg is None or msg.type != MSG_CONFIG:
            raise WireError("server did not send a config message")
        self.config = _unpack_config(msg.payload)

    def close(self) -> None:
        self.sock.close()

    def __enter__(self) -> "WireClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def send_listen_frame(self, codes: CodeFrame, step: int) -> None:
        self.sock.sendall(encode_frame_message(MSG_LISTEN_FRAME, codes, step))

    def send_pcm(self, samples: np.ndarray) -> None:
        pcm = np.round(np.clip(samples, -1, 1) * 32767.0).astype("<i2").tobytes()
        self.sock.sendall(encode_message(MSG_PCM_CHUNK, pcm))

    def send_raw(self, data: bytes) -> None:
        self.sock.sendall(data)

    def read_message(self) -> WireMessage | None:
        return read_message(self.sock)

    def read_step(self) -> tuple[CodeFrame, int, int] | None:
        """Read one step's replies: (speak codes, text token, step index).

        Marker messages interleaved with the step replies accumulate in
        `self.markers`. Returns None on clean EOF; raises on an error
        frame.
        """
        codes: CodeFrame | None = None
        step = -1
        while codes is None:
            msg = self.read_message()
            if msg is None:
                return None
            if msg.type == MSG_MARKER:
                self.markers.append(decode_marker_payload(msg.payload))
            elif msg.type == MSG_ERROR:
                code, text = decode_error_payload(msg.payload)
                raise WireError(f"server error 0x{code:02X}: {text}")
            elif msg.type == MSG_SPEAK_FRAME:
                codes, step = decode_frame_payload(msg.payload)
            else:
                raise WireError(f"expected speak frame, got type {msg.type}")
        while True:
            msg = self.read_message()
            if msg is None:
                raise WireError("connection closed mid-step")
            if msg.type == MSG_MARKER:
                self.markers.append(decode_marker_payload(msg.payload))
            elif msg.type == MSG_TEXT_TOKEN:
                token, _ = decode_text_payload(msg.payload)
                return codes, token, step
            else:
                raise WireError(f"expected text token, got type {msg.type}")
