"""Binary TCP protocol and server/client for remote policy inference.

Frame layout (little-endian throughout):

    magic   4 bytes  b"ALRN"
    version 1 byte   (currently 1)
    type    1 byte   0=PING 1=OBS 2=ACT 3=LOAD_CKPT 4=ERR
    length  4 bytes  unsigned payload length
    payload

OBS payload: uint16 count, then count float32 values (depth | V_t | X_t).
ACT payload: uint8 kind (0 discrete, 1 continuous), then uint16 action id or
two float32 components, then uint64 server compute time in nanoseconds.
PING echoes an empty frame back (the request may carry any payload, e.g. an
observation-sized one for state-fetch timing). LOAD_CKPT carries raw
checkpoint bytes and is acknowledged with an empty LOAD_CKPT. ERR carries a
uint8 reason code plus a UTF-8 message.

The server answers one client at a time, one request in flight; the control
loop being measured is inherently sequential and concurrency would distort
the timing.
"""

from __future__ import annotations

import logging
import socket
import struct
import threading
import time

import numpy as np

from .nn import CheckpointError, PolicyNetwork, load_checkpoint

log = logging.getLogger(__name__)

MAGIC = b"ALRN"
VERSION = 1
HEADER = struct.Struct("<4sBBI")

MSG_PING = 0
MSG_OBS = 1
MSG_ACT = 2
MSG_LOAD_CKPT = 3
MSG_ERR = 4

ACT_DISCRETE = 0
ACT_CONTINUOUS = 1

ERR_BAD_MAGIC = 1
ERR_BAD_VERSION = 2
ERR_TRUNCATED = 3
ERR_BAD_PAYLOAD = 4
ERR_CHECKPOINT = 5
ERR_INPUT_SIZE = 6

DEFAULT_TIMEOUT = 5.0


class ProtocolError(RuntimeError):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class TransportError(RuntimeError):
    pass


# --- framing -------------------------------------------------------------------

def encode_frame(msg_type: int, payload: bytes = b"") -> bytes:
    return HEADER.pack(MAGIC, VERSION, msg_type, len(payload)) + payload


def _read_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise TransportError("connection closed mid-frame")
        buf.extend(chunk)
    return bytes(buf)


MAX_FRAME = 1 << 30          # sanity bound on declared payload length
MAX_SUSPECT_FRAME = 1 << 24  # bound when the header already failed validation


def read_frame(sock: socket.socket) -> tuple[int, bytes]:
    """Read one frame; raises ProtocolError on bad magic/version.

    The declared payload is consumed even for invalid headers (bounded by
    MAX_SUSPECT_FRAME) so the connection stays framed for the next request.
    """
    head = _read_exact(sock, HEADER.size)
    magic, version, msg_type, length = HEADER.unpack(head)
    if magic != MAGIC or version != VERSION:
        if length <= MAX_SUSPECT_FRAME:
            _read_exact(sock, length)
        if magic != MAGIC:
            raise ProtocolError(ERR_BAD_MAGIC, "bad magic")
        raise ProtocolError(ERR_BAD_VERSION, f"unsupported version {version}")
    if length > MAX_FRAME:
        raise ProtocolError(ERR_TRUNCATED, f"frame too large: {length}")
    payload = _read_exact(sock, length) if length else b""
    return msg_type, payload


def encode_obs(values) -> bytes:
    arr = np.asarray(values, dtype="<f4").ravel()
    if arr.size > 0xFFFF:
        raise ValueError("observation too large for the wire format")
    return struct.pack("<H", arr.size) + arr.tobytes()


def decode_obs(payload: bytes) -> np.ndarray:
    if len(payload) < 2:
        raise ProtocolError(ERR_BAD_PAYLOAD, "observation payload too short")
    (count,) = struct.unpack_from("<H", payload, 0)
    expected = 2 + 4 * count
    if len(payload) != expected:
        raise ProtocolError(ERR_BAD_PAYLOAD,
                            f"observation payload length {len(payload)} != {expected}")
    return np.frombuffer(payload, dtype="<f4", count=count, offset=2).astype(np.float64)


def encode_act(action, t2_ns: int) -> bytes:
    if isinstance(action, (int, np.integer)):
        return struct.pack("<BHQ", ACT_DISCRETE, int(action), t2_ns)
    a = np.asarray(action, dtype="<f4")
    if a.shape != (2,):
        raise ValueError("continuous action must have two components")
    return struct.pack("<B", ACT_CONTINUOUS) + a.tobytes() + struct.pack("<Q", t2_ns)


def decode_act(payload: bytes):
    """Returns (action, t2_seconds); action is an int or a float32 pair."""
    if not payload:
        raise ProtocolError(ERR_BAD_PAYLOAD, "empty action payload")
    kind = payload[0]
    if kind == ACT_DISCRETE:
        if len(payload) != 11:
            raise ProtocolError(ERR_BAD_PAYLOAD, "bad discrete action length")
        action_id, t2_ns = struct.unpack_from("<HQ", payload, 1)
        return int(action_id), t2_ns / 1e9
    if kind == ACT_CONTINUOUS:
        if len(payload) != 17:
            raise ProtocolError(ERR_BAD_PAYLOAD, "bad continuous action length")
        a = np.frombuffer(payload, dtype="<f4", count=2, offset=1).copy()
        (t2_ns,) = struct.unpack_from("<Q", payload, 9)
        return a, t2_ns / 1e9
    raise ProtocolError(ERR_BAD_PAYLOAD, f"unknown action kind {kind}")


def encode_err(code: int, message: str) -> bytes:
    return struct.pack("<B", code) + message.encode("utf-8")


def decode_err(payload: bytes) -> tuple[int, str]:
    if not payload:
        raise ProtocolError(ERR_BAD_PAYLOAD, "empty error payload")
    return payload[0], payload[1:].decode("utf-8", errors="replace")


# --- server --------------------------------------------------------------------

class PolicyServer:
    """Sequential single-client inference server over the frame protocol."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 checkpoint_path: str | None = None, net: PolicyNetwork | None = None):
        if net is None and checkpoint_path is None:
            raise ValueError("need a checkpoint path or a network")
        if net is None:
            net, _, _ = load_checkpoint(checkpoint_path)
        self.net = net
        self._listener = socket.create_server((host, port))
        self._listener.settimeout(0.2)
        self.host, self.port = self._listener.getsockname()[:2]
        self._stop = threading.Event()

    @property
    def endpoint(self) -> str:
        return f"{self.host}:{self.port}"

    def shutdown(self) -> None:
        self._stop.set()

    def close(self) -> None:
        self._listener.close()

    def serve_forever(self) -> None:
        try:
            while not self._stop.is_set():
                try:
                    conn, addr = self._listener.accept()
                except socket.timeout:
                    continue
                log.info("client connected: %s", addr)
                with conn:
                    conn.settimeout(0.5)
                    self._serve_client(conn)
        finally:
            self.close()

    def _serve_client(self, conn: socket.socket) -> None:
        while not self._stop.is_set():
            try:
                msg_type, payload = read_frame(conn)
            except socket.timeout:
                continue
            except TransportError:
                return  # client went away
            except ProtocolError as exc:
                conn.sendall(encode_frame(MSG_ERR, encode_err(exc.code, str(exc))))
                continue
            try:
                reply = self._handle(msg_type, payload)
            except ProtocolError as exc:
                reply = encode_frame(MSG_ERR, encode_err(exc.code, str(exc)))
            try:
                conn.sendall(reply)
            except OSError:
                return

    def _handle(self, msg_type: int, payload: bytes) -> bytes:
        if msg_type == MSG_PING:
            return encode_frame(MSG_PING, b"")
        if msg_type == MSG_OBS:
            values = decode_obs(payload)
            if values.size != self.net.input_size:
                raise ProtocolError(
                    ERR_INPUT_SIZE,
                    f"observation size {values.size} != policy input {self.net.input_size}")
            n_rays = self.net.template.n_rays
            from .dynamics import Observation
            obs = Observation(values[:n_rays], tuple(values[n_rays:n_rays + 3]),
                              tuple(values[n_rays + 3:]))
            start = time.perf_counter_ns()
            action = self.net.greedy_action(obs)
            t2_ns = max(time.perf_counter_ns() - start, 1)
            return encode_frame(MSG_ACT, encode_act(action, t2_ns))
        if msg_type == MSG_LOAD_CKPT:
            import tempfile
            try:
                with tempfile.NamedTemporaryFile(suffix=".ckpt", delete=True) as tmp:
                    tmp.write(payload)
                    tmp.flush()
                    net, _, _ = load_checkpoint(tmp.name)
            except (CheckpointError, OSError) as exc:
                raise ProtocolError(ERR_CHECKPOINT, f"checkpoint rejected: {exc}")
            self.net = net
            return encode_frame(MSG_LOAD_CKPT, b"")
        raise ProtocolError(ERR_BAD_PAYLOAD, f"unsupported message type {msg_type}")


def serve(endpoint: str, checkpoint_path: str) -> None:
    """Blocking server entry point; runs until interrupted."""
    host, port = endpoint.rsplit(":", 1)
    server = PolicyServer(host, int(port), checkpoint_path=checkpoint_path)
    log.info("serving %s on %s", checkpoint_path, server.endpoint)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()


# --- client --------------------------------------------------------------------

class PolicyClient:
    """Blocking request/response client with a wall-clock round-trip timer."""

    def __init__(self, host: str, port: int, timeout: float = DEFAULT_TIMEOUT):
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
        self._sock.settimeout(timeout)

    def __enter__(self) -> "PolicyClient":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def close(self) -> None:
        self._sock.close()

    def _request(self, msg_type: int, payload: bytes) -> tuple[int, bytes, float]:
        try:
            start = time.perf_counter()
            self._sock.sendall(encode_frame(msg_type, payload))
            reply_type, reply = read_frame(self._sock)
            elapsed = time.perf_counter() - start
        except socket.timeout as exc:
            raise TransportError("request timed out") from exc
        except OSError as exc:
            raise TransportError(f"transport failure: {exc}") from exc
        return reply_type, reply, elapsed

    def ping(self, payload_size: int = 0) -> float:
        """Round-trip echo time for a payload of the given size, seconds."""
        reply_type, _, elapsed = self._request(MSG_PING, bytes(payload_size))
        if reply_type != MSG_PING:
            raise TransportError(f"unexpected reply type {reply_type} to ping")
        return elapsed

    def infer(self, obs_values) -> tuple[object, float, float]:
        """Remote inference; returns (action, t1_seconds, t2_seconds).

        t1 is the round-trip wall time minus the server-reported compute
        time t2.
        """
        reply_type, reply, elapsed = self._request(MSG_OBS, encode_obs(obs_values))
        if reply_type == MSG_ERR:
            code, message = decode_err(reply)
            raise ProtocolError(code, message)
        if reply_type != MSG_ACT:
            raise TransportError(f"unexpected reply type {reply_type}")
        action, t2 = decode_act(reply)
        return action, max(elapsed - t2, 0.0), t2

    def load_checkpoint(self, path) -> None:
        with open(path, "rb") as fh:
            blob = fh.read()
        reply_type, reply, _ = self._request(MSG_LOAD_CKPT, blob)
        if reply_type == MSG_ERR:
            code, message = decode_err(reply)
            raise ProtocolError(code, message)
        if reply_type != MSG_LOAD_CKPT:
            raise TransportError(f"unexpected reply type {reply_type}")


def remote_infer(client: PolicyClient, observation) -> tuple[object, float, float]:
    """Infer from an Observation over an existing client connection."""
    return client.infer(observation.as_vector())
