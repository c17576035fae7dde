"""Point-to-point frame delivery between nodes: in-process queues or TCP."""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time

from ..errors import ProtocolError, TransportError
from .protocol import Frame, MsgType, decode_frame, encode_frame, read_frame

log = logging.getLogger(__name__)


class Transport:
    """Per-node endpoint. Frames from one peer arrive in send order."""

    node_id: int

    def send(self, peer: int, frame: Frame) -> None:
        raise NotImplementedError

    def recv(self, peer: int, round: int, msg_type: MsgType, timeout: float | None = None) -> Frame:
        raise NotImplementedError

    def close(self) -> None:
        pass


def _check(frame: Frame, peer: int, round: int, msg_type: MsgType) -> Frame:
    if frame.sender != peer or frame.round != round or frame.msg_type != msg_type:
        raise ProtocolError(
            f"expected {msg_type.name} round {round} from {peer}, "
            f"got {frame.msg_type.name} round {frame.round} from {frame.sender}"
        )
    return frame


class InProcessHub:
    """Message queues connecting ``m`` in-process endpoints.

    Frames travel as encoded bytes so the wire format is exercised exactly.
    Every encoded frame is also appended to ``wire_log`` as
    ``(src, dst, bytes)`` when ``record`` is set.
    """

    def __init__(self, m: int, record: bool = False):
        self.m = m
        self._queues = {(src, dst): queue.Queue() for src in range(m) for dst in range(m) if src != dst}
        self.record = record
        self.wire_log: list[tuple[int, int, bytes]] = []
        self._lock = threading.Lock()

    def endpoint(self, node_id: int) -> InProcessTransport:
        return InProcessTransport(self, node_id)


class InProcessTransport(Transport):
    def __init__(self, hub: InProcessHub, node_id: int):
        self.hub = hub
        self.node_id = node_id

    def send(self, peer: int, frame: Frame) -> None:
        raw = encode_frame(frame)
        if self.hub.record:
            with self.hub._lock:
                self.hub.wire_log.append((self.node_id, peer, raw))
        self.hub._queues[(self.node_id, peer)].put(raw)

    def recv(self, peer: int, round: int, msg_type: MsgType, timeout: float | None = None) -> Frame:
        try:
            raw = self.hub._queues[(peer, self.node_id)].get(timeout=timeout)
        except queue.Empty:
            raise TransportError(peer, round, msg_type.name) from None
        return _check(decode_frame(raw), peer, round, msg_type)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(min(n - len(buf), 1 << 20))
        if not chunk:
            raise ConnectionError("peer closed the connection")
        buf += chunk
    return bytes(buf)


class TcpTransport(Transport):
    """Frames over TCP; one outgoing connection per peer, one reader thread per incoming one.

    ``addresses[i]`` is the ``(host, port)`` node ``i`` listens on.
    """

    def __init__(self, node_id: int, addresses: list[tuple[str, int]], connect_timeout: float = 30.0,
                 record: bool = False):
        self.node_id = node_id
        self.addresses = addresses
        self.connect_timeout = connect_timeout
        self.record = record
        self.wire_log: list[tuple[int, int, bytes]] = []
        self._inbox = {p: queue.Queue() for p in range(len(addresses)) if p != node_id}
        self._out: dict[int, socket.socket] = {}
        self._readers: list[threading.Thread] = []
        self._closed = threading.Event()
        host, port = addresses[node_id]
        self._server = socket.create_server((host, port), reuse_port=False)
        self._server.settimeout(0.2)
        self._acceptor = threading.Thread(target=self._accept_loop, daemon=True)
        self._acceptor.start()

    @property
    def port(self) -> int:
        return self._server.getsockname()[1]

    def _accept_loop(self) -> None:
        while not self._closed.is_set():
            try:
                conn, _ = self._server.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.settimeout(None)
            t = threading.Thread(target=self._read_loop, args=(conn,), daemon=True)
            t.start()
            self._readers.append(t)

    def _read_loop(self, conn: socket.socket) -> None:
        with conn:
            while True:
                try:
                    frame = read_frame(lambda n: _recv_exact(conn, n))
                except (ConnectionError, OSError):
                    return
                except ProtocolError as exc:
                    log.error("node %d: dropping connection after malformed frame: %s", self.node_id, exc)
                    return
                box = self._inbox.get(frame.sender)
                if box is None:
                    log.error("node %d: frame from unknown sender %d", self.node_id, frame.sender)
                    return
                box.put(frame)

    def _connect(self, peer: int) -> socket.socket:
        sock = self._out.get(peer)
        if sock is not None:
            return sock
        deadline = time.monotonic() + self.connect_timeout
        while True:
            try:
                sock = socket.create_connection(self.addresses[peer], timeout=5.0)
                break
            except OSError:
                if time.monotonic() > deadline:
                    raise TransportError(peer, -1, "CONNECT", "connection refused until timeout") from None
                time.sleep(0.05)
        sock.settimeout(None)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._out[peer] = sock
        return sock

    def send(self, peer: int, frame: Frame) -> None:
        raw = encode_frame(frame)
        if self.record:
            self.wire_log.append((self.node_id, peer, raw))
        try:
            self._connect(peer).sendall(raw)
        except OSError as exc:
            raise TransportError(peer, frame.round, frame.msg_type.name, f"send failed: {exc}") from exc

    def recv(self, peer: int, round: int, msg_type: MsgType, timeout: float | None = None) -> Frame:
        try:
            frame = self._inbox[peer].get(timeout=timeout)
        except queue.Empty:
            raise TransportError(peer, round, msg_type.name) from None
        return _check(frame, peer, round, msg_type)

    def close(self) -> None:
        self._closed.set()
        for sock in self._out.values():
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()
        self._server.close()
