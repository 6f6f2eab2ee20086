"""Runnable replica daemon: framed TCP transport between peers plus a client protocol.

One logical message is one length-prefixed UTF-8 JSON frame (4-byte big-endian
size). A move op is encoded canonically as {"ts":{"c":<u64>,"r":<u32>},"n":<u64>,"p":<u64>}
so snapshots and wire bytes compare bit-exactly across processes. Peers are
drained by per-peer sender threads with reconnect-and-retry: a daemon stays
fully available while partitioned and converges once connectivity returns
(redelivery is harmless because equal-timestamp ops are ignored).
"""
from __future__ import annotations

import json
import logging
import socket
import struct
import threading
import time
from collections import deque

from .clock import Timestamp
from .movecrdt import MoveOp, Replica
from .tree import TRASH

log = logging.getLogger(__name__)

_LEN = struct.Struct(">I")
MAX_FRAME = 1 << 20


# -- framing -------------------------------------------------------------------


def encode_op(op: MoveOp) -> bytes:
    """Canonical, newline-free op encoding; key order is fixed for bit-exactness."""
    return (
        f'{{"ts":{{"c":{op.ts.counter},"r":{op.ts.replica}}},"n":{op.n},"p":{op.p}}}'
    ).encode()


def decode_op(payload: dict) -> MoveOp:
    ts = payload["ts"]
    return MoveOp(Timestamp(int(ts["c"]), int(ts["r"])), int(payload["n"]), int(payload["p"]))


def send_frame(sock: socket.socket, payload: bytes) -> None:
    sock.sendall(_LEN.pack(len(payload)) + payload)


def recv_frame(sock: socket.socket) -> bytes | None:
    """Read one frame; None on orderly EOF.

    An idle timeout (nothing read yet) propagates so pollers can check their
    stop flag; once any byte of a frame has been read, the read blocks until
    the frame completes so the stream never desyncs.
    """
    header = _recv_exact(sock, _LEN.size, idle_raises=True)
    if header is None:
        return None
    (size,) = _LEN.unpack(header)
    if size > MAX_FRAME:
        raise ConnectionError(f"oversized frame: {size} bytes")
    body = _recv_exact(sock, size, idle_raises=False)
    if body is None:
        raise ConnectionError("connection closed mid-frame")
    return body


def _recv_exact(sock: socket.socket, size: int, *, idle_raises: bool) -> bytes | None:
    chunks = b""
    while len(chunks) < size:
        try:
            chunk = sock.recv(size - len(chunks))
        except socket.timeout:
            if idle_raises and not chunks:
                raise
            continue
        if not chunk:
            return None
        chunks += chunk
    return chunks


# -- daemon --------------------------------------------------------------------


class _PeerSender:
    """Owns the buffered outbound queue and reconnect loop for one peer address."""

    def __init__(self, daemon: PeerDaemon, addr: tuple[str, int]):
        self.daemon = daemon
        self.addr = addr
        self.queue: deque[MoveOp] = deque()
        self.cond = threading.Condition()
        self.thread = threading.Thread(target=self._run, daemon=True, name=f"sender-{addr}")

    def enqueue(self, ops: list[MoveOp]) -> None:
        with self.cond:
            self.queue.extend(ops)
            self.cond.notify()

    def _run(self) -> None:
        sock: socket.socket | None = None
        while not self.daemon.stopped:
            with self.cond:
                while not self.queue and not self.daemon.stopped:
                    self.cond.wait(timeout=0.2)
                if self.daemon.stopped:
                    break
                op = self.queue[0]
            try:
                if sock is None:
                    sock = socket.create_connection(self.addr, timeout=2.0)
                    send_frame(sock, json.dumps({"hello": self.daemon.replica.id}).encode())
                send_frame(sock, encode_op(op))
            except OSError:
                if sock is not None:
                    sock.close()
                    sock = None
                time.sleep(self.daemon.retry_interval)
                continue
            with self.cond:
                self.queue.popleft()
        if sock is not None:
            sock.close()


class PeerDaemon:
    """A live replica: accepts client commands, exchanges ops with peer daemons."""

    def __init__(
        self,
        replica_id: int,
        listen: tuple[str, int],
        peers: list[tuple[str, int]],
        *,
        m: int = 5,
        digest_interval: float = 0.0,
        retry_interval: float = 0.25,
    ):
        self.replica = Replica(replica_id, m=m)
        self.listen_addr = listen
        self.retry_interval = retry_interval
        self.digest_interval = digest_interval
        self.stopped = False
        self._senders = [_PeerSender(self, addr) for addr in peers]
        self._fanout_lock = threading.Lock()
        self._listener: socket.socket | None = None
        self._threads: list[threading.Thread] = []
        self._conns: list[socket.socket] = []

    @property
    def address(self) -> tuple[str, int]:
        assert self._listener is not None, "daemon not started"
        return self._listener.getsockname()

    def start(self) -> None:
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind(self.listen_addr)
        listener.listen()
        listener.settimeout(0.2)
        self._listener = listener
        accept = threading.Thread(target=self._accept_loop, daemon=True, name="acceptor")
        accept.start()
        self._threads.append(accept)
        for sender in self._senders:
            sender.thread.start()
        if self.digest_interval > 0:
            ticker = threading.Thread(target=self._digest_loop, daemon=True, name="digest")
            ticker.start()
            self._threads.append(ticker)
        log.info("replica %d listening on %s", self.replica.id, self.address)

    def stop(self) -> None:
        self.stopped = True
        for sender in self._senders:
            with sender.cond:
                sender.cond.notify_all()
        if self._listener is not None:
            self._listener.close()
        for conn in list(self._conns):
            try:
                conn.close()
            except OSError:
                pass
        for sender in self._senders:
            sender.thread.join(timeout=2.0)
        for thread in self._threads:
            thread.join(timeout=2.0)

    def run_forever(self) -> None:
        try:
            while not self.stopped:
                time.sleep(0.2)
        except KeyboardInterrupt:
            self.stop()

    # -- op flow ----------------------------------------------------------------

    def _broadcast_pending(self) -> None:
        with self._fanout_lock:
            ops = self.replica.drain_outbox()
            if not ops:
                return
            for sender in self._senders:
                sender.enqueue(ops)

    def _handle_op(self, op: MoveOp) -> None:
        self.replica.apply_remote(op)
        self._broadcast_pending()  # compensations, if any

    def _handle_command(self, cmd: dict) -> bytes:
        name = cmd.get("cmd")
        try:
            if name in ("MOVE", "INSERT"):
                op, applied, _ = self.replica.submit(int(cmd["n"]), int(cmd["p"]))
            elif name == "DELETE":
                op, applied, _ = self.replica.submit(int(cmd["n"]), TRASH)
            elif name == "SNAPSHOT":
                return self.replica.snapshot()
            else:
                return json.dumps({"ok": False, "error": f"unknown command {name!r}"}).encode()
        except (KeyError, ValueError) as exc:
            return json.dumps({"ok": False, "error": str(exc)}).encode()
        self._broadcast_pending()
        return json.dumps(
            {"ok": True, "applied": applied, "c": op.ts.counter, "r": op.ts.replica}
        ).encode()

    # -- socket plumbing ----------------------------------------------------------

    def _accept_loop(self) -> None:
        assert self._listener is not None
        while not self.stopped:
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            conn.settimeout(0.2)
            self._conns.append(conn)
            worker = threading.Thread(target=self._serve_conn, args=(conn,), daemon=True)
            worker.start()
            self._threads.append(worker)

    def _serve_conn(self, conn: socket.socket) -> None:
        try:
            while not self.stopped:
                try:
                    frame = recv_frame(conn)
                except socket.timeout:
                    continue
                except (ConnectionError, OSError):
                    break
                if frame is None:
                    break
                payload = json.loads(frame)
                if "ts" in payload:
                    self._handle_op(decode_op(payload))
                elif "hello" in payload:
                    log.debug("replica %d: peer %s connected", self.replica.id, payload["hello"])
                elif "cmd" in payload:
                    send_frame(conn, self._handle_command(payload))
                else:
                    send_frame(conn, json.dumps({"ok": False, "error": "bad frame"}).encode())
        finally:
            try:
                conn.close()
            except OSError:
                pass

    def _digest_loop(self) -> None:
        while not self.stopped:
            time.sleep(self.digest_interval)
            log.info("replica %d digest %s", self.replica.id, self.replica.state.digest())


class PeerClient:
    """Small synchronous client for the daemon's command protocol."""

    def __init__(self, addr: tuple[str, int], timeout: float = 5.0):
        self.sock = socket.create_connection(addr, timeout=timeout)

    def _roundtrip(self, cmd: dict) -> bytes:
        send_frame(self.sock, json.dumps(cmd).encode())
        reply = recv_frame(self.sock)
        if reply is None:
            raise ConnectionError("daemon closed the connection")
        return reply

    def move(self, n: int, p: int) -> dict:
        return json.loads(self._roundtrip({"cmd": "MOVE", "n": n, "p": p}))

    def insert(self, n: int, p: int) -> dict:
        return json.loads(self._roundtrip({"cmd": "INSERT", "n": n, "p": p}))

    def delete(self, n: int) -> dict:
        return json.loads(self._roundtrip({"cmd": "DELETE", "n": n}))

    def snapshot(self) -> bytes:
        return self._roundtrip({"cmd": "SNAPSHOT"})

    def close(self) -> None:
        self.sock.close()
