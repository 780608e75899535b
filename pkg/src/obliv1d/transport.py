"""Framed party-to-party messaging: in-process simulation and TCP.

Frame layout: 4-byte big-endian length, then 1-byte message type, 8-byte
session id, payload. The length counts everything after itself. One FIFO
channel per ordered peer pair; byte counters include the length prefix, so
they equal the framed wire size exactly.

A communication step (`Channels.step`) is one batch of parallel sends plus the
matching receives, and bumps the round counter once. Protocols express their
communication in steps, which is what makes the reported round counts match
the analytic ones (a Beaver multiplication opens d and e in one step: one
round).

commit_reveal implements hash commitments (SHA-256 over payload || nonce) with
an extra digest echo among three or more parties, so a sender equivocating its
value to different peers is caught by at least one honest party.
"""

import hashlib
import socket
import struct
import threading
import time
from collections import deque

from .errors import ProtocolAbort, TransportError

VERSION = 1

HELLO = 1
DATA = 2
COMMIT = 3
REVEAL = 4
ECHO = 5
ABORT = 6
META = 7
INPUT = 8
OUTPUT = 9

_HDR = struct.Struct(">IB8s")


def build_frame(mtype: int, session_id: bytes, payload: bytes) -> bytes:
    return _HDR.pack(1 + 8 + len(payload), mtype, session_id) + payload


class Channels:
    """Common counter logic and the step primitive; backends implement raw I/O."""

    def __init__(self, me: str, session_id: bytes):
        self.me = me
        self.session_id = session_id
        self.bytes_sent = 0
        self.bytes_received = 0
        self.messages_sent = 0
        self.messages_received = 0
        self.rounds = 0

    # backends provide _send_raw(to, frame) and _recv_raw(frm) -> bytes frame

    def send(self, to: str, mtype: int, payload: bytes):
        frame = build_frame(mtype, self.session_id, payload)
        self._send_raw(to, frame)
        self.bytes_sent += len(frame)
        self.messages_sent += 1

    def recv(self, frm: str, mtype: int) -> bytes:
        frame = self._recv_raw(frm)
        self.bytes_received += len(frame)
        self.messages_received += 1
        ln, got_type, sid = _HDR.unpack_from(frame)
        if ln != len(frame) - 4:
            raise TransportError("frame length mismatch from %s" % frm)
        payload = frame[13:]
        if got_type == ABORT:
            raise ProtocolAbort("peer %s aborted: %s" % (frm, payload.decode("utf-8", "replace")))
        if sid != self.session_id:
            raise TransportError("session id mismatch from %s" % frm)
        if got_type != mtype:
            raise TransportError("expected message type %d from %s, got %d"
                                 % (mtype, frm, got_type))
        return payload

    def step(self, sends: dict, recvs) -> dict:
        """One communication round: fire all sends, then collect all receives.

        sends: {peer: (mtype, payload)}; recvs: [(peer, mtype), ...].
        """
        for to, (mtype, payload) in sends.items():
            self.send(to, mtype, payload)
        out = {}
        for frm, mtype in recvs:
            out[frm] = self.recv(frm, mtype)
        self.rounds += 1
        return out

    def broadcast_abort(self, peers, reason: str):
        for p in peers:
            try:
                self.send(p, ABORT, reason.encode())
            except Exception:
                pass

    def counters(self) -> dict:
        return {
            "bytes_sent": self.bytes_sent,
            "bytes_received": self.bytes_received,
            "messages_sent": self.messages_sent,
            "messages_received": self.messages_received,
            "rounds": self.rounds,
        }

    def close(self):
        pass


# --------------------------------------------------------------- simulation

class SimHub:
    """Shared in-process message board; one FIFO deque per ordered pair."""

    def __init__(self, timeout=30.0):
        self._queues = {}
        self._cond = threading.Condition()
        self.timeout = timeout
        self.failed = threading.Event()

    def attach(self, role: str, session_id: bytes) -> "SimChannels":
        return SimChannels(self, role, session_id)

    def _put(self, frm, to, frame):
        with self._cond:
            self._queues.setdefault((frm, to), deque()).append(frame)
            self._cond.notify_all()

    def _get(self, frm, to):
        deadline = time.monotonic() + self.timeout
        with self._cond:
            while True:
                q = self._queues.get((frm, to))
                if q:
                    return q.popleft()
                if self.failed.is_set():
                    raise TransportError("simulation torn down while %s waited on %s"
                                         % (to, frm))
                left = deadline - time.monotonic()
                if left <= 0:
                    raise TransportError("simulated recv timed out: %s <- %s" % (to, frm))
                self._cond.wait(min(left, 0.2))

    def teardown(self):
        with self._cond:
            self.failed.set()
            self._cond.notify_all()


class SimChannels(Channels):
    def __init__(self, hub: SimHub, me: str, session_id: bytes):
        super().__init__(me, session_id)
        self.hub = hub

    def _send_raw(self, to, frame):
        self.hub._put(self.me, to, frame)

    def _recv_raw(self, frm):
        return self.hub._get(frm, self.me)


# ---------------------------------------------------------------------- tcp

class TcpChannels(Channels):
    """One TCP connection per ordered pair; the sender side dials.

    recv(frm) reads the dedicated inbound socket for frm, so no demux thread
    is needed. An accept loop registers inbound connections after validating
    their hello frame against our own configuration.
    """

    def __init__(self, me: str, session_id: bytes, listen_addr, peers: dict,
                 hello_body: bytes, connect_timeout=20.0):
        super().__init__(me, session_id)
        self.peers = dict(peers)
        self.hello_body = hello_body
        self._in = {}
        self._out = {}
        self._in_cond = threading.Condition()
        self._timeout = connect_timeout
        self._accepting = True
        self._server = socket.create_server(listen_addr, backlog=16)
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    # hello payload: version byte, sender role (len-prefixed), config body
    def _hello_payload(self) -> bytes:
        role = self.me.encode()
        return bytes([VERSION, len(role)]) + role + self.hello_body

    def _accept_loop(self):
        while self._accepting:
            try:
                conn, _ = self._server.accept()
            except OSError:
                return
            try:
                frame = _read_frame(conn, self._timeout)
                ln, mtype, sid = _HDR.unpack_from(frame)
                payload = frame[13:]
                if mtype != HELLO or sid != self.session_id:
                    raise TransportError("bad hello")
                if payload[0] != VERSION:
                    raise TransportError("version mismatch")
                nrole = payload[1]
                role = payload[2:2 + nrole].decode()
                body = payload[2 + nrole:]
                if body != self.hello_body:
                    raise TransportError("handshake configuration mismatch from %s" % role)
            except Exception:
                conn.close()
                continue
            with self._in_cond:
                self._in[role] = conn
                self._in_cond.notify_all()

    def _outgoing(self, to):
        sock = self._out.get(to)
        if sock is None:
            if to not in self.peers:
                raise TransportError("no address known for peer %s" % to)
            deadline = time.monotonic() + self._timeout
            last = None
            while True:
                try:
                    sock = socket.create_connection(self.peers[to], timeout=2.0)
                    break
                except OSError as e:
                    last = e
                    if time.monotonic() > deadline:
                        raise TransportError("cannot reach %s: %s" % (to, last))
                    time.sleep(0.1)
            sock.settimeout(self._timeout)
            frame = build_frame(HELLO, self.session_id, self._hello_payload())
            sock.sendall(frame)
            self._out[to] = sock
        return sock

    def _send_raw(self, to, frame):
        self._outgoing(to).sendall(frame)

    def _recv_raw(self, frm):
        deadline = time.monotonic() + self._timeout
        with self._in_cond:
            while frm not in self._in:
                left = deadline - time.monotonic()
                if left <= 0:
                    raise TransportError("peer %s never connected" % frm)
                self._in_cond.wait(min(left, 0.2))
            sock = self._in[frm]
        return _read_frame(sock, self._timeout)

    def close(self):
        self._accepting = False
        try:
            self._server.close()
        except OSError:
            pass
        for sock in list(self._out.values()) + list(self._in.values()):
            try:
                sock.close()
            except OSError:
                pass


def _read_frame(sock, timeout) -> bytes:
    sock.settimeout(timeout)
    head = _read_exact(sock, 4)
    (ln,) = struct.unpack(">I", head)
    if ln < 9 or ln > (1 << 31):
        raise TransportError("invalid frame length %d" % ln)
    return head + _read_exact(sock, ln)


def _read_exact(sock, n) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        try:
            chunk = sock.recv(n - len(buf))
        except socket.timeout:
            raise TransportError("socket recv timed out")
        if not chunk:
            raise TransportError("connection closed mid-frame")
        buf.extend(chunk)
    return bytes(buf)


# ------------------------------------------------------------- commitments

def commitment(payload: bytes, nonce: bytes) -> bytes:
    if len(nonce) != 32:
        raise ValueError("nonce must be 32 bytes")
    return hashlib.sha256(payload + nonce).digest()


def commit_reveal(chan: Channels, peers, payload: bytes, nonce: bytes) -> dict:
    """Simultaneous exchange of payloads with binding commitments.

    Returns {peer: payload}. Raises ProtocolAbort on any digest mismatch,
    including a peer showing different digests to different parties (three or
    more participants cross-echo what they received).
    """
    peers = sorted(peers)
    digest = commitment(payload, nonce)
    got = chan.step({p: (COMMIT, digest) for p in peers},
                    [(p, COMMIT) for p in peers])
    commits = {p: got[p] for p in peers}
    reveal = nonce + payload
    got = chan.step({p: (REVEAL, reveal) for p in peers},
                    [(p, REVEAL) for p in peers])
    out = {}
    for p in peers:
        r_nonce, r_payload = got[p][:32], got[p][32:]
        if commitment(r_payload, r_nonce) != commits[p]:
            chan.broadcast_abort(peers, "commitment mismatch")
            raise ProtocolAbort("commitment from %s does not match its reveal" % p)
        out[p] = r_payload
    if len(peers) >= 2:
        # echo phase: tell every peer which digests the others showed me
        my_view = b"".join(commits[p] for p in peers)
        got = chan.step({p: (ECHO, my_view) for p in peers},
                        [(p, ECHO) for p in peers])
        for p in peers:
            view = got[p]
            their_names = sorted(set(peers + [chan.me]) - {p})
            if len(view) != 32 * len(their_names):
                chan.broadcast_abort(peers, "commitment echo malformed")
                raise ProtocolAbort("malformed commitment echo from %s" % p)
            for i, name in enumerate(their_names):
                seen = view[32 * i:32 * (i + 1)]
                expect = digest if name == chan.me else commits.get(name)
                if expect is not None and seen != expect:
                    chan.broadcast_abort(peers, "commitment equivocation")
                    raise ProtocolAbort(
                        "%s reports a different commitment from %s" % (p, name))
    return out
