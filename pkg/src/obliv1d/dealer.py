"""Correlated randomness: trusted dealer, party stores, preprocessing files.

The dealer knows every secret it deals and must run outside the adversary's
reach; compute parties only ever see their own fragments.  Three ways to get
material to a party:

* in-process: all parties hold stores attached to one TrustedDealer, which
  refills lazily (thread safe, batched).  Used by the local simulator.
* files: a plan (key -> count) is turned into one manifest file per party
  plus one per external input owner, loaded back into detached stores that
  raise PreprocExhausted when they run dry.
* serve: the dealer answers pop requests over TCP, one connection per party.

A store counts everything popped from it.  Since the protocols consume
material in a data-independent order, a dry run over dummy inputs yields the
exact plan for a real run with the same configuration.

Replicated-sharing schemes with an active adversary draw their
multiplication triples from a triple factory inside the protocol layer (the
servers make and sacrifice their own), so the dealer refuses those keys; it
still deals truncation pairs and input masks for every scheme.
"""

import json
import socket
import struct
import threading
from collections import deque

import numpy as np

from . import sharing, transport
from .errors import BoundError, PreprocExhausted, TransportError, UsageError
from .prg import Prg
from .sharing import ZeroShareKeys, scheme_info

CHUNK_TRIPLES = 2048
CHUNK_TRUNC = 256
CHUNK_MASKS = 128

MAGIC = "obliv1d-prep"


def key_str(key) -> str:
    kind = key[0]
    if kind == "triple":
        return "triple"
    if kind == "mtriple":
        return "mtriple:%d,%d,%d" % key[1:4]
    if kind == "trunc":
        return "trunc:%d,%d,%d" % (key[1], key[2], 1 if key[3] else 0)
    if kind == "mask":
        return "mask:%s" % key[1]
    raise UsageError("unknown material key %r" % (key,))


def key_parse(s: str):
    kind, _, rest = s.partition(":")
    if kind == "triple":
        return ("triple",)
    if kind == "mtriple":
        m, kd, n = (int(v) for v in rest.split(","))
        return ("mtriple", m, kd, n)
    if kind == "trunc":
        lbits, shift, wb = (int(v) for v in rest.split(","))
        return ("trunc", lbits, shift, bool(wb))
    if kind == "mask":
        return ("mask", rest)
    raise UsageError("unknown material key %r" % s)


def trunc_mask_range(ring, lbits: int):
    """(R, kappa_eff) for masking a value in [0, 2**lbits) without wrap.

    The mask is uniform on [0, R); the opened sum stays below the modulus, so
    the quotient arithmetic is exact integer arithmetic.  kappa_eff bounds the
    statistical leakage at 2**-kappa_eff.
    """
    if ring.kind == "prime":
        kappa = min(ring.stat_sec, ring.bits - 1 - lbits)
        while kappa > 0 and (1 << lbits) + (1 << (lbits + kappa)) >= ring.modulus:
            kappa -= 1
        if kappa < 1:
            raise BoundError("no masking headroom for %d-bit values in %s"
                             % (lbits, ring.tag()))
        return (1 << (lbits + kappa)), kappa
    if lbits >= ring.k:
        raise BoundError("no masking headroom for %d-bit values in %s"
                         % (lbits, ring.tag()))
    return (1 << ring.k) - (1 << lbits), ring.k - lbits


def _slice(part, i, j):
    return None if part is None else part[i:j]


def _concat(parts):
    if parts[0] is None:
        return None
    if isinstance(parts[0], np.ndarray):
        return np.concatenate(parts, axis=0)
    return type(parts[0]).concat(parts, axis=0)


class _Queue:
    def __init__(self):
        self.chunks = deque()  # (tuple_of_parts, count)
        self.avail = 0

    def push(self, parts, count):
        self.chunks.append((tuple(parts), count))
        self.avail += count

    def pop(self, n):
        got = []
        left = n
        while left:
            parts, cnt = self.chunks[0]
            if cnt <= left:
                got.append(parts)
                self.chunks.popleft()
                left -= cnt
            else:
                got.append(tuple(_slice(p, 0, left) for p in parts))
                self.chunks[0] = (tuple(_slice(p, left, cnt) for p in parts),
                                  cnt - left)
                left = 0
        self.avail -= n
        if len(got) == 1:
            return got[0]
        return tuple(_concat([g[ci] for g in got]) for ci in range(len(got[0])))

    def pop_one(self):
        parts, _ = self.chunks.popleft()
        self.avail -= 1
        return parts


class PartyStore:
    """One compute party's view of the preprocessing material."""

    def __init__(self, scheme, ring, party, dealer=None):
        self.scheme = scheme
        self.ring = ring
        self.party = party
        self.dealer = dealer
        self.alpha = None
        self.zero_keys = None
        self.queues = {}
        self.plain = {}  # owner -> _Queue of plaintext masks (owner's own file)
        self.consumed = {}

    def _queue(self, key):
        return self.queues.setdefault(key, _Queue())

    def _fill(self, key, n):
        q = self._queue(key)
        if q.avail < n:
            if self.dealer is None:
                raise PreprocExhausted("ran out of %s material" % key_str(key))
            self.dealer.ensure(self.party, key, n)
        self.consumed[key] = self.consumed.get(key, 0) + n
        return q

    def available(self, key):
        return self._queue(key).avail

    def pop_triples(self, n):
        return self._fill(("triple",), n).pop(n)

    def push_triples(self, a, b, c, count):
        self._queue(("triple",)).push((a, b, c), count)

    def pop_matrix_triple(self, m, kd, n):
        return self._fill(("mtriple", m, kd, n), 1).pop_one()

    def push_matrix_triple(self, m, kd, n, abc):
        self._queue(("mtriple", m, kd, n)).push(abc, 1)

    def pop_trunc(self, n, lbits, shift, with_bits):
        """(r_top, r_low, bits) shares; bits is None without with_bits."""
        return self._fill(("trunc", lbits, shift, with_bits), n).pop(n)

    def pop_mask(self, owner, n):
        return self._fill(("mask", owner), n).pop(n)[0]

    def pop_mask_plain(self, owner, n):
        """Plaintext masks for inputs this party itself owns."""
        if self.dealer is not None:
            return self.dealer.pop_plain(owner, n)
        q = self.plain.get(owner)
        if q is None or q.avail < n:
            raise PreprocExhausted("ran out of plaintext masks for %s" % owner)
        return q.pop(n)[0]

    def plan(self):
        return {key_str(k): v for k, v in sorted(self.consumed.items(),
                                                 key=lambda kv: key_str(kv[0]))}


class ClientFeed:
    """Plaintext input masks for an external owner (3-party client side)."""

    def __init__(self, owner, dealer=None):
        self.owner = owner
        self.dealer = dealer
        self.queue = _Queue()

    def pop(self, n):
        if self.dealer is not None:
            return self.dealer.pop_plain(self.owner, n)
        if self.queue.avail < n:
            raise PreprocExhausted("ran out of plaintext masks for %s" % self.owner)
        return self.queue.pop(n)[0]


class TrustedDealer:
    def __init__(self, scheme, ring, seed=None):
        self.scheme = scheme_info(scheme) if isinstance(scheme, str) else scheme
        self.ring = ring
        if seed is None:
            self.prg = Prg.from_os()
        else:
            self.prg = Prg.from_seed(seed, "dealer")
        self._lock = threading.RLock()
        n = self.scheme.nparties
        self.stores = [PartyStore(self.scheme, ring, i, dealer=self)
                       for i in range(n)]
        self.feeds = {}
        self.alpha_frags = None
        if self.scheme.kind == "auth":
            self.alpha_frags = sharing.gen_alpha(self.prg, ring, n)
            for st, frag in zip(self.stores, self.alpha_frags):
                st.alpha = frag
        if self.scheme.kind == "repl":
            for st, zk in zip(self.stores, ZeroShareKeys.deal(self.prg, ring)):
                st.zero_keys = zk

    def store(self, party) -> PartyStore:
        return self.stores[party]

    def client_feed(self, owner) -> ClientFeed:
        return ClientFeed(owner, dealer=self)

    def _feed(self, owner) -> _Queue:
        return self.feeds.setdefault(owner, _Queue())

    @property
    def self_made_triples(self) -> bool:
        return self.scheme.kind == "repl" and self.scheme.active

    def ensure(self, party, key, n):
        with self._lock:
            q = self.stores[party]._queue(key)
            while q.avail < n:
                self._generate(key)

    def pop_plain(self, owner, n):
        with self._lock:
            q = self._feed(owner)
            while q.avail < n:
                self._generate(("mask", owner))
            return q.pop(n)[0]

    def _share(self, values):
        kind = self.scheme.kind
        if kind == "additive":
            return [(s,) for s in sharing.share_additive(
                self.prg, self.ring, values, self.scheme.nparties)]
        if kind == "auth":
            return [(s,) for s in sharing.share_auth(
                self.prg, self.ring, values, self.alpha_frags)]
        return [(s,) for s in sharing.share_replicated(self.prg, self.ring, values)]

    def _push_all(self, key, per_party_parts, count):
        for store, parts in zip(self.stores, per_party_parts):
            store._queue(key).push(parts, count)

    def _generate(self, key):
        kind = key[0]
        if kind in ("triple", "mtriple") and self.self_made_triples:
            raise UsageError("active replicated servers make their own triples")
        if kind == "triple":
            a = self.prg.ring_uniform(self.ring, (CHUNK_TRIPLES,))
            b = self.prg.ring_uniform(self.ring, (CHUNK_TRIPLES,))
            c = self.ring.mul(a, b)
            parts = [self._share(v) for v in (a, b, c)]
            self._push_all(key, [tuple(p[i][0] for p in parts)
                                 for i in range(self.scheme.nparties)],
                           CHUNK_TRIPLES)
        elif kind == "mtriple":
            m, kd, n = key[1:4]
            a = self.prg.ring_uniform(self.ring, (m, kd))
            b = self.prg.ring_uniform(self.ring, (kd, n))
            c = self.ring.matmul(a, b)
            parts = [self._share(v) for v in (a, b, c)]
            self._push_all(key, [tuple(p[i][0] for p in parts)
                                 for i in range(self.scheme.nparties)], 1)
        elif kind == "trunc":
            self._generate_trunc(key)
        elif kind == "mask":
            owner = key[1]
            vals = self.prg.ring_uniform(self.ring, (CHUNK_MASKS,))
            shares = self._share(vals)
            self._push_all(key, shares, CHUNK_MASKS)
            self._feed(owner).push((vals,), CHUNK_MASKS)
        else:
            raise UsageError("unknown material key %r" % (key,))

    def _generate_trunc(self, key):
        _, lbits, shift, with_bits = key
        if not 0 < shift <= lbits:
            raise UsageError("truncation shift %d out of range for %d-bit values"
                             % (shift, lbits))
        big_r, _ = trunc_mask_range(self.ring, lbits)
        n = CHUNK_TRUNC
        if big_r <= 1 << 64:
            rs = [int(v) for v in self.prg.below_u64(big_r, n)]
        else:
            limbs = self.prg.below128(big_r, n)
            rs = [int(lo) + (int(hi) << 64) for lo, hi in limbs]
        low_mod = 1 << shift
        tops = self.ring.from_ints([r >> shift for r in rs])
        lows = self.ring.from_ints([r % low_mod for r in rs])
        comps = [self._share(tops), self._share(lows)]
        if with_bits:
            bits = self.ring.from_ints([[(r >> i) & 1 for i in range(shift)]
                                        for r in rs])
            comps.append(self._share(bits))
        per_party = []
        for i in range(self.scheme.nparties):
            parts = [c[i][0] for c in comps]
            if not with_bits:
                parts.append(None)
            per_party.append(tuple(parts))
        self._push_all(key, per_party, n)

    # ---------------------------------------------------------------- files

    def generate_files(self, plan: dict, outdir):
        """Write one manifest per party, plus one per external input owner."""
        import os
        os.makedirs(outdir, exist_ok=True)
        plain_totals = {}
        for ks, count in sorted(plan.items()):
            key = key_parse(ks)
            if key[0] in ("triple", "mtriple") and self.self_made_triples:
                continue
            for party in range(self.scheme.nparties):
                self.ensure(party, key, count)
            if key[0] == "mask":
                plain_totals[key[1]] = count
        paths = []
        for party, store in enumerate(self.stores):
            path = os.path.join(outdir, "party%d.prep" % party)
            with open(path, "wb") as f:
                _write_record(f, {"magic": MAGIC, "version": 1,
                                  "scheme": self.scheme.name,
                                  "ring": self.ring.tag(), "party": party}, b"")
                if store.alpha is not None:
                    _write_record(f, {"kind": "alpha"},
                                  self.ring.to_bytes(store.alpha))
                if store.zero_keys is not None:
                    zk = store.zero_keys
                    _write_record(f, {"kind": "zerokeys"}, zk.key_mine + zk.key_next)
                for ks, count in sorted(plan.items()):
                    key = key_parse(ks)
                    if key[0] in ("triple", "mtriple") and self.self_made_triples:
                        continue
                    self._write_material(f, store, key, count)
                if self.scheme.nparties == 2:
                    owner = self.scheme.roles[party]
                    if owner in plain_totals:
                        vals = self.pop_plain(owner, plain_totals[owner])
                        _write_record(f, {"kind": "maskplain", "owner": owner,
                                          "count": plain_totals[owner]},
                                      self.ring.to_bytes(vals))
            paths.append(path)
        if self.scheme.nparties == 3:
            for owner, count in sorted(plain_totals.items()):
                path = os.path.join(outdir, "%s.prep" % owner)
                vals = self.pop_plain(owner, count)
                with open(path, "wb") as f:
                    _write_record(f, {"magic": MAGIC, "version": 1,
                                      "scheme": self.scheme.name,
                                      "ring": self.ring.tag(), "client": owner}, b"")
                    _write_record(f, {"kind": "maskplain", "owner": owner,
                                      "count": count}, self.ring.to_bytes(vals))
                paths.append(path)
        return paths

    def _write_material(self, f, store, key, count):
        header = {"kind": "material", "key": key_str(key), "count": count}
        if key[0] == "mtriple":
            bodies = []
            for _ in range(count):
                store._fill(key, 1)
                for part in store._queue(key).pop_one():
                    bodies.append(_share_bytes(self.ring, part))
            _write_record(f, header, b"".join(bodies))
            store.consumed[key] -= count  # metering belongs to the real run
            return
        q = store._fill(key, count)
        parts = q.pop(count)
        store.consumed[key] -= count
        body = b"".join(_share_bytes(self.ring, p) for p in parts if p is not None)
        _write_record(f, header, body)


def _share_bytes(ring, share) -> bytes:
    return b"".join(ring.to_bytes(getattr(share, c)) for c in share.components)


def _share_from(ring, scheme, party, data, offset, lshape):
    cls = sharing.share_class(scheme)
    nelems = 1
    for s in lshape:
        nelems *= s
    size = nelems * ring.elem_bytes
    parts = []
    for _ in cls.components:
        arr = ring.from_bytes(data[offset:offset + size], nelems)
        parts.append(ring.reshape(arr, lshape))
        offset += size
    if cls is sharing.AdditiveShare:
        return cls(ring, party, scheme.nparties, parts[0]), offset
    if cls is sharing.AuthShare:
        return cls(ring, party, scheme.nparties, parts[0], parts[1]), offset
    return cls(ring, party, parts[0], parts[1]), offset


def _write_record(f, header: dict, body: bytes):
    h = json.dumps(header, sort_keys=True).encode()
    f.write(struct.pack(">I", len(h)))
    f.write(h)
    f.write(struct.pack(">Q", len(body)))
    f.write(body)


def _read_record(f):
    head = f.read(4)
    if not head:
        return None
    (hlen,) = struct.unpack(">I", head)
    header = json.loads(f.read(hlen).decode())
    (blen,) = struct.unpack(">Q", f.read(8))
    return header, f.read(blen)


def load_party_file(path, scheme, ring) -> PartyStore:
    scheme = scheme_info(scheme) if isinstance(scheme, str) else scheme
    with open(path, "rb") as f:
        rec = _read_record(f)
        if rec is None or rec[0].get("magic") != MAGIC:
            raise UsageError("%s is not a preprocessing manifest" % path)
        head = rec[0]
        if head.get("scheme") != scheme.name or head.get("ring") != ring.tag():
            raise UsageError("manifest %s was made for %s/%s"
                             % (path, head.get("scheme"), head.get("ring")))
        if "client" in head:
            raise UsageError("%s is a client manifest, not a party manifest" % path)
        party = head["party"]
        store = PartyStore(scheme, ring, party, dealer=None)
        while True:
            rec = _read_record(f)
            if rec is None:
                break
            header, body = rec
            kind = header["kind"]
            if kind == "alpha":
                store.alpha = ring.from_bytes(body, 1).reshape(ring.unit_shape)
            elif kind == "zerokeys":
                store.zero_keys = ZeroShareKeys(ring, party, body[:32], body[32:64])
            elif kind == "maskplain":
                vals = ring.from_bytes(body, header["count"])
                store.plain.setdefault(header["owner"], _Queue()).push(
                    (vals,), header["count"])
            elif kind == "material":
                _load_material(store, scheme, ring, party, header, body)
            else:
                raise UsageError("unknown manifest record %r" % kind)
        return store


def _load_material(store, scheme, ring, party, header, body):
    key = key_parse(header["key"])
    count = header["count"]
    offset = 0
    if key[0] == "mtriple":
        m, kd, n = key[1:4]
        for _ in range(count):
            a, offset = _share_from(ring, scheme, party, body, offset, (m, kd))
            b, offset = _share_from(ring, scheme, party, body, offset, (kd, n))
            c, offset = _share_from(ring, scheme, party, body, offset, (m, n))
            store._queue(key).push((a, b, c), 1)
        return
    if key[0] == "triple":
        shapes = [(count,)] * 3
    elif key[0] == "trunc":
        shapes = [(count,), (count,)]
        if key[3]:
            shapes.append((count, key[2]))
    else:  # mask
        shapes = [(count,)]
    parts = []
    for shape in shapes:
        part, offset = _share_from(ring, scheme, party, body, offset, shape)
        parts.append(part)
    if key[0] == "trunc" and not key[3]:
        parts.append(None)
    store._queue(key).push(tuple(parts), count)


def load_client_file(path, scheme, ring) -> ClientFeed:
    scheme = scheme_info(scheme) if isinstance(scheme, str) else scheme
    with open(path, "rb") as f:
        rec = _read_record(f)
        if rec is None or rec[0].get("magic") != MAGIC or "client" not in rec[0]:
            raise UsageError("%s is not a client manifest" % path)
        head = rec[0]
        if head.get("scheme") != scheme.name or head.get("ring") != ring.tag():
            raise UsageError("manifest %s was made for %s/%s"
                             % (path, head.get("scheme"), head.get("ring")))
        feed = ClientFeed(head["client"], dealer=None)
        while True:
            rec = _read_record(f)
            if rec is None:
                break
            header, body = rec
            if header["kind"] != "maskplain":
                raise UsageError("unexpected record %r in client manifest"
                                 % header["kind"])
            vals = ring.from_bytes(body, header["count"])
            feed.queue.push((vals,), header["count"])
        return feed


# ---------------------------------------------------------------- serve mode

class DealerServer:
    """Answers pop requests over TCP; one connection per party or client.

    Request: DATA frame, JSON {"op": "attach", "party": i} or
    {"op": "pop", "key": k, "count": n} or {"op": "plain", "owner": o,
    "count": n}.  Response: DATA frame with JSON header and raw body,
    encoded like a manifest record.
    """

    def __init__(self, dealer: TrustedDealer, listen_addr, session_id: bytes):
        self.dealer = dealer
        self.session_id = session_id
        self._server = socket.create_server(listen_addr, backlog=8)
        self._threads = []
        self._running = True

    @property
    def address(self):
        return self._server.getsockname()

    def serve_forever(self):
        while self._running:
            try:
                conn, _ = self._server.accept()
            except OSError:
                return
            t = threading.Thread(target=self._handle, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)

    def start(self):
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t

    def stop(self):
        self._running = False
        try:
            self._server.close()
        except OSError:
            pass

    def _respond(self, conn, header, body=b""):
        payload = json.dumps(header, sort_keys=True).encode() + b"\n" + body
        conn.sendall(transport.build_frame(transport.DATA, self.session_id, payload))

    def _handle(self, conn):
        dealer = self.dealer
        ring = dealer.ring
        party = None
        try:
            while True:
                frame = transport._read_frame(conn, 600.0)
                _, mtype, sid = transport._HDR.unpack_from(frame)
                if sid != self.session_id or mtype != transport.DATA:
                    raise TransportError("bad dealer request")
                req = json.loads(frame[13:].decode())
                op = req["op"]
                if op == "attach":
                    party = req["party"]
                    store = dealer.stores[party]
                    head = {"scheme": dealer.scheme.name, "ring": ring.tag()}
                    body = b""
                    if store.alpha is not None:
                        head["alpha"] = True
                        body += ring.to_bytes(store.alpha)
                    if store.zero_keys is not None:
                        head["zerokeys"] = True
                        body += store.zero_keys.key_mine + store.zero_keys.key_next
                    self._respond(conn, head, body)
                elif op == "plain":
                    vals = dealer.pop_plain(req["owner"], req["count"])
                    self._respond(conn, {"count": req["count"]}, ring.to_bytes(vals))
                elif op == "pop":
                    key = key_parse(req["key"])
                    count = req["count"]
                    store = dealer.stores[party]
                    with dealer._lock:
                        q = store._queue(key)
                        while q.avail < count:
                            dealer._generate(key)
                        if key[0] == "mtriple":
                            parts = q.pop_one()
                        else:
                            parts = q.pop(count)
                    body = b"".join(_share_bytes(ring, p)
                                    for p in parts if p is not None)
                    self._respond(conn, {"key": req["key"], "count": count}, body)
                else:
                    raise TransportError("unknown dealer op %r" % op)
        except (TransportError, OSError, json.JSONDecodeError, KeyError):
            pass
        finally:
            conn.close()


class RemoteStore(PartyStore):
    """PartyStore that pops from a DealerServer over one TCP connection."""

    def __init__(self, scheme, ring, party, addr, session_id: bytes,
                 timeout=600.0):
        scheme = scheme_info(scheme) if isinstance(scheme, str) else scheme
        super().__init__(scheme, ring, party, dealer=None)
        self._timeout = timeout
        self._sock = socket.create_connection(addr, timeout=timeout)
        self.session_id = session_id
        head, body = self._request({"op": "attach", "party": party})
        if head.get("scheme") != self.scheme.name or head.get("ring") != ring.tag():
            raise TransportError("dealer serves %s/%s, party expects %s/%s"
                                 % (head.get("scheme"), head.get("ring"),
                                    self.scheme.name, ring.tag()))
        off = 0
        if head.get("alpha"):
            self.alpha = ring.from_bytes(
                body[:ring.elem_bytes], 1).reshape(ring.unit_shape)
            off = ring.elem_bytes
        if head.get("zerokeys"):
            self.zero_keys = ZeroShareKeys(ring, party, body[off:off + 32],
                                           body[off + 32:off + 64])

    def _request(self, req):
        payload = json.dumps(req, sort_keys=True).encode()
        self._sock.sendall(transport.build_frame(transport.DATA,
                                                 self.session_id, payload))
        frame = transport._read_frame(self._sock, self._timeout)
        head, _, body = frame[13:].partition(b"\n")
        return json.loads(head.decode()), body

    def _remote_pop(self, key, count):
        self.consumed[key] = self.consumed.get(key, 0) + count
        _, body = self._request({"op": "pop", "key": key_str(key),
                                 "count": count})
        return body

    def pop_triples(self, n):
        q = self._queue(("triple",))
        if q.avail >= n:
            self.consumed[("triple",)] = self.consumed.get(("triple",), 0) + n
            return q.pop(n)
        body = self._remote_pop(("triple",), n)
        offset = 0
        parts = []
        for _ in range(3):
            p, offset = _share_from(self.ring, self.scheme, self.party,
                                    body, offset, (n,))
            parts.append(p)
        return tuple(parts)

    def pop_matrix_triple(self, m, kd, n):
        key = ("mtriple", m, kd, n)
        if self._queue(key).avail:
            self.consumed[key] = self.consumed.get(key, 0) + 1
            return self._queue(key).pop_one()
        body = self._remote_pop(key, 1)
        offset = 0
        out = []
        for shape in ((m, kd), (kd, n), (m, n)):
            p, offset = _share_from(self.ring, self.scheme, self.party,
                                    body, offset, shape)
            out.append(p)
        return tuple(out)

    def pop_trunc(self, n, lbits, shift, with_bits):
        key = ("trunc", lbits, shift, with_bits)
        body = self._remote_pop(key, n)
        offset = 0
        top, offset = _share_from(self.ring, self.scheme, self.party,
                                  body, offset, (n,))
        low, offset = _share_from(self.ring, self.scheme, self.party,
                                  body, offset, (n,))
        bits = None
        if with_bits:
            bits, offset = _share_from(self.ring, self.scheme, self.party,
                                       body, offset, (n, shift))
        return top, low, bits

    def pop_mask(self, owner, n):
        body = self._remote_pop(("mask", owner), n)
        share, _ = _share_from(self.ring, self.scheme, self.party, body, 0, (n,))
        return share

    def pop_mask_plain(self, owner, n):
        _, body = self._request({"op": "plain", "owner": owner, "count": n})
        return self.ring.from_bytes(body, n)

    def close(self):
        try:
            self._sock.close()
        except OSError:
            pass


class RemoteFeed(ClientFeed):
    """Client-side plaintext masks served by a DealerServer."""

    def __init__(self, owner, addr, session_id: bytes, ring, timeout=600.0):
        super().__init__(owner, dealer=None)
        self.ring = ring
        self.session_id = session_id
        self._timeout = timeout
        self._sock = socket.create_connection(addr, timeout=timeout)

    def pop(self, n):
        payload = json.dumps({"op": "plain", "owner": self.owner,
                              "count": n}, sort_keys=True).encode()
        self._sock.sendall(transport.build_frame(transport.DATA,
                                                 self.session_id, payload))
        frame = transport._read_frame(self._sock, self._timeout)
        _, _, body = frame[13:].partition(b"\n")
        return self.ring.from_bytes(body, n)

    def close(self):
        try:
            self._sock.close()
        except OSError:
            pass
