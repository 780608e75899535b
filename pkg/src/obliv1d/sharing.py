"""Secret share containers and trusted-side constructors.

Three layouts over one packed-array representation:

* additive: party i holds x_i with sum(x_i) = x.  Public constants fold into
  party 0's fragment.
* authenticated (SPDZ style): additive data fragment plus an additive MAC
  fragment; the MAC fragments sum to alpha * x for a global key alpha that is
  itself additively shared.  Adding a public c moves c into party 0's data
  fragment and alpha_i * c into every party's MAC fragment.
* replicated (3 parties): x = x0 + x1 + x2 and party i holds the summand
  pair (x_i, x_{i+1 mod 3}) in slots (a, b).  Public constants fold into
  summand 0, held by party 0 in slot a and party 2 in slot b.

Share objects are local fragments; they never see the network directly.
Indexing, take() and concat() address logical axes (the limb axis of a
two-limb ring rides along untouched).
"""

import numpy as np

from .errors import ProtocolAbort, RingMismatchError, UsageError
from .prg import Prg


class SchemeInfo:
    def __init__(self, name, nparties, kind, active, roles):
        self.name = name
        self.nparties = nparties
        self.kind = kind  # additive | auth | repl
        self.active = active
        self.roles = roles

    def __repr__(self):
        return "SchemeInfo(%r)" % self.name


SCHEMES = {
    "semi-2pc": SchemeInfo("semi-2pc", 2, "additive", False, ("alice", "bob")),
    "active-2pc": SchemeInfo("active-2pc", 2, "auth", True, ("alice", "bob")),
    "semi-3pc": SchemeInfo("semi-3pc", 3, "repl", False, ("s1", "s2", "s3")),
    "active-3pc": SchemeInfo("active-3pc", 3, "repl", True, ("s1", "s2", "s3")),
}


def scheme_info(name: str) -> SchemeInfo:
    try:
        return SCHEMES[name]
    except KeyError:
        raise UsageError("unknown scheme %r (choose from %s)"
                         % (name, ", ".join(sorted(SCHEMES))))


class _Share:
    components = ()

    def _compat(self, other):
        if type(other) is not type(self):
            raise UsageError("cannot combine %s with %s"
                             % (type(self).__name__, type(other).__name__))
        if other.ring is not self.ring and other.ring != self.ring:
            raise RingMismatchError("shares live in different rings")
        if other.party != self.party:
            raise UsageError("cannot combine fragments of different parties")

    def _parts(self):
        return [getattr(self, c) for c in self.components]

    def _map1(self, fn):
        return self._rebuild([fn(p) for p in self._parts()])

    def _map2(self, other, fn):
        self._compat(other)
        return self._rebuild([fn(p, q) for p, q in zip(self._parts(), other._parts())])

    @property
    def lshape(self):
        return self.ring.lshape(self._parts()[0])

    def add(self, other):
        return self._map2(other, self.ring.add)

    def sub(self, other):
        return self._map2(other, self.ring.sub)

    def neg(self):
        return self._map1(self.ring.neg)

    def __add__(self, other):
        return self.add(other)

    def __sub__(self, other):
        return self.sub(other)

    def __neg__(self):
        return self.neg()

    def mul_public(self, pub):
        """Elementwise product with a public packed array (broadcasts)."""
        return self._map1(lambda p: self.ring.mul(p, pub))

    def matmul_public(self, pub, side):
        if side == "left":
            return self._map1(lambda p: self.ring.matmul(pub, p))
        if side == "right":
            return self._map1(lambda p: self.ring.matmul(p, pub))
        raise UsageError("side must be 'left' or 'right'")

    def sum(self, axis=0):
        return self._map1(lambda p: self.ring.sum(p, axis))

    def reshape(self, shape):
        return self._map1(lambda p: self.ring.reshape(p, shape))

    def take(self, idx):
        """Gather along leading logical axes with an integer index array."""
        return self._map1(lambda p: p[idx])

    def __getitem__(self, key):
        return self._map1(lambda p: p[key])

    def ravel(self):
        return self.reshape((int(np.prod(self.lshape, dtype=np.int64)),))

    def broadcast_to(self, shape):
        full = tuple(shape) + self.ring.unit_shape
        return self._map1(
            lambda p: np.ascontiguousarray(np.broadcast_to(p, full)))

    @classmethod
    def concat(cls, shares, axis=0):
        first = shares[0]
        for s in shares[1:]:
            first._compat(s)
        parts = []
        for ci in range(len(cls.components)):
            parts.append(np.concatenate([s._parts()[ci] for s in shares], axis=axis))
        return first._rebuild(parts)


class AdditiveShare(_Share):
    components = ("data",)

    def __init__(self, ring, party, nparties, data):
        self.ring = ring
        self.party = party
        self.nparties = nparties
        self.data = data

    def _rebuild(self, parts):
        return AdditiveShare(self.ring, self.party, self.nparties, parts[0])

    @classmethod
    def zeros(cls, ring, party, nparties, shape):
        return cls(ring, party, nparties, ring.zeros(shape))

    def add_public(self, pub, alpha=None):
        data = self.ring.add(self.data, pub) if self.party == 0 else self.data
        return AdditiveShare(self.ring, self.party, self.nparties, data)


class AuthShare(_Share):
    components = ("data", "mac")

    def __init__(self, ring, party, nparties, data, mac):
        self.ring = ring
        self.party = party
        self.nparties = nparties
        self.data = data
        self.mac = mac

    def _rebuild(self, parts):
        return AuthShare(self.ring, self.party, self.nparties, parts[0], parts[1])

    @classmethod
    def zeros(cls, ring, party, nparties, shape):
        return cls(ring, party, nparties, ring.zeros(shape), ring.zeros(shape))

    def add_public(self, pub, alpha=None):
        if alpha is None:
            raise UsageError("authenticated constant addition needs the key fragment")
        data = self.ring.add(self.data, pub) if self.party == 0 else self.data
        mac = self.ring.add(self.mac, self.ring.mul(alpha, pub))
        return AuthShare(self.ring, self.party, self.nparties, data, mac)


class ReplShare(_Share):
    components = ("a", "b")

    def __init__(self, ring, party, a, b):
        self.ring = ring
        self.party = party
        self.nparties = 3
        self.a = a  # summand party
        self.b = b  # summand party+1 mod 3
        self.data = a  # uniform open-payload access across layouts

    def _rebuild(self, parts):
        return ReplShare(self.ring, self.party, parts[0], parts[1])

    @classmethod
    def zeros(cls, ring, party, nparties, shape):
        return cls(ring, party, ring.zeros(shape), ring.zeros(shape))

    def add_public(self, pub, alpha=None):
        a, b = self.a, self.b
        if self.party == 0:
            a = self.ring.add(a, pub)
        if self.party == 2:
            b = self.ring.add(b, pub)
        return ReplShare(self.ring, self.party, a, b)


def share_class(scheme: SchemeInfo):
    return {"additive": AdditiveShare, "auth": AuthShare, "repl": ReplShare}[scheme.kind]


# ------------------------------------------------- trusted-side constructors

def share_additive(prg: Prg, ring, values, nparties):
    shape = ring.lshape(values)
    frags = [prg.ring_uniform(ring, shape) for _ in range(nparties - 1)]
    rest = values
    for f in frags:
        rest = ring.sub(rest, f)
    frags.append(rest)
    return [AdditiveShare(ring, i, nparties, f) for i, f in enumerate(frags)]


def reconstruct_additive(shares):
    ring = shares[0].ring
    total = shares[0].data
    for s in shares[1:]:
        total = ring.add(total, s.data)
    return total


def gen_alpha(prg: Prg, ring, nparties):
    """Additive fragments of a fresh uniform MAC key."""
    return [prg.ring_uniform(ring, ()) for _ in range(nparties)]


def share_auth(prg: Prg, ring, values, alpha_frags):
    nparties = len(alpha_frags)
    alpha = alpha_frags[0]
    for f in alpha_frags[1:]:
        alpha = ring.add(alpha, f)
    data = share_additive(prg, ring, values, nparties)
    macs = share_additive(prg, ring, ring.mul(alpha, values), nparties)
    return [AuthShare(ring, i, nparties, d.data, m.data)
            for i, (d, m) in enumerate(zip(data, macs))]


def reconstruct_auth(shares, alpha_frags=None):
    ring = shares[0].ring
    value = reconstruct_additive(shares)
    if alpha_frags is not None:
        mac = shares[0].mac
        for s in shares[1:]:
            mac = ring.add(mac, s.mac)
        alpha = alpha_frags[0]
        for f in alpha_frags[1:]:
            alpha = ring.add(alpha, f)
        if not bool(np.all(ring.equal(mac, ring.mul(alpha, value)))):
            raise ProtocolAbort("MAC does not authenticate the reconstructed value")
    return value


def share_replicated(prg: Prg, ring, values):
    shape = ring.lshape(values)
    s0 = prg.ring_uniform(ring, shape)
    s1 = prg.ring_uniform(ring, shape)
    s2 = ring.sub(ring.sub(values, s0), s1)
    summands = [s0, s1, s2]
    return [ReplShare(ring, i, summands[i], summands[(i + 1) % 3]) for i in range(3)]


def reconstruct_replicated(shares, check=True):
    ring = shares[0].ring
    if check:
        for i in range(3):
            j = (i + 1) % 3
            if not bool(np.all(ring.equal(shares[i].b, shares[j].a))):
                raise ProtocolAbort("replicated summand copies disagree")
    total = shares[0].a
    total = ring.add(total, shares[1].a)
    return ring.add(total, shares[2].a)


class ZeroShareKeys:
    """Cyclic PRF keys for 3-party local randomness.

    Party i holds (K_i, K_{i+1 mod 3}).  With all parties advancing the
    counter in lockstep, zero_share() values telescope to zero across the
    ring of parties, and random_repl() yields a fresh replicated sharing of
    an unknown uniform value at no communication cost.
    """

    def __init__(self, ring, party, key_mine, key_next):
        self.ring = ring
        self.party = party
        self.key_mine = key_mine
        self.key_next = key_next
        self.counter = 0

    @classmethod
    def deal(cls, prg: Prg, ring):
        keys = [prg.take(32) for _ in range(3)]
        return [cls(ring, i, keys[i], keys[(i + 1) % 3]) for i in range(3)]

    def _eval(self, key, ctr, shape):
        return Prg(key).child(ctr).ring_uniform(self.ring, shape)

    def zero_share(self, shape):
        ctr = self.counter
        self.counter += 1
        mine = self._eval(self.key_mine, ctr, shape)
        nxt = self._eval(self.key_next, ctr, shape)
        return self.ring.sub(mine, nxt)

    def random_repl(self, shape):
        ctr = self.counter
        self.counter += 1
        a = self._eval(self.key_mine, ctr, shape)
        b = self._eval(self.key_next, ctr, shape)
        return ReplShare(self.ring, self.party, a, b)
