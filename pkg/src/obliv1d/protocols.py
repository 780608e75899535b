"""Interactive protocol layer over shared values.

One Session per party per computation.  All parties run the same program on
their own fragments (same calls, same order); the transport pairs the
messages up.  Multiplication costs one round: both Beaver differences open
in a single step.  Opened values are either cross-checked immediately
(replicated sharing: every summand arrives from both of its holders) or
queued for a batched MAC check (authenticated sharing), so an additive
attack on any opened value aborts the run with overwhelming probability.

Truncation, comparison and equality all ride on one correlated-randomness
shape: shares of a bounded uniform mask r split at a public bit position,
optionally with shares of the low bits.  Opening x + offset + r is exact
integer arithmetic (the mask range leaves the modulus untouched), and the
quotient of the opened sum minus the shared quotient of r recovers the
shifted value with either an exact borrow (deterministic mode, one shared
bit-compare) or a one-sided stochastic carry (probabilistic mode, free).

The adversary hook injects additive errors at chosen spots so the abort
paths can be exercised end to end; it simulates a cheating party without a
second code path.
"""

import math

import numpy as np

from . import transport
from .errors import ProtocolAbort, UsageError
from .prg import Prg
from .sharing import share_class, scheme_info

RECIP_GUARD = 6  # extra fraction bits carried through the reciprocal iteration
RECIP_INIT = 2.9142  # classic linear seed: w0 = 2.9142 - 2*d for d in [1/2, 1)


def recip_iters(frac_work: int) -> int:
    return int(math.ceil(math.log2(frac_work + 1))) + 1


class Adversary:
    """Adds delta to one fragment at the nth occurrence of a context.

    Contexts: "open" (outgoing open payload), "mul" (own product share after
    the combine step), "sacrifice" (the reshare message while making a
    triple, i.e. a consistent additive attack on c).
    """

    def __init__(self, context, nth=0, delta=1):
        self.context = context
        self.nth = nth
        self.delta = delta


class Session:
    def __init__(self, scheme, ring, chan, store, trunc_mode="det",
                 mac_every=False, rng=None):
        self.scheme = scheme_info(scheme) if isinstance(scheme, str) else scheme
        if self.scheme.active and ring.kind != "prime":
            raise UsageError("active schemes need a prime field "
                             "(the check equations have negligible soundness "
                             "against even factors)")
        if trunc_mode not in ("det", "prob"):
            raise UsageError("trunc_mode must be 'det' or 'prob'")
        self.ring = ring
        self.chan = chan
        self.store = store
        self.trunc_mode = trunc_mode
        self.mac_every = mac_every
        self.rng = rng if rng is not None else Prg.from_os()
        roles = self.scheme.roles
        if chan.me not in roles:
            raise UsageError("%r is not a compute role of %s"
                             % (chan.me, self.scheme.name))
        self.party = roles.index(chan.me)
        self.role = chan.me
        self.peers = [r for r in roles if r != self.role]
        if self.scheme.nparties == 3:
            self.next = roles[(self.party + 1) % 3]
            self.prev = roles[(self.party - 1) % 3]
        self._mac_queue = []
        self._alpha_burned = False
        self.adversary = None
        self._adv_counts = {}
        self._shape_cls = share_class(self.scheme)

    # ------------------------------------------------------------- helpers

    def _const(self, value: int):
        return self.ring.from_int(value)

    def const_share(self, value, shape=()):
        """A share of a public constant (broadcast over shape)."""
        sh = self._shape_cls.zeros(self.ring, self.party,
                                   self.scheme.nparties, shape)
        return self.add_public_int(sh, value)

    def add_public(self, x, pub):
        return x.add_public(pub, self.store.alpha)

    def add_public_int(self, x, value: int):
        if value % self.ring.modulus == 0:
            return x
        return x.add_public(self._const(value), self.store.alpha)

    def _lsize(self, x):
        shape = x.lshape
        return int(np.prod(shape, dtype=np.int64)) if shape else 1

    def _abort(self, reason):
        self.chan.broadcast_abort(self.peers, reason)
        raise ProtocolAbort(reason)

    def _corrupt_arr(self, context, arr):
        adv = self.adversary
        if adv is None or adv.context != context:
            return arr
        n = self._adv_counts.get(context, 0)
        self._adv_counts[context] = n + 1
        if n != adv.nth:
            return arr
        flat = arr.reshape((-1,) + self.ring.unit_shape).copy()
        flat[0] = self.ring.add(flat[0], self._const(adv.delta))
        return flat.reshape(arr.shape)

    def _corrupt_share(self, context, share):
        adv = self.adversary
        if adv is None or adv.context != context:
            return share
        parts = list(share._parts())
        parts[0] = self._corrupt_arr(context, parts[0])
        return share._rebuild(parts)

    # --------------------------------------------------------------- opens

    def open(self, x):
        return self.open_many([x])[0]

    def open_many(self, shares):
        """Open several shared arrays to all parties in one round."""
        flats = [s.ravel() for s in shares]
        big = flats[0] if len(flats) == 1 else type(flats[0]).concat(flats)
        pub = self._open_flat(big)
        out = []
        at = 0
        for s in shares:
            n = self._lsize(s)
            out.append(self.ring.reshape(pub[at:at + n], s.lshape))
            at += n
        return out

    def _open_flat(self, share):
        kind = self.scheme.kind
        if kind == "repl":
            return self._open_repl(share)
        if self._alpha_burned and kind == "auth":
            raise UsageError("the MAC key left the session; no further opens")
        n = self._lsize(share)
        payload = self.ring.to_bytes(self._corrupt_arr("open", share.data))
        got = self.chan.step({p: (transport.DATA, payload) for p in self.peers},
                             [(p, transport.DATA) for p in self.peers])
        total = share.data
        for p in self.peers:
            total = self.ring.add(total, self.ring.from_bytes(got[p], n))
        if kind == "auth":
            self._mac_queue.append((total, share.mac))
            if self.mac_every:
                self.mac_flush()
        return total

    def _open_repl(self, share):
        n = self._lsize(share)
        if self.scheme.active:
            send_a = self.ring.to_bytes(self._corrupt_arr("open", share.a))
            got = self.chan.step(
                {self.next: (transport.DATA, send_a),
                 self.prev: (transport.DATA, self.ring.to_bytes(share.b))},
                [(self.prev, transport.DATA), (self.next, transport.DATA)])
            from_prev = self.ring.from_bytes(got[self.prev], n)
            from_next = self.ring.from_bytes(got[self.next], n)
            if not bool(np.all(self.ring.equal(from_prev, from_next))):
                self._abort("open: the two copies of a summand disagree")
            missing = from_prev
        else:
            payload = self.ring.to_bytes(share.b)
            got = self.chan.step({self.prev: (transport.DATA, payload)},
                                 [(self.next, transport.DATA)])
            missing = self.ring.from_bytes(got[self.next], n)
        return self.ring.add(self.ring.add(share.a, share.b), missing)

    def _joint_seed(self) -> bytes:
        mine = self.rng.take(16)
        got = transport.commit_reveal(self.chan, self.peers, mine,
                                      self.rng.nonce())
        seed = bytearray(mine)
        for p in self.peers:
            other = got[p]
            if len(other) != 16:
                self._abort("malformed seed contribution")
            for i in range(16):
                seed[i] ^= other[i]
        return bytes(seed)

    def mac_flush(self):
        """Batched MAC check over everything opened since the last flush."""
        if self.scheme.kind != "auth" or not self._mac_queue:
            return
        queue, self._mac_queue = self._mac_queue, []
        ring = self.ring
        vals = np.concatenate(
            [v.reshape((-1,) + ring.unit_shape) for v, _ in queue])
        macs = np.concatenate(
            [m.reshape((-1,) + ring.unit_shape) for _, m in queue])
        coeff = Prg(self._joint_seed()).ring_uniform(ring, (vals.shape[0],))
        lhs = ring.sum(ring.mul(coeff, macs))
        rhs = ring.mul(self.store.alpha, ring.sum(ring.mul(coeff, vals)))
        sigma = ring.sub(lhs, rhs)
        got = transport.commit_reveal(self.chan, self.peers,
                                      ring.to_bytes(sigma), self.rng.nonce())
        total = sigma
        for p in self.peers:
            total = ring.add(total, ring.from_bytes(got[p], 1).reshape(
                ring.unit_shape))
        if ring.to_int(total) != 0:
            self._abort("MAC check failed on opened values")

    # ------------------------------------------------------ multiplication

    def mul(self, x, y):
        return self.mul_batch([x], [y])[0]

    def mul_batch(self, xs, ys):
        """Elementwise products, all pairs in one round."""
        for x, y in zip(xs, ys):
            if x.lshape != y.lshape:
                raise UsageError("mul operands must have matching shapes")
        bx = xs[0].ravel() if len(xs) == 1 else type(xs[0]).concat(
            [x.ravel() for x in xs])
        by = ys[0].ravel() if len(ys) == 1 else type(ys[0]).concat(
            [y.ravel() for y in ys])
        if self.scheme.kind == "repl" and not self.scheme.active:
            bz = self._araki_mul(bx, by, "mul")
        else:
            bz = self._beaver_mul(bx, by)
        out = []
        at = 0
        for x in xs:
            n = self._lsize(x)
            out.append(bz[at:at + n].reshape(x.lshape))
            at += n
        return out

    def _beaver_mul(self, x, y):
        n = self._lsize(x)
        self.ensure_triples(n)
        a, b, c = self.store.pop_triples(n)
        d, e = self.open_many([x - a, y - b])
        z = c.add(b.mul_public(d)).add(a.mul_public(e))
        z = self.add_public(z, self.ring.mul(d, e))
        return self._corrupt_share("mul", z)

    def _araki_mul(self, x, y, context):
        ring = self.ring
        z = ring.add(ring.add(ring.mul(x.a, y.a), ring.mul(x.a, y.b)),
                     ring.mul(x.b, y.a))
        return self._reshare(z, context)

    def _reshare(self, summand, context):
        """Rerandomize a 3-way additive summand back into replicated form."""
        ring = self.ring
        shape = ring.lshape(summand)
        v = ring.add(summand, self.store.zero_keys.zero_share(shape))
        v = self._corrupt_arr(context, v)
        payload = ring.to_bytes(v)
        got = self.chan.step({self.prev: (transport.DATA, payload)},
                             [(self.next, transport.DATA)])
        v_next = ring.reshape(
            ring.from_bytes(got[self.next], self._lsize_of(shape)), shape)
        cls = self._shape_cls
        return cls(ring, self.party, v, v_next)

    def _lsize_of(self, shape):
        return int(np.prod(shape, dtype=np.int64)) if shape else 1

    def matmul(self, x, y):
        """Shared matrix product, one round."""
        if self.scheme.kind == "repl" and not self.scheme.active:
            ring = self.ring
            z = ring.add(ring.add(ring.matmul(x.a, y.a), ring.matmul(x.a, y.b)),
                         ring.matmul(x.b, y.a))
            return self._reshare(z, "mul")
        m, kd = x.lshape
        kd2, n = y.lshape
        if kd != kd2:
            raise UsageError("matmul shapes do not agree")
        self.ensure_matrix_triple(m, kd, n)
        a, b, c = self.store.pop_matrix_triple(m, kd, n)
        d, e = self.open_many([x - a, y - b])
        z = c.add(b.matmul_public(d, "left")).add(a.matmul_public(e, "right"))
        z = self.add_public(z, self.ring.matmul(d, e))
        return self._corrupt_share("mul", z)

    # ------------------------------------------------------ triple factory

    @property
    def _makes_own_triples(self):
        return self.scheme.kind == "repl" and self.scheme.active

    def ensure_triples(self, n):
        if not self._makes_own_triples:
            return
        have = self.store.available(("triple",))
        if have >= n:
            return
        self._factory_scalar(max(n - have, 512))

    def ensure_matrix_triple(self, m, kd, n):
        if not self._makes_own_triples:
            return
        if self.store.available(("mtriple", m, kd, n)) >= 1:
            return
        self._factory_matrix(m, kd, n)

    def _factory_scalar(self, count):
        """Make `count` triples optimistically, then sacrifice twins."""
        zk = self.store.zero_keys
        a = zk.random_repl((count,))
        b = zk.random_repl((count,))
        a2 = zk.random_repl((count,))
        b2 = zk.random_repl((count,))
        both = self._araki_mul(type(a).concat([a, a2]),
                               type(b).concat([b, b2]), "sacrifice")
        c, c2 = both[:count], both[count:]
        rho = Prg(self._joint_seed()).ring_uniform(self.ring, (count,))
        d, e = self.open_many([a.mul_public(rho) - a2, b - b2])
        w = c.mul_public(rho) - c2 - b2.mul_public(d) - a2.mul_public(e)
        w = self.add_public(w, self.ring.neg(self.ring.mul(d, e)))
        self._check_sacrifice(self.open(w))
        self.store.push_triples(a, b, c, count)

    def _factory_matrix(self, m, kd, n):
        zk = self.store.zero_keys
        ring = self.ring
        a = zk.random_repl((m, kd))
        b = zk.random_repl((kd, n))
        a2 = zk.random_repl((m, kd))
        b2 = zk.random_repl((kd, n))

        def cross(x, y):
            return ring.add(ring.add(ring.matmul(x.a, y.a),
                                     ring.matmul(x.a, y.b)),
                            ring.matmul(x.b, y.a))

        raw = np.concatenate([cross(a, b).reshape((-1,) + ring.unit_shape),
                              cross(a2, b2).reshape((-1,) + ring.unit_shape)])
        shared = self._reshare(raw, "sacrifice")
        c = shared[:m * n].reshape((m, n))
        c2 = shared[m * n:].reshape((m, n))
        rho_int = int(Prg(self._joint_seed()).ring_uniform(self.ring, ()))
        rho = self._const(rho_int)
        d, e = self.open_many([a.mul_public(rho) - a2, b - b2])
        w = c.mul_public(rho) - c2 - b2.matmul_public(d, "left") \
            - a2.matmul_public(e, "right")
        w = self.add_public(w, ring.neg(ring.matmul(d, e)))
        self._check_sacrifice(self.open(w))
        self.store.push_matrix_triple(m, kd, n, (a, b, c))

    def _check_sacrifice(self, opened):
        flat = opened.reshape((-1,) + self.ring.unit_shape)
        if flat.size and not bool(np.all(self.ring.equal(
                flat, self.ring.zeros((flat.shape[0],))))):
            self._abort("sacrifice check failed: a triple is inconsistent")

    # ------------------------------------------- truncation and comparison

    def _masked_quotient(self, x, mag, shift, det):
        """Shares of floor((x + 2**mag) / 2**shift) for |x| < 2**mag.

        Probabilistic mode instead returns that floor plus a Bernoulli carry
        with probability (x mod 2**shift) / 2**shift, at no multiplication
        cost.
        """
        lbits = mag + 1
        n = self._lsize(x)
        flat = x.ravel()
        top, low, bits = self.store.pop_trunc(n, lbits, shift, det)
        masked = flat.add(top.mul_public(self._const(1 << shift))).add(low)
        masked = self.add_public_int(masked, 1 << mag)
        c = self.open(masked)
        c_ints = self._pub_ints(c)
        low_mask = (1 << shift) - 1
        c_top = self.ring.from_ints([ci >> shift for ci in c_ints])
        q = self.add_public(top.neg(), c_top)
        if det:
            u = self._bit_lt_public([ci & low_mask for ci in c_ints], bits)
            q = q.sub(u)
        return q.reshape(x.lshape)

    def trunc(self, x, mag, shift, mode=None):
        """floor(x / 2**shift) under |x| < 2**mag; stochastic rounding in
        probabilistic mode (round up with probability = discarded fraction)."""
        if not 0 < shift <= mag:
            raise UsageError("truncation shift out of range")
        det = (mode or self.trunc_mode) == "det"
        q = self._masked_quotient(x, mag, shift, det)
        return self.add_public_int(q, -(1 << (mag - shift)))

    def trunc_nearest(self, x, mag, shift):
        """Round x / 2**shift to nearest (half away from zero upward)."""
        return self.trunc(self.add_public_int(x, 1 << (shift - 1)),
                          mag + 1, shift, mode="det")

    def ltz(self, x, mag):
        """Share of [x < 0] for |x| < 2**mag.  Always deterministic."""
        q = self._masked_quotient(x, mag, mag, True)
        return self.add_public_int(q.neg(), 1)

    def eqz(self, x, mag):
        """Share of [x == 0] for |x| < 2**mag."""
        lbits = mag + 1
        n = self._lsize(x)
        flat = x.ravel()
        top, low, bits = self.store.pop_trunc(n, lbits, lbits, True)
        masked = flat.add(top.mul_public(self._const(1 << lbits))).add(low)
        masked = self.add_public_int(masked, 1 << mag)
        c = self.open(masked)
        mod = 1 << lbits
        t_ints = [(ci - (1 << mag)) % mod for ci in self._pub_ints(c)]
        # d_i = t_i xor r_i, local because t is public
        t_bits = self.ring.from_ints([[(t >> i) & 1 for i in range(lbits)]
                                      for t in t_ints])
        signs = self.ring.from_ints([[1 - 2 * ((t >> i) & 1)
                                      for i in range(lbits)] for t in t_ints])
        d = self.add_public(bits.mul_public(signs), t_bits)
        # z = prod(1 - d_i) by a pairwise tree
        z = self.add_public_int(d.neg(), 1)
        width = lbits
        while width > 1:
            half = width // 2
            left = z[:, 0:2 * half:2]
            right = z[:, 1:2 * half:2]
            prod = self.mul(left, right)
            if width % 2:
                z = type(z).concat([prod, z[:, 2 * half:]], axis=1)
            else:
                z = prod
            width = half + (width % 2)
        return z[:, 0].reshape(x.lshape)

    def _pub_ints(self, c):
        vals = self.ring.to_ints(c)
        return [int(v) for v in np.ravel(np.asarray(vals, dtype=object))]

    def _bit_lt_public(self, c_ints, rbits):
        """Share of [c < r] from public c and shared bits of r (batched).

        Computes the carry out of c + (2**m - 1 - r) + 1 with a combine tree
        over (propagate, generate) pairs; both products per level share one
        multiplication round.
        """
        n, m = rbits.lshape
        ring = self.ring
        a_bits = ring.from_ints([[(ci >> i) & 1 for i in range(m)]
                                 for ci in c_ints])
        b = self.add_public_int(rbits.neg(), 1)  # bits of the complement
        g = b.mul_public(a_bits)
        p = self.add_public(b.sub(g).sub(g), a_bits)
        # carry-in of 1 folds into the lowest position
        g0 = g[:, 0:1].add(p[:, 0:1])
        zero_col = self._shape_cls.zeros(ring, self.party,
                                         self.scheme.nparties, (n, 1))
        g = type(g).concat([g0, g[:, 1:]], axis=1)
        p = type(p).concat([zero_col, p[:, 1:]], axis=1)
        width = m
        while width > 1:
            half = width // 2
            p_lo, g_lo = p[:, 0:2 * half:2], g[:, 0:2 * half:2]
            p_hi, g_hi = p[:, 1:2 * half:2], g[:, 1:2 * half:2]
            pp, pg = self.mul_batch([p_hi, p_hi], [p_lo, g_lo])
            new_p, new_g = pp, g_hi.add(pg)
            if width % 2:
                new_p = type(p).concat([new_p, p[:, 2 * half:]], axis=1)
                new_g = type(g).concat([new_g, g[:, 2 * half:]], axis=1)
            p, g = new_p, new_g
            width = half + (width % 2)
        carry = g[:, 0]
        return self.add_public_int(carry.neg(), 1)

    # ------------------------------------------------------------ composed

    def select(self, b, x, y):
        """b ? x : y elementwise, for a shared bit b."""
        return y.add(self.mul(b, x.sub(y)))

    def clamp(self, x, lo, hi, mag):
        """Clamp between shared bounds; |all values| < 2**mag."""
        below = self.ltz(x.sub(lo), mag + 1)
        x = self.select(below, lo, x)
        above = self.ltz(hi.sub(x), mag + 1)
        return self.select(above, hi, x)

    def argmax(self, x, mag):
        """Index of the maximum along the last axis; ties pick the lowest
        index (the left element of every pairing wins a draw)."""
        lshape = x.lshape
        n = lshape[-1]
        if n < 1:
            raise UsageError("argmax needs a non-empty last axis")
        b = self._lsize_of(lshape[:-1])
        vals = x.reshape((b * n,))
        idx = self._shape_cls.zeros(self.ring, self.party,
                                    self.scheme.nparties, (b * n,))
        idx = self.add_public(idx,
                              self.ring.from_ints(list(range(n)) * b))

        def gather(share, cols, width):
            flat = (np.arange(b)[:, None] * width + cols[None, :]).ravel()
            return share.take(flat)

        while n > 1:
            half = n // 2
            even = np.arange(0, 2 * half, 2)
            l_v, r_v = gather(vals, even, n), gather(vals, even + 1, n)
            l_i, r_i = gather(idx, even, n), gather(idx, even + 1, n)
            smaller = self.ltz(l_v.sub(r_v), mag + 1)
            picked = self.select(type(smaller).concat([smaller, smaller]),
                                 type(r_v).concat([r_v, r_i]),
                                 type(l_v).concat([l_v, l_i]))
            new_v, new_i = picked[:b * half], picked[b * half:]
            if n % 2:
                tail = np.array([2 * half])
                new_v = type(vals).concat(
                    [new_v.reshape((b, half)),
                     gather(vals, tail, n).reshape((b, 1))], axis=1)
                new_i = type(idx).concat(
                    [new_i.reshape((b, half)),
                     gather(idx, tail, n).reshape((b, 1))], axis=1)
            vals = new_v.reshape((b * (half + n % 2),))
            idx = new_i.reshape((b * (half + n % 2),))
            n = half + (n % 2)
        return idx.reshape(lshape[:-1])

    def scale_public(self, x, numer_fp, mag):
        """floor(x * numer_fp / 2**f) for a public fixed-point factor."""
        f = self.ring.frac_bits
        t = x.mul_public(self._const(numer_fp))
        return self.trunc(t, mag + max(int(numer_fp).bit_length(), 1), f,
                          mode="det")

    def recip_fp(self, d, dmax_bits=6):
        """Fixed-point reciprocal of a shared integer d in [1, 2**dmax_bits].

        Returns shares of round(2**fw / d) up to the iteration's error, with
        fw = frac_bits + RECIP_GUARD.  Mirrors reference_recip_fp exactly.
        """
        f = self.ring.frac_bits
        fw = f + RECIP_GUARD
        n = self._lsize(d)
        flat = d.ravel()
        # magnitude selectors: which power-of-two interval holds d
        cuts = [self.add_public_int(flat, -(1 << (i + 1)))
                for i in range(dmax_bits)]
        below = self.ltz(type(flat).concat(cuts), dmax_bits + 2)
        ge = [self.add_public_int(below[i * n:(i + 1) * n].neg(), 1)
              for i in range(dmax_bits)]
        prev = self.const_share(1, (n,))
        pw = self._shape_cls.zeros(self.ring, self.party,
                                   self.scheme.nparties, (n,))
        for j in range(dmax_bits + 1):
            cur = ge[j] if j < dmax_bits else None
            ind = prev.sub(cur) if cur is not None else prev
            pw = pw.add(ind.mul_public(self._const(1 << (fw - j - 1))))
            if cur is not None:
                prev = cur
        dn = self.mul(flat, pw)
        w = self.add_public_int(dn.mul_public(self._const(-2)),
                                _fp(RECIP_INIT, fw))
        wmag = 2 * fw + 3
        for _ in range(recip_iters(fw)):
            m1 = self.trunc_nearest(self.mul(dn, w), wmag, fw)
            e = self.add_public_int(m1.neg(), 1 << fw)
            w = w.add(self.trunc_nearest(self.mul(w, e), wmag, fw))
        inv = self.trunc_nearest(self.mul(w, pw), wmag, fw)
        return inv.reshape(d.lshape)

    def div_secret(self, x, d, mag, dmax_bits=6):
        """x / d rounded to nearest, for shared x (|x| < 2**mag at scale f)
        and a shared integer divisor d in [1, 2**dmax_bits]."""
        inv = self.recip_fp(d, dmax_bits)
        if inv.lshape != x.lshape:
            inv = inv.broadcast_to(x.lshape)
        fw = self.ring.frac_bits + RECIP_GUARD
        prod = self.mul(x, inv)
        return self.trunc_nearest(prod, mag + fw + 1, fw)

    # ------------------------------------------------------------------ io

    def input_share(self, owner, values=None, shape=()):
        """Turn one party's (or an external client's) values into shares.

        Every compute party calls this with the same owner and shape; the
        owner (or the client, off-session) supplies the packed values.  The
        dealer's single-use masks make the broadcast difference c = x - r
        carry no information.
        """
        if isinstance(shape, int):
            shape = (shape,)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        mask = self.store.pop_mask(owner, n)
        if owner == self.role:
            if values is None:
                raise UsageError("this session owns %r and must supply values"
                                 % owner)
            plain = self.store.pop_mask_plain(owner, n)
            flat = values.reshape((n,) + self.ring.unit_shape)
            c = self.ring.sub(flat, plain)
            payload = self.ring.to_bytes(c)
            self.chan.step({p: (transport.INPUT, payload) for p in self.peers},
                           [])
        else:
            got = self.chan.step({}, [(owner, transport.INPUT)])
            c = self.ring.from_bytes(got[owner], n)
        return self.add_public(mask, c).reshape(shape)

    def reveal_to(self, owner, x):
        """Reconstruct x for one recipient only; everyone else learns nothing.

        With authenticated sharing this finishes the session: the responder
        hands over its MAC and key fragments so the recipient can verify,
        which burns the key for any later checked opens.
        """
        flat = x.ravel()
        n = self._lsize(x)
        ring = self.ring
        kind = self.scheme.kind
        if kind == "repl":
            if owner in self.scheme.roles:
                raise UsageError("3-party outputs go to external clients")
            if self.scheme.active:
                payload = ring.to_bytes(flat.a) + ring.to_bytes(flat.b)
            else:
                payload = ring.to_bytes(flat.a)
            self.chan.step({owner: (transport.OUTPUT, payload)}, [])
            return None
        self.mac_flush()
        if owner == self.role:
            got = self.chan.step({}, [(p, transport.OUTPUT)
                                      for p in self.peers])
            total = flat.data
            per = n * ring.elem_bytes
            mac_total = flat.mac if kind == "auth" else None
            alpha_total = self.store.alpha if kind == "auth" else None
            for p in self.peers:
                body = got[p]
                total = ring.add(total, ring.from_bytes(body[:per], n))
                if kind == "auth":
                    mac_total = ring.add(
                        mac_total, ring.from_bytes(body[per:2 * per], n))
                    alpha_total = ring.add(alpha_total, ring.from_bytes(
                        body[2 * per:], 1).reshape(ring.unit_shape))
            if kind == "auth":
                self._alpha_burned = True
                if not bool(np.all(ring.equal(
                        mac_total, ring.mul(alpha_total, total)))):
                    self._abort("output MAC check failed")
            return ring.reshape(total, x.lshape)
        payload = ring.to_bytes(flat.data)
        if kind == "auth":
            payload += ring.to_bytes(flat.mac) + ring.to_bytes(self.store.alpha)
            self._alpha_burned = True
        self.chan.step({owner: (transport.OUTPUT, payload)}, [])
        return None

    def counters(self):
        out = dict(self.chan.counters())
        out["triples"] = self.store.consumed.get(("triple",), 0)
        return out


# ------------------------------------------------------- client endpoints

def client_provide_input(chan, ring, feed, values):
    """External owner side of input_share: broadcast c = x - r to servers."""
    flat = values.reshape((-1,) + ring.unit_shape)
    n = flat.shape[0]
    plain = feed.pop(n)
    c = ring.sub(flat, plain)
    payload = ring.to_bytes(c)
    servers = ("s1", "s2", "s3")
    chan.step({s: (transport.INPUT, payload) for s in servers}, [])


def client_receive_output_pair(chan, ring, count, auth):
    """External recipient side of reveal_to, for the two-party schemes.

    Sums the parties' share payloads; with authenticated sharing also sums
    the MAC and key fragments and verifies before releasing the value.
    """
    parties = ("alice", "bob")
    got = chan.step({}, [(p, transport.OUTPUT) for p in parties])
    per = count * ring.elem_bytes
    total = mac = alpha = None
    for p in parties:
        body = got[p]
        val = ring.from_bytes(body[:per], count)
        total = val if total is None else ring.add(total, val)
        if auth:
            m = ring.from_bytes(body[per:2 * per], count)
            a = ring.from_bytes(body[2 * per:], 1).reshape(ring.unit_shape)
            mac = m if mac is None else ring.add(mac, m)
            alpha = a if alpha is None else ring.add(alpha, a)
    if auth and not bool(np.all(ring.equal(mac, ring.mul(alpha, total)))):
        raise ProtocolAbort("output MAC check failed")
    return total


def client_receive_output(chan, ring, count, active):
    """External recipient side of reveal_to, for replicated servers."""
    servers = ("s1", "s2", "s3")
    got = chan.step({}, [(s, transport.OUTPUT) for s in servers])
    per = count * ring.elem_bytes
    first = {}
    twins = {}
    for i, s in enumerate(servers):
        first[i] = ring.from_bytes(got[s][:per], count)
        if active:
            twins[(i + 1) % 3] = ring.from_bytes(got[s][per:], count)
    if active:
        for i in range(3):
            if not bool(np.all(ring.equal(first[i], twins[i]))):
                raise ProtocolAbort("output summand copies disagree")
    total = ring.add(first[0], first[1])
    return ring.add(total, first[2])


# ------------------------------------------------- plaintext mirror pieces

def _fp(value, frac_bits):
    return int(math.floor(value * (1 << frac_bits) + 0.5))


def reference_recip_fp(d: int, frac_bits: int) -> int:
    """Integer mirror of recip_fp: round(2**fw / d) up to iteration error."""
    fw = frac_bits + RECIP_GUARD
    j = d.bit_length() - 1
    pw = 1 << (fw - j - 1)
    dn = d * pw
    w = _fp(RECIP_INIT, fw) - 2 * dn

    def rnear(v):
        return (v + (1 << (fw - 1))) // (1 << fw)

    for _ in range(recip_iters(fw)):
        m1 = rnear(dn * w)
        e = (1 << fw) - m1
        w = w + rnear(w * e)
    return rnear(w * pw)


def reference_div_secret(x: int, d: int, frac_bits: int) -> int:
    """Integer mirror of div_secret for a scale-f value x and divisor d."""
    fw = frac_bits + RECIP_GUARD
    inv = reference_recip_fp(d, frac_bits)
    return (x * inv + (1 << (fw - 1))) // (1 << fw)
