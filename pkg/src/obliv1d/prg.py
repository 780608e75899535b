"""Counter-mode keyed byte generator and uniform sampling over rings.

One Prg instance is one independent stream: SHAKE-256(key || counter) expanded
in fixed-size blocks. Child streams are derived by hashing a label into the
key, so a session can hand out non-overlapping randomness to subsystems
without bookkeeping.

Sampling is exact: power-of-two bounds mask bits, everything else uses
rejection. No modulo-bias shortcuts anywhere; share arithmetic depends on
masks being uniform.
"""

import hashlib
import os

import numpy as np

_BLOCK = 1 << 13


class Prg:
    def __init__(self, key: bytes):
        if not isinstance(key, bytes) or len(key) == 0:
            raise ValueError("Prg key must be non-empty bytes")
        self._key = key
        self._ctr = 0
        self._buf = bytearray()

    @classmethod
    def from_seed(cls, seed, *labels) -> "Prg":
        if isinstance(seed, int):
            seed = seed.to_bytes(16, "little", signed=True)
        prg = cls(hashlib.sha256(b"obliv1d-seed|" + seed).digest())
        for lab in labels:
            prg = prg.child(lab)
        return prg

    @classmethod
    def from_os(cls) -> "Prg":
        return cls(os.urandom(32))

    def child(self, label) -> "Prg":
        if isinstance(label, str):
            label = label.encode()
        elif isinstance(label, int):
            label = label.to_bytes(8, "little")
        return Prg(hashlib.sha256(self._key + b"|child|" + label).digest())

    def take(self, n: int) -> bytes:
        while len(self._buf) < n:
            h = hashlib.shake_256(self._key + self._ctr.to_bytes(8, "little"))
            self._buf.extend(h.digest(_BLOCK))
            self._ctr += 1
        out = bytes(self._buf[:n])
        del self._buf[:n]
        return out

    def nonce(self) -> bytes:
        return self.take(32)

    # ------------------------------------------------------------- sampling

    def u64(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<u8").copy()

    def below_u64(self, bound: int, count: int) -> np.ndarray:
        """Uniform uint64 draws in [0, bound), bound <= 2**64."""
        if not (1 <= bound <= 1 << 64):
            raise ValueError("bound out of range")
        if bound & (bound - 1) == 0:  # power of two
            out = self.u64(count)
            if bound < 1 << 64:
                out &= np.uint64(bound - 1)
            return out
        limit = ((1 << 64) // bound) * bound
        out = self.u64(count)
        if limit < 1 << 64:
            bad = out >= np.uint64(limit)
            while bad.any():
                out[bad] = self.u64(int(bad.sum()))
                bad = out >= np.uint64(limit)
        return out % np.uint64(bound)

    def below128(self, bound: int, count: int) -> np.ndarray:
        """Uniform draws in [0, bound) as (count, 2) uint64 limb pairs."""
        if bound <= 1 << 64:
            lo = self.below_u64(bound, count)
            return np.stack([lo, np.zeros(count, dtype=np.uint64)], axis=-1)
        if bound > 1 << 127:
            raise ValueError("bound too large")
        nbits = (bound - 1).bit_length()
        b_lo = np.uint64(bound & 0xFFFFFFFFFFFFFFFF)
        b_hi = np.uint64(bound >> 64)
        hi_mask = np.uint64((1 << (nbits - 64)) - 1)
        lo = self.u64(count)
        hi = self.u64(count) & hi_mask
        bad = (hi > b_hi) | ((hi == b_hi) & (lo >= b_lo))
        while bad.any():
            n_bad = int(bad.sum())
            lo[bad] = self.u64(n_bad)
            hi[bad] = self.u64(n_bad) & hi_mask
            bad = (hi > b_hi) | ((hi == b_hi) & (lo >= b_lo))
        return np.stack([lo, hi], axis=-1)

    def ring_uniform(self, desc, shape):
        """Packed array of independent uniform ring elements."""
        if isinstance(shape, int):
            shape = (shape,)
        n = 1
        for s in shape:
            n *= int(s)
        if desc.kind == "prime":
            flat = self.below_u64(desc.modulus, n)
        else:
            flat = self.below128(desc.modulus, n)
        return desc.reshape(flat, shape)

    def bits(self, count: int) -> np.ndarray:
        """Uniform {0,1} uint64 array."""
        return self.u64(count) & np.uint64(1)
