"""Ring descriptors and packed array arithmetic.

Two element domains:

  prime   Z_p for a prime p, either p <= 2**32 or within 2**32 of 2**64
          (the complement-fold regimes the kernels reduce fast). Elements are
          single uint64 words, arrays keep their logical shape.
  mod2k   Z_(2**k) for 2 <= k <= 127. Elements are (lo, hi) uint64 pairs in a
          trailing axis of size 2; the top 128-k bits of hi are always zero.

All protocol layers above this one hold values as these packed numpy arrays
and only touch leading axes, so slicing and indexing behave identically for
both layouts. Conversions to python ints happen at the boundaries (I/O,
reveal, tests).

Fixed point: encode(v) = round(v * 2**f) as a ring residue, ties rounded
toward minus infinity to match the quantizer's tie rule. signed_lift maps a
residue to the centered representative in [-q/2, q/2).
"""

from dataclasses import dataclass
from fractions import Fraction
import math

import numpy as np

from . import _kernels
from .errors import RingMismatchError, UsageError

PRIME64_DEFAULT = (1 << 64) - 59  # largest 64-bit prime

_MR_WITNESSES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_prime_u64(n: int) -> bool:
    """Deterministic Miller-Rabin, exact for everything below 2**64."""
    if n < 2:
        return False
    for small in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        if n % small == 0:
            return n == small
    d = n - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in _MR_WITNESSES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


@dataclass(frozen=True)
class RingDescriptor:
    """Carrier ring plus the fixed-point and masking parameters bound to it.

    value_bits (l) bounds the magnitude of any plaintext the comparison and
    truncation protocols may see; stat_sec (kappa) is the statistical masking
    allowance. Their sum may not exceed the ring's bit length.
    """

    kind: str            # "prime" | "mod2k"
    modulus: int         # p, or 2**k
    frac_bits: int
    value_bits: int
    stat_sec: int

    def __post_init__(self):
        if self.kind == "prime":
            p = self.modulus
            if not is_prime_u64(p):
                raise UsageError("modulus %d is not prime" % p)
            if p > (1 << 32) and (1 << 64) - p >= (1 << 32):
                raise UsageError(
                    "prime %d unsupported: need p <= 2^32 or 2^64 - p < 2^32" % p)
        elif self.kind == "mod2k":
            k = self.k
            if not (2 <= k <= 127) or self.modulus != 1 << k:
                raise UsageError("mod2k modulus must be 2**k with 2 <= k <= 127")
        else:
            raise UsageError("unknown ring kind %r" % self.kind)
        if not (0 <= self.frac_bits < self.value_bits):
            raise UsageError("need 0 <= frac_bits < value_bits")
        if self.value_bits + self.stat_sec > self.bits:
            raise UsageError("value_bits + stat_sec exceeds ring bit length")

    # ------------------------------------------------------------- geometry

    @property
    def bits(self) -> int:
        return self.modulus.bit_length() - (1 if self.kind == "mod2k" else 0)

    @property
    def k(self) -> int:
        return self.modulus.bit_length() - 1

    @property
    def limbs(self) -> int:
        return 1 if self.kind == "prime" else 2

    @property
    def elem_bytes(self) -> int:
        return 8 * self.limbs

    @property
    def unit_shape(self):
        return () if self.kind == "prime" else (2,)

    def lshape(self, arr) -> tuple:
        """Logical shape of a packed array (limb axis stripped)."""
        return arr.shape if self.kind == "prime" else arr.shape[:-1]

    def lsize(self, arr) -> int:
        return int(np.prod(self.lshape(arr), dtype=np.int64)) if self.lshape(arr) else 1

    def reshape(self, arr, shape):
        shape = tuple(int(s) for s in shape)
        return arr.reshape(shape + self.unit_shape)

    # ---------------------------------------------------------- conversions

    def zeros(self, shape=()):
        if isinstance(shape, int):
            shape = (shape,)
        return np.zeros(tuple(shape) + self.unit_shape, dtype=np.uint64)

    def from_int(self, v: int):
        return self.from_ints([v]).reshape(self.unit_shape)

    def from_ints(self, values):
        """Packed array from an iterable of python ints (any sign)."""
        vals = np.asarray(values, dtype=object).ravel()
        shape = np.asarray(values, dtype=object).shape
        out = self.zeros((vals.size,))
        q = self.modulus
        flat = out.reshape((vals.size,) + self.unit_shape)
        for i, v in enumerate(vals):
            r = int(v) % q
            if self.kind == "prime":
                flat[i] = r
            else:
                flat[i, 0] = r & 0xFFFFFFFFFFFFFFFF
                flat[i, 1] = r >> 64
        return self.reshape(out, shape)

    def to_ints(self, arr):
        """Python-int residues, same logical shape as the input (nested lists)."""
        if self.kind == "prime":
            return arr.tolist()
        lo = np.asarray(arr[..., 0], dtype=object)
        hi = np.asarray(arr[..., 1], dtype=object)
        out = lo + (hi * (1 << 64))
        # a 0-d operand decays to a bare python int
        return out.tolist() if isinstance(out, np.ndarray) else int(out)

    def to_int(self, arr) -> int:
        if self.lshape(arr) != ():
            raise UsageError("to_int expects a scalar element")
        if self.kind == "prime":
            return int(arr)
        return int(arr[0]) + (int(arr[1]) << 64)

    def signed_int(self, v: int) -> int:
        v %= self.modulus
        return v if v < self.modulus - self.modulus // 2 else v - self.modulus

    def signed(self, arr):
        """Object array of signed lifts (exact, any magnitude)."""
        flat = np.asarray(self.to_ints(arr), dtype=object).ravel()
        out = np.array([self.signed_int(int(v)) for v in flat], dtype=object)
        return out.reshape(self.lshape(arr))

    def signed64(self, arr):
        """int64 signed lifts; raises if any value does not fit."""
        lifted = self.signed(arr)
        for v in np.ravel(lifted).tolist():
            if not (-(1 << 63) <= int(v) < (1 << 63)):
                raise UsageError("signed value does not fit in int64")
        return np.asarray(lifted.tolist(), dtype=np.int64).reshape(self.lshape(arr))

    # ------------------------------------------------------------ fix point

    def fp_encode(self, value) -> int:
        """round(value * 2**f) as a residue; ties go toward minus infinity."""
        t = Fraction(value) * (1 << self.frac_bits)
        n = math.ceil(t - Fraction(1, 2))
        return n % self.modulus

    def fp_decode(self, residue: int) -> Fraction:
        return Fraction(self.signed_int(residue), 1 << self.frac_bits)

    # ----------------------------------------------------------- arithmetic

    def _binary(self, op_prime, op_k, a, b):
        la, lb = self.lshape(a), self.lshape(b)
        ls = np.broadcast_shapes(la, lb)
        full = ls + self.unit_shape
        a = np.ascontiguousarray(np.broadcast_to(a, full))
        b = np.ascontiguousarray(np.broadcast_to(b, full))
        n = int(np.prod(ls, dtype=np.int64)) if ls else 1
        kern = _kernels.active()
        if self.kind == "prime":
            out = getattr(kern, op_prime)(a.reshape(n), b.reshape(n),
                                          np.uint64(self.modulus))
        else:
            out = getattr(kern, op_k)(a.reshape(n, 2), b.reshape(n, 2), self.k)
        return out.reshape(full)

    def add(self, a, b):
        return self._binary("p_add", "k_add", a, b)

    def sub(self, a, b):
        return self._binary("p_sub", "k_sub", a, b)

    def mul(self, a, b):
        op = "p_mul_small" if self.modulus <= 1 << 32 else "p_mul_large"
        return self._binary(op, "k_mul", a, b)

    def neg(self, a):
        ls = self.lshape(a)
        n = int(np.prod(ls, dtype=np.int64)) if ls else 1
        kern = _kernels.active()
        a = np.ascontiguousarray(a)
        if self.kind == "prime":
            out = kern.p_neg(a.reshape(n), np.uint64(self.modulus))
        else:
            out = kern.k_neg(a.reshape(n, 2), self.k)
        return out.reshape(ls + self.unit_shape)

    def mul_const(self, a, c: int):
        return self.mul(a, self.from_int(c))

    def matmul(self, a, b):
        if len(self.lshape(a)) != 2 or len(self.lshape(b)) != 2:
            raise UsageError("matmul expects 2-D logical operands")
        kern = _kernels.active()
        a = np.ascontiguousarray(a)
        b = np.ascontiguousarray(b)
        if self.kind == "prime":
            op = "p_matmul_small" if self.modulus <= 1 << 32 else "p_matmul_large"
            return getattr(kern, op)(a, b, np.uint64(self.modulus))
        return kern.k_matmul(a, b, self.k)

    def sum(self, a, axis=0):
        """Modular reduction along one logical axis, by pairwise folding."""
        ls = self.lshape(a)
        axis = axis % len(ls)
        arr = np.moveaxis(a, axis, 0)
        if arr.shape[0] == 0:
            return self.zeros(ls[:axis] + ls[axis + 1:])
        while arr.shape[0] > 1:
            half = arr.shape[0] // 2
            folded = self.add(arr[:half], arr[half:2 * half])
            if arr.shape[0] % 2:
                folded = np.concatenate([folded, arr[2 * half:]], axis=0)
            arr = folded
        return arr[0]

    def equal(self, a, b):
        """Elementwise equality as a bool array over the logical shape."""
        if self.kind == "prime":
            return np.asarray(a == b)
        return np.asarray((a == b).all(axis=-1))

    # -------------------------------------------------------- serialization

    def to_bytes(self, arr) -> bytes:
        return np.ascontiguousarray(arr, dtype="<u8").tobytes()

    def from_bytes(self, data: bytes, count=None):
        words = np.frombuffer(data, dtype="<u8")
        if count is None:
            count = words.size // self.limbs
        if words.size != count * self.limbs:
            raise UsageError("serialized length does not match element count")
        arr = words.reshape((count,) + self.unit_shape).copy()
        self._check_range(arr)
        return arr

    def _check_range(self, arr):
        if self.kind == "prime":
            if arr.size and int(arr.max()) >= self.modulus:
                raise UsageError("element out of range for prime modulus")
        else:
            if self.k >= 64:
                limit = np.uint64((1 << (self.k - 64)))
                if arr.size and int(arr[..., 1].max()) >= int(limit):
                    raise UsageError("element out of range for mod2k modulus")
            else:
                if arr.size and (int(arr[..., 1].max()) > 0
                                 or int(arr[..., 0].max()) >= self.modulus):
                    raise UsageError("element out of range for mod2k modulus")

    # ------------------------------------------------------------- identity

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "modulus": self.modulus,
            "frac_bits": self.frac_bits,
            "value_bits": self.value_bits,
            "stat_sec": self.stat_sec,
        }

    def tag(self) -> str:
        if self.kind == "prime":
            core = "prime:%x" % self.modulus
        else:
            core = "mod2k:%d" % self.k
        return "%s/f%d/l%d/s%d" % (core, self.frac_bits, self.value_bits, self.stat_sec)


def prime64(p: int = PRIME64_DEFAULT, frac_bits=16, value_bits=32, stat_sec=30):
    return RingDescriptor("prime", p, frac_bits, value_bits, stat_sec)


def mod2k(k: int = 72, frac_bits=16, value_bits=32, stat_sec=40):
    return RingDescriptor("mod2k", 1 << k, frac_bits, value_bits, stat_sec)


def from_describe(d: dict) -> RingDescriptor:
    return RingDescriptor(d["kind"], int(d["modulus"]), int(d["frac_bits"]),
                          int(d["value_bits"]), int(d["stat_sec"]))


def ring_by_name(name):
    """Descriptor for a ring named on a command line: prime64, mod2k,
    or mod2k:<k> for a non-default width."""
    if isinstance(name, RingDescriptor):
        return name
    if name == "prime64":
        return prime64()
    if name == "mod2k":
        return mod2k()
    if name.startswith("mod2k:"):
        return mod2k(int(name.split(":", 1)[1]))
    raise UsageError("unknown ring %r (try prime64, mod2k, mod2k:<k>)" % name)


class RingElement:
    """Scalar convenience wrapper; protocol code works on packed arrays."""

    __slots__ = ("value", "ring")

    def __init__(self, value: int, ring: RingDescriptor):
        self.value = int(value) % ring.modulus
        self.ring = ring

    @classmethod
    def encode_real(cls, value, ring: RingDescriptor):
        return cls(ring.fp_encode(value), ring)

    def _coerce(self, other):
        if isinstance(other, RingElement):
            if other.ring != self.ring:
                raise RingMismatchError("operands from different rings")
            return other.value
        return int(other) % self.ring.modulus

    def __add__(self, other):
        return RingElement(self.value + self._coerce(other), self.ring)

    def __sub__(self, other):
        return RingElement(self.value - self._coerce(other), self.ring)

    def __mul__(self, other):
        return RingElement(self.value * self._coerce(other), self.ring)

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        return RingElement(-self.value, self.ring)

    def __eq__(self, other):
        return (isinstance(other, RingElement) and other.ring == self.ring
                and other.value == self.value)

    def __hash__(self):
        return hash((self.value, self.ring.tag()))

    def __repr__(self):
        return "RingElement(%d, %s)" % (self.value, self.ring.tag())

    def signed(self) -> int:
        return self.ring.signed_int(self.value)

    def decode(self) -> Fraction:
        return self.ring.fp_decode(self.value)

    def to_bytes(self) -> bytes:
        return self.value.to_bytes(self.ring.elem_bytes, "little")

    @classmethod
    def from_bytes(cls, data: bytes, ring: RingDescriptor):
        if len(data) != ring.elem_bytes:
            raise UsageError("wrong element size")
        v = int.from_bytes(data, "little")
        if v >= ring.modulus:
            raise UsageError("element out of range")
        return cls(v, ring)
