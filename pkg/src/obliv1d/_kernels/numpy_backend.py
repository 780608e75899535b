"""Vectorised modular arithmetic on uint64 arrays, pure numpy.

This is the fallback lane; numba_backend mirrors every function with jitted
loops. Both lanes implement the same contracts on the same layouts:

  prime ring   value < p, one uint64 per element, any shape
  mod-2^k ring one (lo, hi) uint64 pair per element, trailing axis of size 2,
               top 128-k bits of hi always zero

Products of two 64-bit words are formed by 32-bit limb splitting. Large primes
are reduced by complement folding: with c = 2**64 - p, we have
H*2**64 + L == H*c + L (mod p), and two folds plus one conditional subtract
land in [0, p) whenever c < 2**32.
"""

import numpy as np

_U64 = np.uint64
_MASK32 = _U64(0xFFFFFFFF)
_SH32 = _U64(32)


def _mul128(a, b):
    """Full 128-bit products of two uint64 arrays, returned as (hi, lo)."""
    a_lo = a & _MASK32
    a_hi = a >> _SH32
    b_lo = b & _MASK32
    b_hi = b >> _SH32
    ll = a_lo * b_lo
    lh = a_lo * b_hi
    hl = a_hi * b_lo
    hh = a_hi * b_hi
    t = (ll >> _SH32) + (lh & _MASK32) + (hl & _MASK32)
    lo = (ll & _MASK32) | ((t & _MASK32) << _SH32)
    hi = hh + (lh >> _SH32) + (hl >> _SH32) + (t >> _SH32)
    return hi, lo


# ---------------------------------------------------------------- prime ring

def _comp(p):
    # 2**64 - p computed in python ints so numpy never sees the wrap
    return _U64(((1 << 64) - int(p)) & 0xFFFFFFFFFFFFFFFF)


def p_add(a, b, p):
    p = _U64(p)
    c = _comp(p)
    s = a + b
    s = s + np.where(s < a, c, _U64(0))
    return np.where(s >= p, s - p, s)


def p_sub(a, b, p):
    c = _comp(p)
    d = a - b
    return np.where(a >= b, d, d - c)


def p_neg(a, p):
    p = _U64(p)
    return np.where(a == _U64(0), _U64(0), p - a)


def _reduce128(hi, lo, p):
    # valid only for c = 2**64 - p < 2**32
    c = _comp(p)
    p = _U64(p)
    h1, l1 = _mul128(hi, c)
    s = l1 + lo
    h1 = h1 + np.where(s < l1, _U64(1), _U64(0))
    t = h1 * c  # h1 <= 2**32 so no overflow
    s2 = t + s
    cy = np.where(s2 < t, c, _U64(0))
    s3 = s2 + cy
    s3 = s3 + np.where(s3 < s2, c, _U64(0))
    return np.where(s3 >= p, s3 - p, s3)


def p_mul_small(a, b, p):
    # p <= 2**32: the raw product fits a uint64
    return (a * b) % _U64(p)


def p_mul_large(a, b, p):
    hi, lo = _mul128(a, b)
    return _reduce128(hi, lo, p)


def p_matmul_small(a, b, p):
    p64 = _U64(p)
    n, k = a.shape
    k2, m = b.shape
    acc = np.zeros((n, m), dtype=np.uint64)
    for i in range(k):
        acc += (a[:, i, None] * b[None, i, :]) % p64
        if (i + 1) % 1024 == 0:
            acc %= p64
    return acc % p64


def p_matmul_large(a, b, p):
    n, k = a.shape
    _, m = b.shape
    acc = np.zeros((n, m), dtype=np.uint64)
    for i in range(k):
        term = p_mul_large(np.ascontiguousarray(np.broadcast_to(a[:, i, None], (n, m))),
                           np.ascontiguousarray(np.broadcast_to(b[None, i, :], (n, m))), p)
        acc = p_add(acc, term, p)
    return acc


# --------------------------------------------------------------- mod2k ring

def _split(a):
    return a[..., 0], a[..., 1]


def _join(lo, hi):
    return np.stack([lo, hi], axis=-1)


def k_add(a, b, k):
    a_lo, a_hi = _split(a)
    b_lo, b_hi = _split(b)
    if k <= 64:
        mask = _U64((1 << k) - 1 if k < 64 else 0xFFFFFFFFFFFFFFFF)
        return _join((a_lo + b_lo) & mask, a_hi)
    mask_hi = _U64((1 << (k - 64)) - 1)
    lo = a_lo + b_lo
    cy = np.where(lo < a_lo, _U64(1), _U64(0))
    return _join(lo, (a_hi + b_hi + cy) & mask_hi)


def k_sub(a, b, k):
    a_lo, a_hi = _split(a)
    b_lo, b_hi = _split(b)
    if k <= 64:
        mask = _U64((1 << k) - 1 if k < 64 else 0xFFFFFFFFFFFFFFFF)
        return _join((a_lo - b_lo) & mask, a_hi)
    mask_hi = _U64((1 << (k - 64)) - 1)
    lo = a_lo - b_lo
    bw = np.where(a_lo < b_lo, _U64(1), _U64(0))
    return _join(lo, (a_hi - b_hi - bw) & mask_hi)


def k_neg(a, k):
    z = np.zeros_like(a)
    return k_sub(z, a, k)


def k_mul(a, b, k):
    a_lo, a_hi = _split(a)
    b_lo, b_hi = _split(b)
    if k <= 64:
        mask = _U64((1 << k) - 1 if k < 64 else 0xFFFFFFFFFFFFFFFF)
        return _join((a_lo * b_lo) & mask, a_hi)
    mask_hi = _U64((1 << (k - 64)) - 1)
    hi, lo = _mul128(a_lo, b_lo)
    hi = (hi + a_lo * b_hi + a_hi * b_lo) & mask_hi
    return _join(lo, hi)


def k_matmul(a, b, k):
    n, kk, _ = a.shape
    _, m, _ = b.shape
    acc = np.zeros((n, m, 2), dtype=np.uint64)
    for i in range(kk):
        aa = np.ascontiguousarray(np.broadcast_to(a[:, i, None, :], (n, m, 2)))
        bb = np.ascontiguousarray(np.broadcast_to(b[None, i, :, :], (n, m, 2)))
        acc = k_add(acc, k_mul(aa, bb, k), k)
    return acc
