"""Jitted mirror of numpy_backend. Same functions, same layouts.

Elementwise kernels expect flat contiguous uint64 arrays (mod2k: shape (n, 2)),
matmuls expect 2-D (prime) or 3-D with trailing limb axis (mod2k). All locals
stay uint64; numba promotes mixed int64/uint64 arithmetic to float64, which
would silently destroy exactness, so every constant is cast up front.
"""

import numpy as np
from numba import njit

_ONE = np.uint64(1)
_ZERO = np.uint64(0)
_MASK32 = np.uint64(0xFFFFFFFF)
_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_SH32 = np.uint64(32)


@njit(cache=True, inline="always")
def _mulhi(a, b):
    a_lo = a & _MASK32
    a_hi = a >> _SH32
    b_lo = b & _MASK32
    b_hi = b >> _SH32
    ll = a_lo * b_lo
    lh = a_lo * b_hi
    hl = a_hi * b_lo
    hh = a_hi * b_hi
    t = (ll >> _SH32) + (lh & _MASK32) + (hl & _MASK32)
    return hh + (lh >> _SH32) + (hl >> _SH32) + (t >> _SH32)


@njit(cache=True, inline="always")
def _mulmod_large(a, b, p, c):
    hi = _mulhi(a, b)
    lo = a * b
    h1 = _mulhi(hi, c)
    l1 = hi * c
    s = l1 + lo
    if s < l1:
        h1 += _ONE
    t = h1 * c
    s2 = t + s
    if s2 < t:
        s2 += c
        if s2 < c:
            s2 += c
    if s2 >= p:
        s2 -= p
    return s2


@njit(cache=True)
def p_add(a, b, p):
    c = _ZERO - p
    out = np.empty_like(a)
    for i in range(a.size):
        s = a[i] + b[i]
        if s < a[i]:
            s += c
        if s >= p:
            s -= p
        out[i] = s
    return out


@njit(cache=True)
def p_sub(a, b, p):
    c = _ZERO - p
    out = np.empty_like(a)
    for i in range(a.size):
        if a[i] >= b[i]:
            out[i] = a[i] - b[i]
        else:
            out[i] = (a[i] - b[i]) - c
    return out


@njit(cache=True)
def p_neg(a, p):
    out = np.empty_like(a)
    for i in range(a.size):
        if a[i] == _ZERO:
            out[i] = _ZERO
        else:
            out[i] = p - a[i]
    return out


@njit(cache=True)
def p_mul_small(a, b, p):
    out = np.empty_like(a)
    for i in range(a.size):
        out[i] = (a[i] * b[i]) % p
    return out


@njit(cache=True)
def p_mul_large(a, b, p):
    c = _ZERO - p
    out = np.empty_like(a)
    for i in range(a.size):
        out[i] = _mulmod_large(a[i], b[i], p, c)
    return out


@njit(cache=True)
def p_matmul_small(a, b, p):
    n, k = a.shape
    m = b.shape[1]
    out = np.empty((n, m), dtype=np.uint64)
    for i in range(n):
        for j in range(m):
            acc = _ZERO
            for t in range(k):
                acc += (a[i, t] * b[t, j]) % p
                if acc >= np.uint64(0x8000000000000000):
                    acc %= p
            out[i, j] = acc % p
    return out


@njit(cache=True)
def p_matmul_large(a, b, p):
    c = _ZERO - p
    n, k = a.shape
    m = b.shape[1]
    out = np.empty((n, m), dtype=np.uint64)
    for i in range(n):
        for j in range(m):
            acc = _ZERO
            for t in range(k):
                v = _mulmod_large(a[i, t], b[t, j], p, c)
                acc += v
                if acc < v:
                    acc += c
                if acc >= p:
                    acc -= p
            out[i, j] = acc
    return out


@njit(cache=True, inline="always")
def _himask(k):
    return (_ONE << np.uint64(k - 64)) - _ONE


@njit(cache=True, inline="always")
def _lomask(k):
    if k >= 64:
        return _MASK64
    return (_ONE << np.uint64(k)) - _ONE


@njit(cache=True)
def k_add(a, b, k):
    out = np.empty_like(a)
    if k <= 64:
        mask = _lomask(k)
        for i in range(a.shape[0]):
            out[i, 0] = (a[i, 0] + b[i, 0]) & mask
            out[i, 1] = _ZERO
    else:
        mask = _himask(k)
        for i in range(a.shape[0]):
            lo = a[i, 0] + b[i, 0]
            hi = a[i, 1] + b[i, 1]
            if lo < a[i, 0]:
                hi += _ONE
            out[i, 0] = lo
            out[i, 1] = hi & mask
    return out


@njit(cache=True)
def k_sub(a, b, k):
    out = np.empty_like(a)
    if k <= 64:
        mask = _lomask(k)
        for i in range(a.shape[0]):
            out[i, 0] = (a[i, 0] - b[i, 0]) & mask
            out[i, 1] = _ZERO
    else:
        mask = _himask(k)
        for i in range(a.shape[0]):
            lo = a[i, 0] - b[i, 0]
            hi = a[i, 1] - b[i, 1]
            if a[i, 0] < b[i, 0]:
                hi -= _ONE
            out[i, 0] = lo
            out[i, 1] = hi & mask
    return out


@njit(cache=True)
def k_neg(a, k):
    z = np.zeros_like(a)
    return k_sub(z, a, k)


@njit(cache=True, inline="always")
def _kmul_one(alo, ahi, blo, bhi, k):
    if k <= 64:
        return (alo * blo) & _lomask(k), _ZERO
    hi = _mulhi(alo, blo) + alo * bhi + ahi * blo
    return alo * blo, hi & _himask(k)


@njit(cache=True)
def k_mul(a, b, k):
    out = np.empty_like(a)
    for i in range(a.shape[0]):
        lo, hi = _kmul_one(a[i, 0], a[i, 1], b[i, 0], b[i, 1], k)
        out[i, 0] = lo
        out[i, 1] = hi
    return out


@njit(cache=True)
def k_matmul(a, b, k):
    n, kk = a.shape[0], a.shape[1]
    m = b.shape[1]
    out = np.empty((n, m, 2), dtype=np.uint64)
    if k <= 64:
        mask = _lomask(k)
        for i in range(n):
            for j in range(m):
                acc = _ZERO
                for t in range(kk):
                    acc = (acc + a[i, t, 0] * b[t, j, 0]) & mask
                out[i, j, 0] = acc
                out[i, j, 1] = _ZERO
    else:
        mask = _himask(k)
        for i in range(n):
            for j in range(m):
                acc_lo = _ZERO
                acc_hi = _ZERO
                for t in range(kk):
                    lo, hi = _kmul_one(a[i, t, 0], a[i, t, 1], b[t, j, 0], b[t, j, 1], k)
                    s = acc_lo + lo
                    acc_hi += hi
                    if s < acc_lo:
                        acc_hi += _ONE
                    acc_lo = s
                out[i, j, 0] = acc_lo
                out[i, j, 1] = acc_hi & mask
    return out
