"""Secret sharing roundtrips, linearity, and consistency checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obliv1d.prg import Prg
from obliv1d.sharing import (ProtocolAbort, UsageError, ZeroShareKeys,
                             gen_alpha, reconstruct_additive,
                             reconstruct_auth, reconstruct_replicated,
                             scheme_info, share_additive, share_auth,
                             share_class, share_replicated)

from conftest import ALL_SCHEMES, make_ring

ints = st.integers(min_value=-(1 << 47), max_value=1 << 47)


def test_scheme_registry():
    for name in ALL_SCHEMES:
        info = scheme_info(name)
        assert info.name == name
        assert info.nparties in (2, 3)
        assert len(info.roles) == info.nparties
        assert info.active == name.startswith("active")
    assert scheme_info("semi-2pc").kind == "additive"
    assert scheme_info("active-2pc").kind == "auth"
    assert scheme_info("semi-3pc").kind == "repl"
    assert scheme_info("active-3pc").kind == "repl"
    with pytest.raises(UsageError):
        scheme_info("semi-4pc")
    assert share_class(scheme_info("active-2pc")).__name__ == "AuthShare"


@settings(max_examples=40)
@given(st.sampled_from(["prime64", "mod2k"]),
       st.lists(ints, min_size=1, max_size=6), st.integers(0, 1 << 30))
def test_additive_roundtrip(rname, xs, seed):
    ring = make_ring(rname)
    vals = ring.from_ints(xs)
    shares = share_additive(Prg.from_seed(seed), ring, vals, 2)
    assert np.array_equal(reconstruct_additive(shares), vals)
    # singleton fragments do not leak the value trivially
    assert not np.array_equal(shares[0].data, vals) or all(x == 0 for x in xs)


@settings(max_examples=40)
@given(st.sampled_from(["prime64", "mod2k"]),
       st.lists(ints, min_size=1, max_size=6), st.integers(0, 1 << 30))
def test_replicated_roundtrip(rname, xs, seed):
    ring = make_ring(rname)
    vals = ring.from_ints(xs)
    shares = share_replicated(Prg.from_seed(seed), ring, vals)
    assert np.array_equal(reconstruct_replicated(shares), vals)
    # each party's second component is the next party's first
    for i in range(3):
        assert np.array_equal(shares[i].b, shares[(i + 1) % 3].a)


def test_replicated_consistency_check_trips():
    ring = make_ring("prime64")
    shares = share_replicated(Prg.from_seed(1), ring, ring.from_ints([5]))
    shares[0].b = ring.add(shares[0].b, ring.from_ints([1]))
    with pytest.raises(ProtocolAbort):
        reconstruct_replicated(shares, check=True)
    # without the check the sum still comes out of the a components
    assert reconstruct_replicated(shares, check=False) is not None


@settings(max_examples=30, deadline=None)
@given(st.lists(ints, min_size=1, max_size=5), st.integers(0, 1 << 30))
def test_auth_roundtrip_and_mac(xs, seed):
    ring = make_ring("prime64")
    prg = Prg.from_seed(seed)
    alpha = gen_alpha(prg, ring, 2)
    vals = ring.from_ints(xs)
    shares = share_auth(prg, ring, vals, alpha)
    assert np.array_equal(reconstruct_auth(shares, alpha), vals)


def test_auth_mac_catches_tamper():
    ring = make_ring("prime64")
    prg = Prg.from_seed(3)
    alpha = gen_alpha(prg, ring, 2)
    shares = share_auth(prg, ring, ring.from_ints([42]), alpha)
    shares[1].data = ring.add(shares[1].data, ring.from_ints([1]))
    with pytest.raises(ProtocolAbort):
        reconstruct_auth(shares, alpha)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(ALL_SCHEMES), st.lists(ints, min_size=2, max_size=4),
       st.integers(0, 1 << 30))
def test_share_linearity(scheme, xs, seed):
    """share(x) + share(y) reconstructs to x + y, for every scheme's type."""
    info = scheme_info(scheme)
    ring = make_ring("prime64")
    prg = Prg.from_seed(seed)
    n = len(xs) // 2
    a, b = ring.from_ints(xs[:n]), ring.from_ints(xs[n:2 * n])
    if info.kind == "additive":
        sa = share_additive(prg, ring, a, info.nparties)
        sb = share_additive(prg, ring, b, info.nparties)
        rec = reconstruct_additive
    elif info.kind == "auth":
        alpha = gen_alpha(prg, ring, info.nparties)
        sa = share_auth(prg, ring, a, alpha)
        sb = share_auth(prg, ring, b, alpha)
        rec = lambda s: reconstruct_auth(s, alpha)  # noqa: E731
    else:
        sa = share_replicated(prg, ring, a)
        sb = share_replicated(prg, ring, b)
        rec = reconstruct_replicated
    summed = [x + y for x, y in zip(sa, sb)]
    assert np.array_equal(rec(summed), ring.add(a, b))
    three = ring.from_ints([3])
    scaled = [x.mul_public(three) for x in sa]
    assert np.array_equal(rec(scaled), ring.mul_const(a, 3))


def test_zero_share_keys_cancel():
    ring = make_ring("prime64")
    keys = ZeroShareKeys.deal(Prg.from_seed(9), ring)
    for shape, want in (((4,), [0, 0, 0, 0]), ((2,), [0, 0])):
        masks = [k.zero_share(shape) for k in keys]
        total = masks[0]
        for m in masks[1:]:
            total = ring.add(total, m)
        assert ring.to_ints(total) == want
        assert any(ring.to_ints(m) != want for m in masks)


def test_random_repl_is_consistent():
    ring = make_ring("mod2k")
    keys = ZeroShareKeys.deal(Prg.from_seed(10), ring)
    shares = [k.random_repl((3,)) for k in keys]
    val = reconstruct_replicated(shares)  # raises if pairwise inconsistent
    assert val is not None
