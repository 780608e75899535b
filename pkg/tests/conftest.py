"""Shared fixtures: rings, scheme lists, and a small simulate wrapper."""

import numpy as np
import pytest
from hypothesis import settings

from obliv1d.ring import mod2k, prime64
from obliv1d.sim import simulate

# protocol-heavy examples routinely cross hypothesis' default 200ms deadline
settings.register_profile("obliv1d", deadline=None)
settings.load_profile("obliv1d")

ALL_SCHEMES = ["semi-2pc", "active-2pc", "semi-3pc", "active-3pc"]
SEMI_SCHEMES = ["semi-2pc", "semi-3pc"]
ACTIVE_SCHEMES = ["active-2pc", "active-3pc"]

# active schemes need the prime field, so the supported matrix has six cells
COMBOS = [
    ("semi-2pc", "prime64"),
    ("semi-2pc", "mod2k"),
    ("active-2pc", "prime64"),
    ("semi-3pc", "prime64"),
    ("semi-3pc", "mod2k"),
    ("active-3pc", "prime64"),
]


def make_ring(name):
    return prime64() if name == "prime64" else mod2k()


@pytest.fixture(params=["prime64", "mod2k"])
def any_ring(request):
    return make_ring(request.param)


def run(scheme, ring, fn, **kw):
    """simulate() with the party results unpacked; aborts raise by default."""
    out = simulate(scheme, ring, fn, **kw)
    return out.results


def signed_list(ring, arr):
    return [int(v) for v in np.ravel(ring.signed(np.asarray(arr)))]
