"""Run every party of a protocol in one process, one thread each.

The simulator wires compute parties (and, for three-party schemes, external
client endpoints like the input owners) through a SimHub and a shared
in-memory dealer.  Parties run the same program function; clients run their
own little callables.  Exceptions are collected after all threads join: a
ProtocolAbort anywhere is the outcome "the run aborted", any other error is
a bug and re-raises.
"""

import threading

from .dealer import TrustedDealer
from .errors import ProtocolAbort, TransportError
from .prg import Prg
from .protocols import Adversary, Session
from .ring import ring_by_name
from .sharing import scheme_info
from .transport import SimHub


class SimOutcome:
    def __init__(self, results, counters, abort):
        self.results = results
        self.counters = counters
        self.abort = abort

    @property
    def aborted(self):
        return self.abort is not None


def simulate(scheme, ring, party_fn, clients=None, dealer=None, seed=None,
             trunc_mode="det", mac_every=False, adversaries=None,
             raise_aborts=True, timeout=120.0):
    """Execute party_fn(session) on every compute party.

    clients: {role: fn(chan, feed)} for endpoints outside the compute set.
    adversaries: {party_index: Adversary} corruption hooks.
    Returns a SimOutcome with per-role results and transport counters.
    """
    scheme = scheme_info(scheme) if isinstance(scheme, str) else scheme
    ring = ring_by_name(ring)
    if dealer is None:
        dealer = TrustedDealer(scheme, ring, seed=seed)
    hub = SimHub(timeout=timeout)
    session_id = (Prg.from_seed(seed, "sid").take(8) if seed is not None
                  else Prg.from_os().take(8))
    results = {}
    counters = {}
    errors = {}
    lock = threading.Lock()

    def party_main(i, role):
        chan = hub.attach(role, session_id)
        rng = (Prg.from_seed(seed, "party", i) if seed is not None
               else Prg.from_os())
        sess = None
        try:
            sess = Session(scheme, ring, chan, dealer.store(i),
                           trunc_mode=trunc_mode, mac_every=mac_every, rng=rng)
            if adversaries and i in adversaries:
                sess.adversary = adversaries[i]
            out = party_fn(sess)
            with lock:
                results[role] = out
                counters[role] = sess.counters()
        except BaseException as exc:
            with lock:
                errors[role] = exc
                if sess is not None:
                    counters[role] = sess.counters()
            hub.teardown()

    def client_main(role, fn):
        chan = hub.attach(role, session_id)
        feed = dealer.client_feed(role)
        try:
            out = fn(chan, feed)
            with lock:
                results[role] = out
                counters[role] = chan.counters()
        except BaseException as exc:
            with lock:
                errors[role] = exc
            hub.teardown()

    threads = [threading.Thread(target=party_main, args=(i, role), daemon=True)
               for i, role in enumerate(scheme.roles)]
    for role, fn in (clients or {}).items():
        threads.append(threading.Thread(target=client_main, args=(role, fn),
                                        daemon=True))
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout + 30.0)
        if t.is_alive():
            hub.teardown()
            raise TransportError("a simulated party is stuck; tearing down")

    abort = next((e for e in errors.values() if isinstance(e, ProtocolAbort)),
                 None)
    if abort is not None:
        if raise_aborts:
            raise abort
        return SimOutcome(results, counters, abort)
    for exc in errors.values():
        # transport errors are collateral when a peer died first
        if not isinstance(exc, TransportError):
            raise exc
    if errors:
        raise next(iter(errors.values()))
    return SimOutcome(results, counters, None)


def cheat_rate(scheme, ring, party_fn, contexts, trials, cheater=0, seed=0,
               **kw):
    """Fraction of runs that abort when one party injects an error.

    contexts: list of (context, nth) choices cycled across trials.
    """
    aborted = 0
    for t in range(trials):
        context, nth = contexts[t % len(contexts)]
        adv = Adversary(context, nth=nth, delta=1 + (t % 5))
        out = simulate(scheme, ring, party_fn, seed=seed * 1000003 + t,
                       adversaries={cheater: adv}, raise_aborts=False, **kw)
        if out.aborted:
            aborted += 1
    return aborted / trials
