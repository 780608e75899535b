"""Operator entry points: dealer, party, local-sim, oracle, bench.

Exit codes: 0 success, 1 failed golden-vector check, 2 usage error,
3 operational failure, 4 protocol abort (cheating detected).

Environment: OBLIV1D_SEED seeds randomized subcommands when --seed is
absent, OBLIV1D_LOG (info or debug) turns on one-line key=value event
logs on stderr, OBLIV1D_BACKEND (numba or numpy) picks the arithmetic
kernel lane.  local-sim with a fixed seed is byte-reproducible on stdout.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import _kernels, model_io
from .dealer import (RemoteFeed, RemoteStore, TrustedDealer, DealerServer,
                     key_parse, load_client_file, load_party_file)
from .errors import Obliv1dError, ProtocolAbort, UsageError
from .prg import Prg
from .protocols import (Session, client_provide_input, client_receive_output,
                        client_receive_output_pair)
from .qnn import (SecureEngine, broadcast_plan, client_send_plan,
                  client_share_model, client_share_vector, compile_plan, Plan)
from .ring import ring_by_name
from .sharing import scheme_info
from .sim import simulate
from .transport import TcpChannels

REFERENCE_SPEC = "in:40,conv:128x5,pool:4,conv:128x5,dense:8"

_LOG = {"level": 0}
_LEVELS = {"off": 0, "info": 1, "debug": 2}


def _setup_log(args):
    name = getattr(args, "log", None) or \
        os.environ.get("OBLIV1D_LOG", "").strip().lower() or "off"
    if name not in _LEVELS:
        raise UsageError("log level must be off, info or debug, not %r" % name)
    _LOG["level"] = _LEVELS[name]


def _log(event, _level=1, **kv):
    if _LOG["level"] >= _level:
        pairs = " ".join("%s=%s" % (k, v) for k, v in kv.items())
        sys.stderr.write("obliv1d event=%s%s%s\n"
                         % (event, " " if pairs else "", pairs))


def _err(msg):
    sys.stderr.write("obliv1d: %s\n" % msg)


def _resolve_seed(args, default=0):
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("OBLIV1D_SEED", "").strip()
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError("OBLIV1D_SEED must be an integer, not %r" % env)
    return default


def _check_combo(info, rd):
    if info.active and rd.kind != "prime":
        raise UsageError("active schemes pair with the prime field only "
                         "(use --ring prime64)")


def _parse_addr(spec):
    host, sep, port = spec.rpartition(":")
    if not sep or not port.isdigit():
        raise UsageError("expected host:port, got %r" % spec)
    return host or "127.0.0.1", int(port)


def _parse_peers(spec):
    peers = {}
    for item in (spec or "").split(","):
        item = item.strip()
        if not item:
            continue
        role, sep, addr = item.partition("=")
        if not sep:
            raise UsageError("peers are role=host:port items, got %r" % item)
        peers[role.strip()] = _parse_addr(addr.strip())
    return peers


def _parse_reveal(spec):
    """Map the delivery policy onto (wire role, optional address)."""
    if spec in ("alice", "bob"):
        return spec, None
    if spec == "third-party":
        return "out", None
    if spec.startswith("third-party:"):
        return "out", _parse_addr(spec.split(":", 1)[1])
    raise UsageError("--reveal-to takes alice, bob or third-party:<host:port>,"
                     " not %r" % spec)


def _parse_session(spec):
    try:
        sid = bytes.fromhex(spec)
    except ValueError:
        sid = b""
    if len(sid) != 8:
        raise UsageError("--session is 16 hex characters (8 bytes)")
    return sid


def _scalar_int(rd, arr):
    return int(np.ravel(rd.signed(arr))[0])


# ------------------------------------------------------- shared run programs

def _placeholder_theta(plan):
    """Parameter stand-ins for consumption metering: material counts depend
    only on the public plan, never on Bob's values."""
    vals = []
    for lp in plan.layers:
        need = lp.get("theta", 0)
        if not need:
            continue
        if lp["kind"] == "pool":
            vals.append(lp["window"])
        else:
            vals.extend([0] * need)
    return vals


def _party_program(sess, plan, model, inputs, trace=False, receiver=None,
                   theta_values=None):
    """One compute party's session: plan broadcast, theta, then inferences.

    receiver None opens the class to every party (the bench path); a role
    name delivers it there via reveal_to.  Returns per-inference classes,
    optional traces, counter snapshots and the consumed-material plan.
    """
    two = sess.scheme.nparties == 2
    own = two and sess.role == "bob"
    p = broadcast_plan(sess, plan if own else None, owner="bob")
    eng = SecureEngine(sess, p)
    if own and theta_values is not None:
        eng.share_theta(values=sess.ring.from_ints(theta_values))
    else:
        eng.share_theta(model if own else None)
    out = {"classes": [], "steps": [], "snaps": [], "times": [],
           "setup": sess.counters()}
    for x in inputs:
        t0 = time.monotonic()
        vals = eng.share_input(x if (two and sess.role == "alice") else None)
        if trace:
            idx, steps = eng.infer(x_share=vals, trace=True)
            out["steps"].append(steps)
        else:
            idx = eng.infer(x_share=vals)
        if receiver is None:
            opened = sess.open(idx)
            sess.mac_flush()
            out["classes"].append(_scalar_int(sess.ring, opened))
        else:
            got = sess.reveal_to(receiver, idx)
            if got is not None:
                out["classes"].append(_scalar_int(sess.ring, got))
        out["times"].append(time.monotonic() - t0)
        out["snaps"].append(sess.counters())
    out["prep"] = sess.store.plan()
    return out


def _sim_session(scheme, ring, plan, model, inputs, trunc="det", seed=0,
                 receiver=None, trace=False, dealer=None, theta_values=None):
    """Run one whole session (all parties, simulated transport) in-process."""
    info = scheme_info(scheme)
    rd = ring_by_name(ring)
    _check_combo(info, rd)
    plan.validate_for_ring(rd)
    nrep = len(inputs)
    three = info.nparties == 3

    def party_fn(sess):
        return _party_program(sess, plan, None if three else model,
                              [None] * nrep if three else inputs,
                              trace=trace, receiver=receiver,
                              theta_values=None if three else theta_values)

    clients = {}
    if three:
        servers = info.roles

        def bob_client(chan, feed):
            if model is not None:
                client_share_model(chan, rd, feed, model, plan,
                                   parties=servers)
            else:
                client_send_plan(chan, servers, plan)
                client_provide_input(chan, rd, feed,
                                     rd.from_ints(theta_values))
            return [_scalar_int(rd, client_receive_output(chan, rd, 1,
                                                          info.active))
                    for _ in range(nrep)] if receiver == "bob" else []

        def alice_client(chan, feed):
            for x in inputs:
                if x is None:
                    x = np.zeros(plan.input_len, dtype=np.uint8)
                client_share_vector(chan, rd, feed, x)
            return [_scalar_int(rd, client_receive_output(chan, rd, 1,
                                                          info.active))
                    for _ in range(nrep)] if receiver == "alice" else []

        clients = {"alice": alice_client, "bob": bob_client}
        if receiver == "out":
            clients["out"] = lambda chan, feed: [
                _scalar_int(rd, client_receive_output(chan, rd, 1,
                                                      info.active))
                for _ in range(nrep)]
    elif receiver == "out":
        clients["out"] = lambda chan, feed: [
            _scalar_int(rd, client_receive_output_pair(chan, rd, 1,
                                                       info.active))
            for _ in range(nrep)]

    out = simulate(info, rd, party_fn, clients=clients or None, dealer=dealer,
                   seed=seed, trunc_mode=trunc)
    return info, rd, out


def _result_class(info, outcome, receiver, idx=0):
    if receiver is None:
        return outcome.results[info.roles[0]]["classes"][idx]
    res = outcome.results.get(receiver)
    if res is None:
        raise UsageError("no process played the receiving role %r" % receiver)
    if isinstance(res, dict):
        return res["classes"][idx]
    return res[idx]


# ----------------------------------------------------------------- commands

def cmd_oracle(args):
    model = model_io.load_model(args.model)
    if args.emit_plan:
        plan = compile_plan(model, shift_mode=args.shift)
        with open(args.emit_plan, "w") as fh:
            fh.write(plan.to_json() + "\n")
        _log("emit-plan", path=args.emit_plan, theta_len=plan.theta_len)
        if not args.input and not args.check:
            return 0
    if args.check:
        cases = model_io.load_test_vectors(args.check, model=model)
        bad = 0
        for i, case in enumerate(cases):
            cls, steps = model_io.oracle_infer(model, case.values, trace=True)
            steps = steps[:-1]
            if cls != case.expected_class:
                _err("case %d: class %d, vectors expect %d"
                     % (i, cls, case.expected_class))
                bad += 1
            elif steps != case.steps:
                where = next(j for j, (a, b) in enumerate(zip(steps,
                                                              case.steps))
                             if a != b)
                _err("case %d: step %d (%s) diverges from the vectors"
                     % (i, where, case.steps[where][0]))
                bad += 1
        print("checked %d cases, %d mismatches" % (len(cases), bad))
        return 1 if bad else 0
    if not args.input:
        raise UsageError("oracle needs --input (or --check / --emit-plan)")
    x = model_io.load_input(args.input, expect_len=model.input_len)
    if args.trace:
        cls, steps = model_io.oracle_infer(model, x, trace=True)
        for kind, fb, vals in steps[:-1]:
            print("step %s f%d = %s" % (kind, fb,
                                        " ".join(str(v) for v in vals)))
    else:
        cls = model_io.oracle_infer(model, x)
    print(cls)
    return 0


def cmd_local_sim(args):
    info = scheme_info(args.scheme)
    rd = ring_by_name(args.ring)
    _check_combo(info, rd)
    model = model_io.load_model(args.model)
    x = model_io.load_input(args.input, expect_len=model.input_len)
    plan = compile_plan(model, shift_mode=args.shift)
    seed = _resolve_seed(args, 0)
    receiver, _ = _parse_reveal(args.reveal_to)
    _log("session", cmd="local-sim", scheme=info.name, ring=rd.tag(),
         trunc=args.trunc, shift=args.shift, seed=seed, reveal=receiver)
    info, rd, out = _sim_session(args.scheme, args.ring, plan, model, [x],
                                 trunc=args.trunc, seed=seed,
                                 receiver=receiver, trace=args.trace)
    if args.trace:
        for kind, vals in out.results[info.roles[0]]["steps"][0]:
            print("step %s = %s" % (kind, " ".join(str(v) for v in vals)))
    print(_result_class(info, out, receiver))
    for role in sorted(out.counters):
        _log("counters", role=role, **out.counters[role])
    return 0


def cmd_party(args):
    info = scheme_info(args.scheme)
    rd = ring_by_name(args.ring)
    _check_combo(info, rd)
    role = args.role
    valid = set(info.roles) | {"out"}
    if info.nparties == 3:
        valid |= {"alice", "bob"}
    if role is None or role not in valid:
        raise UsageError("--role must be one of %s for %s"
                         % ("|".join(sorted(valid)), info.name))
    receiver, out_addr = _parse_reveal(args.reveal_to)
    session_id = _parse_session(args.session)
    peers = _parse_peers(args.peers)
    if out_addr is not None:
        peers.setdefault("out", out_addr)
    if not args.listen:
        raise UsageError("--listen host:port is required")
    hello = ("%s|%s|%s" % (info.name, rd.tag(), args.trunc)).encode()
    chan = TcpChannels(role, session_id, _parse_addr(args.listen), peers,
                       hello)
    _log("party", role=role, scheme=info.name, ring=rd.tag(),
         trunc=args.trunc, listen=args.listen)
    try:
        if role in info.roles:
            return _party_compute(args, info, rd, chan, receiver, session_id)
        if role == "out":
            recv = (client_receive_output_pair if info.nparties == 2
                    else client_receive_output)
            print(_scalar_int(rd, recv(chan, rd, 1, info.active)))
            return 0
        feed = _open_feed(args.preproc, info, rd, role, session_id)
        if role == "bob":
            if not args.model:
                raise UsageError("the model owner runs with --model")
            model = model_io.load_model(args.model)
            plan = compile_plan(model, shift_mode=args.shift)
            plan.validate_for_ring(rd)
            client_share_model(chan, rd, feed, model, plan,
                               parties=info.roles)
        else:
            if not args.input:
                raise UsageError("the input owner runs with --input")
            client_share_vector(chan, rd, feed, model_io.load_input(args.input))
        if receiver == role:
            print(_scalar_int(rd, client_receive_output(chan, rd, 1,
                                                        info.active)))
        return 0
    finally:
        chan.close()


def _party_compute(args, info, rd, chan, receiver, session_id):
    party = info.roles.index(chan.me)
    store = _open_store(args.preproc, info, rd, party, session_id)
    rng = (Prg.from_seed(args.seed, "party", party) if args.seed is not None
           else Prg.from_os())
    sess = Session(info, rd, chan, store, trunc_mode=args.trunc, rng=rng)
    two = info.nparties == 2
    model, plan, inputs = None, None, [None]
    if two and chan.me == "bob":
        if not args.model:
            raise UsageError("the model owner runs with --model")
        model = model_io.load_model(args.model)
        plan = compile_plan(model, shift_mode=args.shift)
        plan.validate_for_ring(rd)
    elif two:
        if not args.input:
            raise UsageError("the input owner runs with --input")
        inputs = [model_io.load_input(args.input)]
    out = _party_program(sess, plan, model, inputs, receiver=receiver)
    _log("counters", role=chan.me, **sess.counters())
    if out["classes"]:
        print(out["classes"][0])
    return 0


def _open_store(spec, info, rd, party, session_id):
    if not spec:
        raise UsageError("--preproc names a manifest file or dealer:host:port")
    if spec.startswith("dealer:"):
        return RemoteStore(info, rd, party, _parse_addr(spec[7:]), session_id)
    store = load_party_file(spec, info, rd)
    if store.party != party:
        raise UsageError("manifest %s belongs to party %d, not this role"
                         % (spec, store.party))
    return store


def _open_feed(spec, info, rd, owner, session_id):
    if not spec:
        raise UsageError("--preproc names a manifest file or dealer:host:port")
    if spec.startswith("dealer:"):
        return RemoteFeed(owner, _parse_addr(spec[7:]), session_id, rd)
    feed = load_client_file(spec, info, rd)
    if feed.owner != owner:
        raise UsageError("manifest %s belongs to %s, not this role"
                         % (spec, feed.owner))
    return feed


def cmd_dealer(args):
    info = scheme_info(args.scheme)
    rd = ring_by_name(args.ring)
    _check_combo(info, rd)
    seed = args.seed
    if args.listen:
        dealer = TrustedDealer(info, rd, seed=seed)
        server = DealerServer(dealer, _parse_addr(args.listen),
                              _parse_session(args.session))
        host, port = server.address[:2]
        _log("dealer-serve", scheme=info.name, ring=rd.tag(),
             addr="%s:%d" % (host, port))
        print("dealer serving %s/%s on %s:%d"
              % (info.name, rd.tag(), host, port), file=sys.stderr)
        try:
            server.serve_forever()
        finally:
            server.stop()
        return 0
    if not args.out:
        raise UsageError("dealer writes manifests with --out dir "
                         "(or serves with --listen host:port)")
    counts = {}
    dealer = TrustedDealer(info, rd, seed=seed)
    if args.counts:
        with open(args.counts) as fh:
            raw = json.load(fh)
        for k, v in raw.items():
            key_parse(k)
            counts[k] = counts.get(k, 0) + int(v)
    plan = None
    if args.model:
        plan = compile_plan(model_io.load_model(args.model),
                            shift_mode=args.shift)
    elif args.plan:
        with open(args.plan) as fh:
            plan = Plan.from_json(fh.read())
    if plan is not None:
        metered = _meter(info, rd, plan, args.count, args.trunc, dealer,
                         seed)
        for k, v in metered.items():
            counts[k] = counts.get(k, 0) + v
    if args.triples:
        counts["triple"] = counts.get("triple", 0) + args.triples
    for item in args.mtriples or ():
        dims, _, n = item.partition(":")
        key = "mtriple:%s" % dims
        key_parse(key)
        counts[key] = counts.get(key, 0) + (int(n) if n else 1)
    for item in args.trunc_pairs or ():
        dims, _, n = item.partition(":")
        key = "trunc:%s" % dims
        key_parse(key)
        counts[key] = counts.get(key, 0) + (int(n) if n else 1)
    if args.bits:
        width, _, n = args.bits.rpartition(":")
        lbits = int(width) if width else 32
        key = "trunc:%d,%d,1" % (lbits, lbits)
        counts[key] = counts.get(key, 0) + int(n)
    for item in (args.masks or "").split(","):
        item = item.strip()
        if not item:
            continue
        owner, sep, n = item.partition(":")
        if not sep or owner not in ("alice", "bob"):
            raise UsageError("--masks is alice:N,bob:M, got %r" % item)
        key = "mask:%s" % owner
        counts[key] = counts.get(key, 0) + int(n)
    if not counts:
        raise UsageError("nothing to provision; give --model/--plan/--counts "
                         "or manual --triples/--bits/--masks amounts")
    paths = dealer.generate_files(counts, args.out)
    for k in sorted(counts):
        _log("provision", key=k, count=counts[k])
    for p in paths:
        print(p)
    return 0


def _meter(info, rd, plan, count, trunc, dealer, seed):
    """Dry-run the plan (placeholder values) to count material consumption.

    The same dealer then provisions fresh material, so nothing from the
    metering run leaves this process.
    """
    if count < 1:
        raise UsageError("--count must be at least 1")
    inputs = [np.zeros(plan.input_len, dtype=np.uint8)] * count
    info2, _, out = _sim_session(info.name, rd, plan, None, inputs,
                                 trunc=trunc, seed=seed, receiver=None,
                                 dealer=dealer,
                                 theta_values=_placeholder_theta(plan))
    counts = {}
    for role in info2.roles:
        for k, v in out.results[role]["prep"].items():
            counts[k] = max(counts.get(k, 0), v)
    return counts


def cmd_bench(args):
    seed = _resolve_seed(args, 0)
    if not args.kernels_only:
        _bench_protocol(args, seed)
    if not args.skip_kernels:
        _bench_kernels()
    return 0


def _bench_protocol(args, seed):
    info = scheme_info(args.scheme)
    rd = ring_by_name(args.ring)
    _check_combo(info, rd)
    if args.model:
        model = model_io.load_model(args.model)
        source = args.model
    else:
        model = model_io.gen_random_model(args.spec, seed)
        source = args.spec
    plan = compile_plan(model, shift_mode=args.shift)
    kappa = plan.validate_for_ring(rd)
    if args.repeat < 2:
        raise UsageError("--repeat must be at least 2 to compare inferences")
    rng = np.random.default_rng([seed % (1 << 63), 0xBE7C])
    inputs = [rng.integers(0, 256, size=plan.input_len).astype(np.uint8)
              for _ in range(args.repeat)]
    t0 = time.monotonic()
    info, rd, out = _sim_session(args.scheme, args.ring, plan, model, inputs,
                                 trunc=args.trunc, seed=seed, receiver=None)
    wall = time.monotonic() - t0
    res = out.results[info.roles[0]]
    keys = ("rounds", "bytes_sent", "bytes_received", "triples")
    prev = res["setup"]
    deltas = []
    for snap in res["snaps"]:
        deltas.append(tuple(snap[k] - prev[k] for k in keys))
        prev = snap
    stable = len(set(deltas)) == 1
    print("model: %s (%d layers, %d classes, theta %d)"
          % (source, len(plan.layers), plan.classes, plan.theta_len))
    print("session: %s ring=%s trunc=%s shift=%s kappa_eff=%d"
          % (info.name, rd.tag(), args.trunc, args.shift, kappa))
    d0 = deltas[0]
    print("per inference (%s): rounds=%d bytes_sent=%d bytes_received=%d "
          "triples=%d" % ((info.roles[0],) + d0))
    print("identical across %d inferences: %s"
          % (len(deltas), "yes" if stable else "NO"))
    setup = res["setup"]
    print("session setup (plan + theta): rounds=%d bytes_sent=%d"
          % (setup["rounds"], setup["bytes_sent"]))
    print("preprocessing consumed (whole session):")
    for k, v in sorted(res["prep"].items()):
        print("  %s = %d" % (k, v))
    times = sorted(res["times"])
    med = times[len(times) // 2]
    print("wall: total %.3f s, median inference %.1f ms" % (wall, med * 1e3))


def _time_call(fn, repeat=5):
    best = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        dt = time.perf_counter() - t0
        best = dt if best is None or dt < best else best
    return best, out


def _bench_kernels():
    """Time the modular-arithmetic kernels on every available lane."""
    lanes = _kernels.available_backends()
    saved = _kernels.backend_name()
    prime = ring_by_name("prime64")
    mod2k = ring_by_name("mod2k")
    prg = Prg.from_seed(2024, "kernel-bench")
    cases = []
    for name, ring in (("prime64", prime), ("mod2k", mod2k)):
        a = prg.ring_uniform(ring, (128, 640))
        b = prg.ring_uniform(ring, (640, 40))
        cases.append(("matmul 128x640x40 %s" % name,
                      lambda a=a, b=b, r=ring: r.matmul(a, b)))
        u = prg.ring_uniform(ring, (100000,))
        v = prg.ring_uniform(ring, (100000,))
        cases.append(("mul 100k %s" % name,
                      lambda u=u, v=v, r=ring: r.mul(u, v)))
    print("kernel lanes: %s (active: %s)" % (", ".join(lanes), saved))
    width = max(len(c[0]) for c in cases)
    try:
        for label, fn in cases:
            row = {}
            outs = {}
            for lane in lanes:
                _kernels.set_backend(lane)
                fn()  # warm the jit cache outside the timed window
                row[lane], outs[lane] = _time_call(fn)
            agree = all(np.array_equal(outs[lane], outs[lanes[0]])
                        for lane in lanes)
            cols = "  ".join("%s %8.3f ms" % (lane, row[lane] * 1e3)
                             for lane in lanes)
            extra = ""
            if len(lanes) > 1:
                extra = "  x%.1f  lanes agree: %s" % (
                    row["numpy"] / max(row["numba"], 1e-9),
                    "yes" if agree else "NO")
            print("  %-*s  %s%s" % (width, label, cols, extra))
    finally:
        _kernels.set_backend(saved)


def cmd_gen_model(args):
    model = model_io.gen_random_model(args.spec, args.seed,
                                      input_len=args.input_len,
                                      secret_pools=args.secret_pools)
    model_io.write_model(model, args.out)
    digest = model_io.model_checksum(model)
    _log("gen-model", path=args.out, spec=args.spec, seed=args.seed)
    print(digest)
    return 0


def cmd_gen_vectors(args):
    model = model_io.load_model(args.model)
    seed = _resolve_seed(args, 0)
    rng = np.random.default_rng([seed % (1 << 63), 0xF00D])
    inputs = [rng.integers(0, 256, size=model.input_len).astype(np.uint8)
              for _ in range(args.count)]
    cases = model_io.make_test_vectors(model, inputs)
    model_io.write_test_vectors(model_io.model_checksum(model), cases,
                                args.out)
    _log("gen-vectors", path=args.out, cases=len(cases), seed=seed)
    print("%d cases -> %s" % (len(cases), args.out))
    return 0


# ------------------------------------------------------------------ parsing

def _add_scheme_flags(p, scheme=None, ring=None):
    p.add_argument("--scheme", default=scheme,
                   choices=["semi-2pc", "active-2pc", "semi-3pc",
                            "active-3pc"],
                   required=scheme is None, help="protocol matrix row")
    p.add_argument("--ring", default=ring, required=ring is None,
                   help="prime64, mod2k, or mod2k:<k>")
    p.add_argument("--trunc", default="det", choices=["det", "prob"],
                   help="truncation flavor (default det)")
    p.add_argument("--shift", default="secret", choices=["secret", "public"],
                   help="requantization shift handling (default secret)")


def _build_parser():
    top = argparse.ArgumentParser(
        prog="obliv1d",
        description="secure two- and three-party inference for quantized "
                    "1-D convolutional nets")
    top.add_argument("--log", choices=["off", "info", "debug"],
                     help="event log level (default: $OBLIV1D_LOG or off)")
    sub = top.add_subparsers(dest="cmd", required=True, metavar="command")

    p = sub.add_parser("oracle", help="plaintext reference inference")
    p.add_argument("--model", required=True, help="*.qmodel file")
    p.add_argument("--input", help="*.qvec file")
    p.add_argument("--trace", action="store_true",
                   help="print every layer's integer outputs")
    p.add_argument("--check", help="verify a *.qtest golden-vector file")
    p.add_argument("--emit-plan", help="write the compiled public plan JSON")
    p.add_argument("--shift", default="secret", choices=["secret", "public"])
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("local-sim",
                       help="run every party in-process (simulated network)")
    _add_scheme_flags(p, scheme="semi-2pc", ring="prime64")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--seed", type=int, help="default $OBLIV1D_SEED or 0")
    p.add_argument("--reveal-to", default="alice",
                   help="alice, bob or third-party (in-process receiver)")
    p.add_argument("--trace", action="store_true",
                   help="open and print every layer (debugging only: "
                        "defeats the privacy of intermediate values)")
    p.set_defaults(func=cmd_local_sim)

    p = sub.add_parser("party", help="run one role over TCP")
    p.add_argument("--role",
                   help="alice|bob|s1|s2|s3, or out (third-party receiver)")
    _add_scheme_flags(p)
    p.add_argument("--listen", help="host:port this role accepts on")
    p.add_argument("--peers", default="",
                   help="role=host:port, comma separated, one per role "
                        "this process sends to")
    p.add_argument("--session", default="0" * 16,
                   help="16-hex-char session id shared by all endpoints")
    p.add_argument("--model", help="*.qmodel (the model owner)")
    p.add_argument("--input", help="*.qvec (the input owner)")
    p.add_argument("--preproc",
                   help="party manifest file, or dealer:host:port")
    p.add_argument("--reveal-to", default="alice",
                   help="alice, bob or third-party:<host:port>")
    p.add_argument("--seed", type=int,
                   help="deterministic session randomness (testing)")
    p.set_defaults(func=cmd_party)

    p = sub.add_parser("dealer",
                       help="generate preprocessing manifests, or serve "
                            "material over TCP")
    _add_scheme_flags(p)
    p.add_argument("--out", help="directory for party/client manifests")
    p.add_argument("--listen", help="serve mode: host:port")
    p.add_argument("--session", default="0" * 16)
    p.add_argument("--model", help="meter consumption by dry-running this "
                                   "model's public plan")
    p.add_argument("--plan", help="meter consumption from a plan JSON "
                                  "(written by oracle --emit-plan)")
    p.add_argument("--count", type=int, default=1,
                   help="inferences to provision for (one session)")
    p.add_argument("--counts", help="explicit material map JSON")
    p.add_argument("--triples", type=int, default=0,
                   help="extra scalar Beaver triples")
    p.add_argument("--mtriples", action="append",
                   help="extra matrix triples, m,k,n[:count]")
    p.add_argument("--trunc-pairs", action="append",
                   help="extra truncation pairs, lbits,shift,bits01[:count]")
    p.add_argument("--bits",
                   help="extra bit-decomposed comparison masks, [lbits:]count")
    p.add_argument("--masks", help="extra input masks, alice:N,bob:M")
    p.add_argument("--seed", type=int,
                   help="dealer randomness (default: OS entropy)")
    p.set_defaults(func=cmd_dealer)

    p = sub.add_parser("bench",
                       help="round/byte/preprocessing report and kernel "
                            "microbenchmark")
    _add_scheme_flags(p, scheme="semi-2pc", ring="mod2k")
    p.add_argument("--model", help="*.qmodel to bench")
    p.add_argument("--spec", default=REFERENCE_SPEC,
                   help="generate a model of this shape instead "
                        "(default: the two-block 128-filter stack)")
    p.add_argument("--repeat", type=int, default=5,
                   help="inferences to time (default 5)")
    p.add_argument("--seed", type=int)
    p.add_argument("--skip-kernels", action="store_true",
                   help="protocol numbers only")
    p.add_argument("--kernels-only", action="store_true",
                   help="kernel lane comparison only")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gen-model",
                       help="write a random desk-scale quantized model")
    p.add_argument("--spec", required=True,
                   help="e.g. in:40,conv:8x5,pool:4,dense:8")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--input-len", type=int, default=40)
    p.add_argument("--secret-pools", action="store_true",
                   help="hide pool divisors in theta")
    p.set_defaults(func=cmd_gen_model)

    p = sub.add_parser("gen-vectors",
                       help="write oracle golden vectors for a model")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_vectors)
    return top


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        _setup_log(args)
        return int(args.func(args) or 0)
    except ProtocolAbort as exc:
        _err("protocol abort: %s" % exc)
        return 4
    except UsageError as exc:
        _err("error: %s" % exc)
        return 2
    except Obliv1dError as exc:
        _err("error: %s" % exc)
        return 3
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
