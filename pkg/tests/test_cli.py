"""Command-line surface: exit codes, subcommands, env vars, TCP wiring."""

import socket
import subprocess
import sys
import threading

import numpy as np
import pytest

from conftest import COMBOS
from obliv1d import model_io
from obliv1d.cli import _open_store, main
from obliv1d.dealer import DealerServer, RemoteStore, TrustedDealer, \
    load_party_file
from obliv1d.errors import PreprocExhausted, UsageError
from obliv1d.qnn import Plan, oracle_infer
from obliv1d.ring import ring_by_name
from obliv1d.sharing import scheme_info

SPEC = "in:12,conv:3x3,pool:2,dense:4"
SID = bytes(8)  # the CLI default --session is sixteen '0' hex digits


def free_port():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    model = model_io.gen_random_model(SPEC, seed=21)
    model_io.write_model(model, d / "m.qmodel")
    rng = np.random.default_rng(9)
    x = rng.integers(0, 256, size=model.input_len)
    model_io.write_input(x, d / "x.qvec")
    return d, model, x


def cli(capsys, *argv):
    code = main(list(argv))
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def _bg(argv, codes, key):
    try:
        codes[key] = main(list(argv))
    except BaseException as exc:
        codes[key] = exc


# ------------------------------------------------------------- exit codes

def test_usage_errors_exit_2(work, capsys):
    d, model, x = work
    margs = ["--model", str(d / "m.qmodel"), "--input", str(d / "x.qvec")]
    code, _, err = cli(capsys, "local-sim", "--scheme", "active-2pc",
                       "--ring", "mod2k", *margs)
    assert code == 2
    assert "active schemes pair with the prime field only " \
           "(use --ring prime64)" in err
    assert cli(capsys, "local-sim", "--ring", "galois", *margs)[0] == 2
    assert cli(capsys, "local-sim", "--reveal-to", "carol", *margs)[0] == 2
    code, _, err = cli(capsys, "party", "--role", "zed", "--scheme",
                       "semi-2pc", "--ring", "prime64", "--listen", "x:1")
    assert code == 2 and "--role must be one of" in err
    code, _, err = cli(capsys, "party", "--role", "alice", "--scheme",
                       "semi-2pc", "--ring", "prime64", "--listen", "nope")
    assert code == 2 and "host:port" in err
    code, _, err = cli(capsys, "party", "--role", "alice", "--scheme",
                       "semi-2pc", "--ring", "prime64", "--listen",
                       "127.0.0.1:1", "--session", "xyz")
    assert code == 2 and "16 hex characters" in err
    with pytest.raises(SystemExit) as ei:
        main([])
    assert ei.value.code == 2
    capsys.readouterr()


def test_operational_errors_exit_3(work, tmp_path, capsys):
    d, model, x = work
    code, _, err = cli(capsys, "oracle", "--model", str(tmp_path / "no.qmodel"),
                       "--input", str(d / "x.qvec"))
    assert code == 3 and "cannot read" in err
    short = tmp_path / "short.qvec"
    model_io.write_input([1, 2, 3], short)
    code, _, err = cli(capsys, "oracle", "--model", str(d / "m.qmodel"),
                       "--input", str(short))
    assert code == 3 and "model wants" in err


# ----------------------------------------------------------------- oracle

def test_oracle_prints_class_and_trace(work, capsys):
    d, model, x = work
    cls, steps = oracle_infer(model, x, trace=True)
    code, out, _ = cli(capsys, "oracle", "--model", str(d / "m.qmodel"),
                       "--input", str(d / "x.qvec"))
    assert code == 0 and out.strip() == str(cls)
    code, out, _ = cli(capsys, "oracle", "--model", str(d / "m.qmodel"),
                       "--input", str(d / "x.qvec"), "--trace")
    assert code == 0
    lines = out.strip().split("\n")
    assert lines[-1] == str(cls)
    assert len(lines) - 1 == len(steps) - 1
    for line, (kind, fb, vals) in zip(lines[:-1], steps[:-1]):
        assert line == "step %s f%d = %s" % (kind, fb,
                                             " ".join(str(v) for v in vals))


def test_oracle_emit_plan(work, tmp_path, capsys):
    d, model, x = work
    out_path = tmp_path / "plan.json"
    code, _, _ = cli(capsys, "oracle", "--model", str(d / "m.qmodel"),
                     "--emit-plan", str(out_path))
    assert code == 0
    text = out_path.read_text()
    assert "weights" not in text and "bias" not in text
    plan = Plan.from_json(text)
    assert plan.input_len == 12


def test_oracle_requires_some_action(work, capsys):
    d, model, x = work
    code, _, err = cli(capsys, "oracle", "--model", str(d / "m.qmodel"))
    assert code == 2 and "--input" in err


def test_gen_vectors_then_check_passes(work, tmp_path, capsys):
    d, model, x = work
    vec = tmp_path / "m.qtest"
    code, out, _ = cli(capsys, "gen-vectors", "--model", str(d / "m.qmodel"),
                       "--out", str(vec), "--count", "6", "--seed", "2")
    assert code == 0 and "6 cases" in out
    code, out, _ = cli(capsys, "oracle", "--model", str(d / "m.qmodel"),
                       "--check", str(vec))
    assert code == 0 and "checked 6 cases, 0 mismatches" in out


def test_check_flags_divergence_exit_1(work, tmp_path, capsys):
    d, model, x = work
    digest = model_io.model_checksum(model)
    cases = model_io.make_test_vectors(model, [x, x + 1 & 0xFF])
    wrong = model_io.TestCase(cases[1].values,
                              (cases[1].expected_class + 1) % 4,
                              cases[1].steps)
    bad_class = tmp_path / "badclass.qtest"
    model_io.write_test_vectors(digest, [cases[0], wrong], bad_class)
    code, out, err = cli(capsys, "oracle", "--model", str(d / "m.qmodel"),
                         "--check", str(bad_class))
    assert code == 1 and "1 mismatches" in out and "case 1: class" in err

    kind, fb, vals = cases[0].steps[0]
    bent = model_io.TestCase(cases[0].values, cases[0].expected_class,
                             [(kind, fb, [vals[0] + 1] + vals[1:])]
                             + cases[0].steps[1:])
    bad_step = tmp_path / "badstep.qtest"
    model_io.write_test_vectors(digest, [bent], bad_step)
    code, out, err = cli(capsys, "oracle", "--model", str(d / "m.qmodel"),
                         "--check", str(bad_step))
    assert code == 1 and "step 0" in err and "diverges" in err


# -------------------------------------------------------------- local-sim

def test_local_sim_matches_oracle_on_every_combo(work, capsys):
    d, model, x = work
    want = str(oracle_infer(model, x))
    for scheme, ring in COMBOS:
        code, out, err = cli(capsys, "local-sim", "--scheme", scheme,
                             "--ring", ring, "--model", str(d / "m.qmodel"),
                             "--input", str(d / "x.qvec"))
        assert code == 0, (scheme, ring, err)
        assert out.strip() == want, (scheme, ring)


def test_local_sim_seed_reproducible(work, capsys, monkeypatch):
    d, model, x = work
    args = ["local-sim", "--model", str(d / "m.qmodel"),
            "--input", str(d / "x.qvec"), "--trunc", "prob"]
    a = cli(capsys, *args, "--seed", "5")
    b = cli(capsys, *args, "--seed", "5")
    assert a == b and a[0] == 0
    monkeypatch.setenv("OBLIV1D_SEED", "5")
    c = cli(capsys, *args)
    assert c == a
    monkeypatch.setenv("OBLIV1D_SEED", "5x")
    assert cli(capsys, *args)[0] == 2


def test_local_sim_trace_and_reveal_choices(work, capsys):
    d, model, x = work
    cls, steps = oracle_infer(model, x, trace=True)
    code, out, _ = cli(capsys, "local-sim", "--model", str(d / "m.qmodel"),
                       "--input", str(d / "x.qvec"), "--trace",
                       "--reveal-to", "bob")
    assert code == 0
    lines = out.strip().split("\n")
    assert lines[-1] == str(cls)
    got = [[int(v) for v in line.split(" = ")[1].split()]
           for line in lines[:-1]]
    assert got == [vals for _, _, vals in steps[:-1]]
    code, out, _ = cli(capsys, "local-sim", "--scheme", "semi-3pc",
                       "--model", str(d / "m.qmodel"),
                       "--input", str(d / "x.qvec"),
                       "--reveal-to", "third-party")
    assert code == 0 and out.strip() == str(cls)


def test_event_log_env_and_flag(work, capsys, monkeypatch):
    d, model, x = work
    args = ["local-sim", "--model", str(d / "m.qmodel"),
            "--input", str(d / "x.qvec")]
    code, _, err = cli(capsys, "--log", "info", *args)
    assert code == 0
    assert "obliv1d event=session" in err
    assert "event=counters role=alice" in err
    monkeypatch.setenv("OBLIV1D_LOG", "debug")
    code, _, err = cli(capsys, *args)
    assert code == 0 and "obliv1d event=" in err
    monkeypatch.setenv("OBLIV1D_LOG", "loud")
    assert cli(capsys, *args)[0] == 2


# ------------------------------------------------------------- generation

def test_gen_model_cli(tmp_path, capsys):
    out1, out2 = tmp_path / "a.qmodel", tmp_path / "b.qmodel"
    code, printed, _ = cli(capsys, "gen-model", "--spec", SPEC, "--seed",
                           "33", "--out", str(out1))
    assert code == 0
    digest = printed.strip()
    assert len(digest) == 64
    m = model_io.load_model(out1)
    assert model_io.model_checksum(m) == digest
    cli(capsys, "gen-model", "--spec", SPEC, "--seed", "33", "--out",
        str(out2))
    assert out1.read_bytes() == out2.read_bytes()
    code, _, err = cli(capsys, "gen-model", "--spec", "tower:9", "--seed",
                       "1", "--out", str(tmp_path / "c.qmodel"))
    assert code == 2 and "unknown shape token" in err


# ----------------------------------------------------------------- dealer

def test_dealer_writes_metered_manifests(work, tmp_path, capsys):
    d, model, x = work
    code, out, _ = cli(capsys, "dealer", "--scheme", "semi-2pc", "--ring",
                       "prime64", "--out", str(tmp_path), "--model",
                       str(d / "m.qmodel"), "--count", "2", "--seed", "7")
    assert code == 0
    paths = out.strip().split("\n")
    assert len(paths) >= 2
    store = load_party_file(str(tmp_path / "party0.prep"), "semi-2pc",
                            ring_by_name("prime64"))
    assert store.available(("triple",)) > 0


def test_dealer_manual_provisioning(tmp_path, capsys):
    code, _, _ = cli(capsys, "dealer", "--scheme", "semi-2pc", "--ring",
                     "prime64", "--out", str(tmp_path), "--triples", "4",
                     "--trunc-pairs", "40,16,0:3", "--bits", "16:2",
                     "--masks", "alice:2", "--seed", "1")
    assert code == 0
    store = load_party_file(str(tmp_path / "party0.prep"), "semi-2pc",
                            ring_by_name("prime64"))
    assert store.available(("trunc", 40, 16, False)) == 3
    assert store.available(("trunc", 16, 16, True)) == 2
    assert store.available(("mask", "alice")) == 2
    store.pop_triples(4)
    with pytest.raises(PreprocExhausted):
        store.pop_triples(1)


def test_dealer_with_nothing_to_do(tmp_path, capsys):
    code, _, err = cli(capsys, "dealer", "--scheme", "semi-2pc", "--ring",
                       "prime64", "--out", str(tmp_path))
    assert code == 2 and "nothing to provision" in err


def test_preproc_role_mismatch_rejected(tmp_path, capsys):
    cli(capsys, "dealer", "--scheme", "semi-2pc", "--ring", "prime64",
        "--out", str(tmp_path), "--triples", "1", "--seed", "1")
    info = scheme_info("semi-2pc")
    rd = ring_by_name("prime64")
    with pytest.raises(UsageError, match="belongs to party"):
        _open_store(str(tmp_path / "party1.prep"), info, rd, 0, SID)
    with pytest.raises(UsageError, match="manifest file or dealer:"):
        _open_store("", info, rd, 0, SID)


def test_dealer_serve_subprocess(tmp_path):
    proc = subprocess.Popen(
        [sys.executable, "-m", "obliv1d.cli", "dealer", "--scheme",
         "semi-2pc", "--ring", "prime64", "--listen", "127.0.0.1:0",
         "--seed", "3"],
        stdout=subprocess.DEVNULL, stderr=subprocess.PIPE, text=True)
    try:
        line = proc.stderr.readline()
        assert "dealer serving semi-2pc" in line
        addr = line.strip().rsplit(" on ", 1)[1]
        host, port = addr.rsplit(":", 1)
        store = RemoteStore("semi-2pc", ring_by_name("prime64"), 0,
                            (host, int(port)), SID)
        a, b, c = store.pop_triples(2)
        assert a.data.shape[0] == 2
        store.close()
    finally:
        proc.terminate()
        proc.wait(timeout=10)


# ------------------------------------------------------------- TCP parties

def _run_two_party(argv_a, argv_b, timeout=90):
    codes = {}
    ta = threading.Thread(target=_bg, args=(argv_a, codes, "alice"),
                          daemon=True)
    tb = threading.Thread(target=_bg, args=(argv_b, codes, "bob"),
                          daemon=True)
    ta.start(), tb.start()
    ta.join(timeout), tb.join(timeout)
    assert not ta.is_alive() and not tb.is_alive(), "party deadlock"
    return codes


def test_party_tcp_end_to_end(work, tmp_path, capsys):
    d, model, x = work
    cli(capsys, "dealer", "--scheme", "semi-2pc", "--ring", "prime64",
        "--out", str(tmp_path), "--model", str(d / "m.qmodel"), "--seed", "2")
    pa, pb = free_port(), free_port()
    base = ["party", "--scheme", "semi-2pc", "--ring", "prime64"]
    codes = _run_two_party(
        base + ["--role", "alice", "--listen", "127.0.0.1:%d" % pa,
                "--peers", "bob=127.0.0.1:%d" % pb,
                "--preproc", str(tmp_path / "party0.prep"),
                "--input", str(d / "x.qvec"), "--seed", "11"],
        base + ["--role", "bob", "--listen", "127.0.0.1:%d" % pb,
                "--peers", "alice=127.0.0.1:%d" % pa,
                "--preproc", str(tmp_path / "party1.prep"),
                "--model", str(d / "m.qmodel"), "--seed", "12"])
    assert codes == {"alice": 0, "bob": 0}
    out = capsys.readouterr().out
    assert str(oracle_infer(model, x)) in out.split()


def test_party_remote_dealer(work, capsys):
    d, model, x = work
    dealer = TrustedDealer("semi-2pc", ring_by_name("prime64"), seed=4)
    srv = DealerServer(dealer, ("127.0.0.1", 0), SID)
    srv.start()
    try:
        spec = "dealer:%s:%d" % srv.address[:2]
        pa, pb = free_port(), free_port()
        base = ["party", "--scheme", "semi-2pc", "--ring", "prime64"]
        codes = _run_two_party(
            base + ["--role", "alice", "--listen", "127.0.0.1:%d" % pa,
                    "--peers", "bob=127.0.0.1:%d" % pb, "--preproc", spec,
                    "--input", str(d / "x.qvec"), "--seed", "1"],
            base + ["--role", "bob", "--listen", "127.0.0.1:%d" % pb,
                    "--peers", "alice=127.0.0.1:%d" % pa, "--preproc", spec,
                    "--model", str(d / "m.qmodel"), "--seed", "2"])
    finally:
        srv.stop()
    assert codes == {"alice": 0, "bob": 0}
    assert str(oracle_infer(model, x)) in capsys.readouterr().out.split()


def test_party_mismatched_preprocessing_aborts(work, tmp_path, capsys):
    """Manifests from two different dealers carry inconsistent MACs; the
    active protocol must notice and die with the abort exit code."""
    d, model, x = work
    da, db = tmp_path / "a", tmp_path / "b"
    for out, seed in ((da, "1"), (db, "2")):
        cli(capsys, "dealer", "--scheme", "active-2pc", "--ring", "prime64",
            "--out", str(out), "--model", str(d / "m.qmodel"), "--seed", seed)
    pa, pb = free_port(), free_port()
    base = ["party", "--scheme", "active-2pc", "--ring", "prime64"]
    codes = _run_two_party(
        base + ["--role", "alice", "--listen", "127.0.0.1:%d" % pa,
                "--peers", "bob=127.0.0.1:%d" % pb,
                "--preproc", str(da / "party0.prep"),
                "--input", str(d / "x.qvec"), "--seed", "3"],
        base + ["--role", "bob", "--listen", "127.0.0.1:%d" % pb,
                "--peers", "alice=127.0.0.1:%d" % pa,
                "--preproc", str(db / "party1.prep"),
                "--model", str(d / "m.qmodel"), "--seed", "4"])
    capsys.readouterr()
    vals = set(codes.values())
    assert vals <= {3, 4} and 4 in vals, codes


# ------------------------------------------------------------------ bench

def test_bench_protocol_report(capsys):
    code, out, _ = cli(capsys, "bench", "--scheme", "semi-2pc", "--ring",
                       "prime64", "--spec", "in:8,conv:2x3,pool:2,dense:3",
                       "--repeat", "3", "--seed", "3", "--skip-kernels")
    assert code == 0
    assert "identical across 3 inferences: yes" in out
    assert "per inference" in out and "preprocessing consumed" in out
    code, _, err = cli(capsys, "bench", "--repeat", "1", "--scheme",
                       "semi-2pc", "--ring", "prime64", "--skip-kernels")
    assert code == 2 and "at least 2" in err


def test_bench_kernels_compare_lanes(capsys):
    code, out, _ = cli(capsys, "bench", "--kernels-only", "--scheme",
                       "semi-2pc", "--ring", "prime64")
    assert code == 0
    assert "kernel lanes:" in out
    if "numba" in out and "numpy" in out:
        assert "lanes agree: yes" in out


def test_backend_env_picks_lane():
    out = subprocess.run(
        [sys.executable, "-c",
         "from obliv1d import _kernels; print(_kernels.backend_name())"],
        env={"PATH": "/usr/bin:/bin", "OBLIV1D_BACKEND": "numpy"},
        capture_output=True, text=True, check=True).stdout
    assert out.strip() == "numpy"
