"""Writers for the engine's model, vector and test-vector text files.

The format is the external contract between this package and the engine:
versioned tag line, `key = value` pairs, tensors as a dimension header
plus indented rows of sixteen integers, and a sha256 checksum over every
preceding byte.  Writing is canonical.  Scales are hex floats, so they
round-trip exactly.  The checksum doubles as the model identity that test
vectors bind to, which is why this writer must produce the same bytes the
engine itself would write for an equal model.
"""

import hashlib

import numpy as np

MODEL_TAG = "obliv1d-qmodel v1"
VEC_TAG = "obliv1d-qvec v1"
TEST_TAG = "obliv1d-qtest v1"
PER_LINE = 16


def _tensor_lines(out, key, arr):
    arr = np.asarray(arr)
    out.append("%s = %s" % (key, " ".join(str(d) for d in arr.shape)))
    flat = [str(int(v)) for v in arr.ravel()]
    for at in range(0, len(flat), PER_LINE):
        out.append("  " + " ".join(flat[at:at + PER_LINE]))


def _qp_lines(out, prefix, qp):
    scale, zp = qp
    out.append("%s_scale = %s" % (prefix, float(scale).hex()))
    out.append("%s_zp = %d" % (prefix, int(zp)))


def _seal(out):
    body = "\n".join(out) + "\n"
    digest = hashlib.sha256(body.encode()).hexdigest()
    return body + "checksum = %s\n" % digest, digest


def dump_model_text(qnet):
    """Canonical model text plus its digest."""
    out = [MODEL_TAG]
    out.append("name = %s" % qnet["name"])
    out.append("version = %s" % qnet["version"])
    out.append("input_len = %d" % qnet["input_len"])
    out.append("input_depth = %d" % qnet["input_depth"])
    _qp_lines(out, "input", qnet["input_qp"])
    if qnet.get("labels"):
        out.append("labels = %s" % ",".join(qnet["labels"]))
    for lay in qnet["layers"]:
        out.append("layer %s" % lay["kind"])
        if lay["kind"] == "conv":
            out.append("filters = %d" % lay["filters"])
            out.append("width = %d" % lay["width"])
            out.append("depth = %d" % lay["depth"])
            out.append("padding = %s" % lay["padding"])
        if lay["kind"] in ("conv", "dense"):
            out.append("relu = %d" % bool(lay["relu"]))
            _qp_lines(out, "w", lay["w_qp"])
            if lay.get("out_qp") is not None:
                _qp_lines(out, "out", lay["out_qp"])
                out.append("m0 = %d" % lay["m0"])
                out.append("n = %d" % lay["n"])
            _tensor_lines(out, "weights", lay["weights"])
            _tensor_lines(out, "bias", lay["bias"])
        elif lay["kind"] == "pool":
            out.append("window = %d" % lay["window"])
            out.append("secret_divisor = %d" % bool(lay["secret_divisor"]))
    return _seal(out)


def dump_input_text(values):
    x = np.asarray(values)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("an input vector is one non-empty axis")
    if int(x.min()) < 0 or int(x.max()) > 255:
        raise ValueError("input values must lie in [0, 255]")
    out = [VEC_TAG]
    _tensor_lines(out, "values", x)
    return _seal(out)[0]


def dump_test_vectors_text(model_digest, cases):
    """cases: iterable of (input values, class index, steps) where steps
    is [(kind, frac_bits, [int, ...]), ...]."""
    out = [TEST_TAG]
    out.append("model_checksum = %s" % model_digest)
    cases = list(cases)
    out.append("cases = %d" % len(cases))
    for i, (values, cls, steps) in enumerate(cases):
        out.append("case %d" % i)
        _tensor_lines(out, "input", values)
        out.append("class = %d" % cls)
        for kind, fb, vals in steps:
            _tensor_lines(out, "step %s %d" % (kind, fb),
                          np.array(vals, dtype=object))
    return _seal(out)[0]


# ---------------------------------------------------------------- reading

class _Cursor:
    """Line walker for files this package wrote itself."""

    def __init__(self, text, where):
        self.lines = [l for l in text.split("\n")]
        if self.lines and self.lines[-1] == "":
            self.lines.pop()
        self.at = 0
        self.where = where

    def fail(self, msg):
        raise ValueError("%s:%d: %s" % (self.where, self.at + 1, msg))

    def peek(self):
        return self.lines[self.at] if self.at < len(self.lines) else None

    def take(self):
        if self.at >= len(self.lines):
            self.fail("unexpected end of file")
        line = self.lines[self.at]
        self.at += 1
        return line

    def value(self, key):
        line = self.take()
        if not line.startswith(key + " = "):
            self.fail("expected %r, got %r" % (key, line))
        return line[len(key) + 3:]

    def int_value(self, key):
        return int(self.value(key))

    def qp(self, prefix):
        return (float.fromhex(self.value(prefix + "_scale")),
                int(self.value(prefix + "_zp")))

    def tensor(self, key):
        shape = tuple(int(d) for d in self.value(key).split())
        size = int(np.prod(shape)) if shape else 1
        vals = []
        while len(vals) < size:
            line = self.take()
            if not line.startswith("  "):
                self.fail("tensor %s is short" % key)
            vals.extend(int(t) for t in line.split())
        if len(vals) != size:
            self.fail("tensor %s has extra values" % key)
        return np.array(vals, dtype=np.int64).reshape(shape)


def _verify_checksum(text, where):
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[-1].startswith("checksum = "):
        raise ValueError("%s: missing checksum line" % where)
    claimed = lines[-1][len("checksum = "):]
    body = "\n".join(lines[:-1]) + "\n"
    actual = hashlib.sha256(body.encode()).hexdigest()
    if claimed != actual:
        raise ValueError("%s: checksum mismatch" % where)
    return actual


def parse_model_text(text, where="<qmodel>"):
    """Read a model this package exported; returns (qnet, digest)."""
    digest = _verify_checksum(text, where)
    c = _Cursor(text, where)
    if c.take() != MODEL_TAG:
        raise ValueError("%s: not a %s file" % (where, MODEL_TAG))
    qnet = {"name": c.value("name"), "version": c.value("version"),
            "input_len": c.int_value("input_len"),
            "input_depth": c.int_value("input_depth"),
            "input_qp": c.qp("input"), "labels": (), "layers": []}
    if c.peek() is not None and c.peek().startswith("labels = "):
        qnet["labels"] = tuple(c.value("labels").split(","))
    while c.peek() is not None and not c.peek().startswith("checksum = "):
        line = c.take()
        if not line.startswith("layer "):
            c.fail("expected a layer block, got %r" % line)
        kind = line[len("layer "):]
        lay = {"kind": kind}
        if kind == "conv":
            lay["filters"] = c.int_value("filters")
            lay["width"] = c.int_value("width")
            lay["depth"] = c.int_value("depth")
            lay["padding"] = c.value("padding")
        if kind in ("conv", "dense"):
            lay["relu"] = bool(c.int_value("relu"))
            lay["w_qp"] = c.qp("w")
            lay["out_qp"], lay["m0"], lay["n"] = None, None, None
            if c.peek() is not None and c.peek().startswith("out_scale = "):
                lay["out_qp"] = c.qp("out")
                lay["m0"] = c.int_value("m0")
                lay["n"] = c.int_value("n")
            lay["weights"] = c.tensor("weights")
            lay["bias"] = c.tensor("bias")
        elif kind == "pool":
            lay["window"] = c.int_value("window")
            lay["secret_divisor"] = bool(c.int_value("secret_divisor"))
        elif kind not in ("flatten", "argmax"):
            c.fail("unknown layer kind %r" % kind)
        qnet["layers"].append(lay)
    return qnet, digest


def load_qmodel(path):
    with open(path) as fh:
        return parse_model_text(fh.read(), where=str(path))
