"""File formats for models, input vectors and golden test vectors.

All three are versioned line-oriented text: a tag line, `key = value`
pairs, integer tensors as dimension headers followed by indented rows of
sixteen values, and a final sha256 over every byte that precedes it.
Writing is canonical, so load followed by write reproduces a written file
byte for byte.  Scales are serialized as hex floats (exact roundtrip).

The test-vector file binds to a model by checksum: vectors generated for
one model refuse to load against another.
"""

import hashlib

import numpy as np

from .errors import FormatError, UsageError
from .qnn import (ACT_MAX, ArgMaxOutput, Flatten, QAvgPool1D, QConv1D,
                  QDense, QuantParams, QuantizedModel, compile_plan,
                  conv_gather_idx, oracle_forward, oracle_infer,
                  requant_multiplier)

MODEL_TAG = "obliv1d-qmodel v1"
VEC_TAG = "obliv1d-qvec v1"
TEST_TAG = "obliv1d-qtest v1"
PER_LINE = 16


# ----------------------------------------------------------------- writing

def _tensor_lines(out, key, arr):
    arr = np.asarray(arr)
    out.append("%s = %s" % (key, " ".join(str(d) for d in arr.shape)))
    flat = [str(int(v)) for v in arr.ravel()]
    for at in range(0, len(flat), PER_LINE):
        out.append("  " + " ".join(flat[at:at + PER_LINE]))


def _qp_lines(out, prefix, qp):
    out.append("%s_scale = %s" % (prefix, float(qp.scale).hex()))
    out.append("%s_zp = %d" % (prefix, qp.zero_point))


def dumps_model(model):
    if "\n" in model.name or any("," in l or "\n" in l for l in model.labels):
        raise FormatError("names must be single-line, labels comma-free")
    out = [MODEL_TAG]
    out.append("name = %s" % model.name)
    out.append("version = %s" % model.version)
    out.append("input_len = %d" % model.input_len)
    out.append("input_depth = %d" % model.input_depth)
    _qp_lines(out, "input", model.input_qp)
    if model.labels:
        out.append("labels = %s" % ",".join(model.labels))
    for lay in model.layers:
        out.append("layer %s" % lay.kind)
        if lay.kind == "conv":
            out.append("filters = %d" % lay.filters)
            out.append("width = %d" % lay.width)
            out.append("depth = %d" % lay.depth)
            out.append("padding = %s" % lay.padding)
        if lay.kind in ("conv", "dense"):
            out.append("relu = %d" % bool(lay.relu))
            _qp_lines(out, "w", lay.w_qp)
            if lay.out_qp is not None:
                _qp_lines(out, "out", lay.out_qp)
                out.append("m0 = %d" % lay.m0)
                out.append("n = %d" % lay.n)
            _tensor_lines(out, "weights", lay.weights)
            _tensor_lines(out, "bias", lay.bias)
        elif lay.kind == "pool":
            out.append("window = %d" % lay.window)
            out.append("secret_divisor = %d" % bool(lay.secret_divisor))
    body = "\n".join(out) + "\n"
    digest = hashlib.sha256(body.encode()).hexdigest()
    return body + "checksum = %s\n" % digest, digest


def write_model(model, path):
    text, digest = dumps_model(model)
    with open(path, "w") as fh:
        fh.write(text)
    return digest


def model_checksum(model):
    return dumps_model(model)[1]


# ----------------------------------------------------------------- parsing

class _Walker:
    """Line cursor with located errors."""

    def __init__(self, text, where):
        self.lines = text.split("\n")
        if self.lines and self.lines[-1] == "":
            self.lines.pop()
        self.at = 0
        self.where = where

    def fail(self, msg, line=None):
        raise FormatError("%s:%d: %s" % (self.where,
                                         (self.at if line is None else line) + 1,
                                         msg))

    def done(self):
        return self.at >= len(self.lines)

    def peek(self):
        return None if self.done() else self.lines[self.at]

    def take(self):
        if self.done():
            self.fail("unexpected end of file")
        line = self.lines[self.at]
        self.at += 1
        return line

    def expect_tag(self, tag):
        line = self.take()
        if line != tag:
            self.fail("expected %r on the first line" % tag, self.at - 1)

    def key_value(self, key=None):
        line = self.take()
        if " = " not in line:
            self.fail("expected 'key = value', got %r" % line, self.at - 1)
        k, v = line.split(" = ", 1)
        if key is not None and k != key:
            self.fail("expected key %r, got %r" % (key, k), self.at - 1)
        return (v if key is not None else (k, v))

    def int_value(self, key):
        v = self.key_value(key)
        try:
            return int(v)
        except ValueError:
            self.fail("%s is not an integer: %r" % (key, v), self.at - 1)

    def float_value(self, key):
        v = self.key_value(key)
        try:
            return float.fromhex(v)
        except ValueError:
            self.fail("%s is not a hex float: %r" % (key, v), self.at - 1)

    def tensor(self, key, ndim=None):
        head = self.key_value(key)
        try:
            shape = tuple(int(d) for d in head.split())
        except ValueError:
            self.fail("bad tensor dimensions %r" % head, self.at - 1)
        if ndim is not None and len(shape) != ndim:
            self.fail("%s wants %d dimensions, got %d" % (key, ndim,
                                                          len(shape)),
                      self.at - 1)
        size = 1
        for d in shape:
            if d < 0 or d > 1 << 24:
                self.fail("unreasonable dimension %d in %s" % (d, key),
                          self.at - 1)
            size *= d
        if size > 1 << 24:
            self.fail("tensor %s too large" % key, self.at - 1)
        vals = []
        while len(vals) < size:
            line = self.take()
            if not line.startswith("  "):
                self.fail("tensor %s is short: expected %d values, got %d"
                          % (key, size, len(vals)), self.at - 1)
            try:
                vals.extend(int(t) for t in line.split())
            except ValueError:
                self.fail("non-integer in tensor %s" % key, self.at - 1)
        if len(vals) > size:
            self.fail("tensor %s has %d extra values" % (key,
                                                         len(vals) - size))
        if any(not -(1 << 62) < v < (1 << 62) for v in vals):
            self.fail("tensor %s holds a value outside 63 bits" % key)
        return np.array(vals, dtype=np.int64).reshape(shape)


def _check_sum(text, where):
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[-1].startswith("checksum = "):
        raise FormatError("%s: missing checksum line" % where)
    claimed = lines[-1][len("checksum = "):]
    body = "\n".join(lines[:-1]) + "\n"
    actual = hashlib.sha256(body.encode()).hexdigest()
    if claimed != actual:
        raise FormatError("%s: checksum mismatch (file corrupt or edited)"
                          % where)
    return actual


def _qp(walker, prefix):
    scale = walker.float_value(prefix + "_scale")
    zp = walker.int_value(prefix + "_zp")
    try:
        return QuantParams(scale, zp)
    except FormatError as exc:
        walker.fail("%s params: %s" % (prefix, exc))


def loads_model(text, where="<qmodel>"):
    digest = _check_sum(text, where)
    w = _Walker(text, where)
    first = w.peek()
    if first is not None and first.startswith("obliv1d-qmodel") \
            and first != MODEL_TAG:
        w.fail("unknown format version %r" % first)
    w.expect_tag(MODEL_TAG)
    name = w.key_value("name")
    version = w.key_value("version")
    input_len = w.int_value("input_len")
    input_depth = w.int_value("input_depth")
    in_qp = _qp(w, "input")
    labels = ()
    if w.peek() is not None and w.peek().startswith("labels = "):
        labels = tuple(w.key_value("labels").split(","))
    layers = []
    while not w.done() and not w.peek().startswith("checksum = "):
        line = w.take()
        if not line.startswith("layer "):
            w.fail("expected a layer block, got %r" % line, w.at - 1)
        kind = line[len("layer "):]
        if kind == "conv":
            filters = w.int_value("filters")
            width = w.int_value("width")
            depth = w.int_value("depth")
            padding = w.key_value("padding")
            layers.append(_linear_block(w, kind, filters=filters, width=width,
                                        depth=depth, padding=padding))
        elif kind == "dense":
            layers.append(_linear_block(w, kind))
        elif kind == "pool":
            window = w.int_value("window")
            secret = w.int_value("secret_divisor")
            layers.append(QAvgPool1D(window, secret_divisor=bool(secret)))
        elif kind == "flatten":
            layers.append(Flatten())
        elif kind == "argmax":
            layers.append(ArgMaxOutput())
        else:
            w.fail("unknown layer kind %r" % kind, w.at - 1)
    model = QuantizedModel(input_len, in_qp, layers, name=name,
                           version=version, labels=labels,
                           input_depth=input_depth)
    try:
        compile_plan(model, classifier=False)
    except (FormatError, UsageError) as exc:
        raise FormatError("%s: %s" % (where, exc))
    return model, digest


def _linear_block(w, kind, **conv_fields):
    relu = bool(w.int_value("relu"))
    w_qp = _qp(w, "w")
    out_qp, m0, n = None, None, None
    if w.peek() is not None and w.peek().startswith("out_scale = "):
        out_qp = _qp(w, "out")
        m0 = w.int_value("m0")
        n = w.int_value("n")
    weights = w.tensor("weights", ndim=3 if kind == "conv" else 2)
    bias = w.tensor("bias", ndim=1)
    if kind == "conv":
        return QConv1D(weights=weights, bias=bias, w_qp=w_qp, out_qp=out_qp,
                       m0=m0, n=n, relu=relu, **conv_fields)
    return QDense(weights=weights, bias=bias, w_qp=w_qp, out_qp=out_qp,
                  m0=m0, n=n, relu=relu)


def load_model(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise FormatError("cannot read %s: %s" % (path, exc))
    model, _ = loads_model(text, where=str(path))
    return model


# ------------------------------------------------------------ input vectors

def dumps_input(values):
    x = np.asarray(values)
    if x.ndim != 1 or x.size == 0:
        raise FormatError("an input vector is one non-empty axis")
    if int(x.min()) < 0 or int(x.max()) > ACT_MAX:
        raise FormatError("input values must lie in [0, 255]")
    out = [VEC_TAG]
    _tensor_lines(out, "values", x)
    body = "\n".join(out) + "\n"
    digest = hashlib.sha256(body.encode()).hexdigest()
    return body + "checksum = %s\n" % digest


def write_input(values, path):
    with open(path, "w") as fh:
        fh.write(dumps_input(values))


def loads_input(text, where="<qvec>"):
    _check_sum(text, where)
    w = _Walker(text, where)
    w.expect_tag(VEC_TAG)
    vals = w.tensor("values", ndim=1)
    if vals.size and (int(vals.min()) < 0 or int(vals.max()) > ACT_MAX):
        raise FormatError("%s: values outside [0, 255]" % where)
    return vals.astype(np.uint8)


def load_input(path, expect_len=None):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise FormatError("cannot read %s: %s" % (path, exc))
    vals = loads_input(text, where=str(path))
    if expect_len is not None and vals.size != expect_len:
        raise FormatError("%s: vector length %d, model wants %d"
                          % (path, vals.size, expect_len))
    return vals


# ------------------------------------------------------------- test vectors

class TestCase:
    """One golden case: input, expected class, expected per-layer values."""

    def __init__(self, values, expected_class, steps):
        self.values = values
        self.expected_class = expected_class
        self.steps = steps  # [(kind, frac_bits, [int, ...]), ...]


def make_test_vectors(model, inputs):
    """Oracle every input, capturing per-layer integer outputs."""
    cases = []
    for x in inputs:
        cls, steps = oracle_infer(model, x, trace=True)
        cases.append(TestCase(np.asarray(x, dtype=np.uint8), cls,
                              steps[:-1]))
    return cases


def dumps_test_vectors(model_digest, cases):
    out = [TEST_TAG]
    out.append("model_checksum = %s" % model_digest)
    out.append("cases = %d" % len(cases))
    for i, case in enumerate(cases):
        out.append("case %d" % i)
        _tensor_lines(out, "input", case.values)
        out.append("class = %d" % case.expected_class)
        for kind, fb, vals in case.steps:
            _tensor_lines(out, "step %s %d" % (kind, fb),
                          np.array(vals, dtype=object))
    body = "\n".join(out) + "\n"
    digest = hashlib.sha256(body.encode()).hexdigest()
    return body + "checksum = %s\n" % digest


def write_test_vectors(model_digest, cases, path):
    with open(path, "w") as fh:
        fh.write(dumps_test_vectors(model_digest, cases))


def loads_test_vectors(text, where="<qtest>", model_digest=None):
    _check_sum(text, where)
    w = _Walker(text, where)
    w.expect_tag(TEST_TAG)
    bound = w.key_value("model_checksum")
    if model_digest is not None and bound != model_digest:
        raise FormatError("%s: vectors are bound to model %s..., not this "
                          "model" % (where, bound[:12]))
    count = w.int_value("cases")
    cases = []
    for i in range(count):
        head = w.take()
        if head != "case %d" % i:
            w.fail("expected 'case %d', got %r" % (i, head), w.at - 1)
        vals = w.tensor("input", ndim=1)
        cls = w.int_value("class")
        steps = []
        while w.peek() is not None and w.peek().startswith("step "):
            header = w.peek().split(" = ", 1)[0]
            parts = header.split()
            if len(parts) != 3 or not parts[2].isdigit():
                w.fail("bad step header %r" % header)
            arr = w.tensor(header, ndim=1)
            steps.append((parts[1], int(parts[2]),
                          [int(t) for t in arr.tolist()]))
        if vals.size and (int(vals.min()) < 0 or int(vals.max()) > ACT_MAX):
            raise FormatError("%s: case %d input outside [0, 255]"
                              % (where, i))
        cases.append(TestCase(vals.astype(np.uint8), cls, steps))
    return bound, cases


def load_test_vectors(path, model=None):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise FormatError("cannot read %s: %s" % (path, exc))
    digest = model_checksum(model) if model is not None else None
    bound, cases = loads_test_vectors(text, where=str(path),
                                      model_digest=digest)
    if model is not None:
        for i, case in enumerate(cases):
            if case.values.size != model.input_len:
                raise FormatError("%s: case %d input length %d, model wants "
                                  "%d" % (path, i, case.values.size,
                                          model.input_len))
    return cases


# -------------------------------------------------------- random generation

def _parse_shape(spec):
    toks = [t.strip() for t in spec.split(",") if t.strip()]
    if not toks:
        raise UsageError("empty shape string")
    input_len = None
    if toks[0].startswith("in:"):
        try:
            input_len = int(toks[0][3:])
        except ValueError:
            raise UsageError("bad input length token %r" % toks[0])
        toks = toks[1:]
    out = []
    for t in toks:
        if t.startswith("conv:"):
            body = t[5:]
            if "x" not in body:
                raise UsageError("conv wants FxL, got %r" % t)
            f, l = body.split("x", 1)
            try:
                out.append(("conv", int(f), int(l)))
            except ValueError:
                raise UsageError("conv wants integers, got %r" % t)
        elif t.startswith("pool:"):
            try:
                out.append(("pool", int(t[5:])))
            except ValueError:
                raise UsageError("pool wants an integer window, got %r" % t)
        elif t.startswith("dense:"):
            try:
                out.append(("dense", int(t[6:])))
            except ValueError:
                raise UsageError("dense wants an integer width, got %r" % t)
        else:
            raise UsageError("unknown shape token %r" % t)
    return input_len, out


def _log_uniform(rng, lo_exp=-8.0, hi_exp=0.0):
    return float(2.0 ** rng.uniform(lo_exp, hi_exp))


CALIB_SAMPLES = 32


def gen_random_model(spec, seed, input_len=40, secret_pools=False):
    """Deterministic desk-scale model from a shape string.

    Grammar: comma-separated tokens, optionally starting with in:<len>;
    conv:<filters>x<width>, pool:<window>, dense:<outputs>.  An argmax
    output layer is appended.  Scales are log-uniform; each multiplier is
    calibrated on sample activations the way post-training quantization
    would be, so outputs neither saturate nor collapse to the zero point.
    """
    given_len, toks = _parse_shape(spec)
    if given_len is not None:
        input_len = given_len
    if input_len < 1:
        raise UsageError("input length must be positive")
    rng = np.random.default_rng(
        None if seed is None else [int(seed) % (1 << 63), 0x51D])
    in_qp = QuantParams(_log_uniform(rng), int(rng.integers(0, 21)))
    calib = [rng.integers(0, ACT_MAX + 1, size=input_len) for _ in
             range(CALIB_SAMPLES)]
    layers = []
    depth, width, fin = 1, input_len, 0
    scale, zp = in_qp.scale, in_qp.zero_point
    flattened = False

    def acts_now():
        if not layers:
            return [np.array([int(v) for v in x], dtype=object)
                    for x in calib]
        partial = QuantizedModel(input_len, in_qp, layers)
        return [oracle_forward(partial, x)[0] for x in calib]

    for pos, tok in enumerate(toks):
        last_linear = all(t[0] != "dense" and t[0] != "conv"
                          for t in toks[pos + 1:])
        if tok[0] == "conv":
            if flattened:
                raise UsageError("conv after dense/flatten in %r" % spec)
            f, l = tok[1], tok[2]
            if f < 1 or l < 1:
                raise UsageError("conv dimensions must be positive")
            w_qp = QuantParams(_log_uniform(rng), int(rng.integers(118, 139)))
            wvals = np.clip(np.rint(rng.normal(w_qp.zero_point, 30.0,
                                               size=(f, depth, l))),
                            0, ACT_MAX).astype(np.int64)
            lay = QConv1D(filters=f, width=l, depth=depth,
                          padding="same_centered", weights=wvals,
                          bias=np.zeros(f, dtype=np.int64),
                          w_qp=w_qp, relu=not last_linear)
            _finish_linear(lay, rng, scale, zp, fin, acts_now(),
                           depth, width)
            layers.append(lay)
            depth, fin = f, 0
            scale, zp = lay.out_qp.scale, lay.out_qp.zero_point
        elif tok[0] == "pool":
            if flattened:
                raise UsageError("pool after dense/flatten in %r" % spec)
            p = tok[1]
            if p < 1 or p > 64:
                raise UsageError("pool window out of range")
            if width < p:
                raise UsageError("pool window %d wider than the layer (%d)"
                                 % (p, width))
            layers.append(QAvgPool1D(p, secret_divisor=secret_pools))
            width, fin = width // p, 16
        elif tok[0] == "dense":
            o = tok[1]
            if o < 1:
                raise UsageError("dense width must be positive")
            acts = acts_now()
            if not flattened and depth > 1:
                layers.append(Flatten())
            flattened = True
            d = depth * width
            w_qp = QuantParams(_log_uniform(rng), int(rng.integers(118, 139)))
            wvals = np.clip(np.rint(rng.normal(w_qp.zero_point, 30.0,
                                               size=(d, o))),
                            0, ACT_MAX).astype(np.int64)
            lay = QDense(weights=wvals, bias=np.zeros(o, dtype=np.int64),
                         w_qp=w_qp, relu=not last_linear)
            _finish_linear(lay, rng, scale, zp, fin, acts, depth, width)
            layers.append(lay)
            depth, width, fin = 1, o, 0
            scale, zp = lay.out_qp.scale, lay.out_qp.zero_point
    if not layers or not any(l.kind in ("conv", "dense") for l in layers):
        raise UsageError("a model needs at least one conv or dense layer")
    layers.append(ArgMaxOutput())
    model = QuantizedModel(input_len, in_qp, layers,
                           name="random-%s" % seed, version="1")
    model.validate(classifier=True)
    return model


def _layer_accs(lay, x, zp, fin, depth, width):
    """Exact integer accumulators of one linear layer on one activation."""
    if lay.kind == "conv":
        m = lay.filters
        wc = lay.weights.astype(object).reshape(m, -1) - lay.w_qp.zero_point
        cc = np.array([(int(lay.bias[i]) - zp * int(np.sum(wc[i]))) << fin
                       for i in range(m)], dtype=object)
        idx = conv_gather_idx(depth, width, lay.width, lay.padding)
        ext = np.concatenate([x.ravel(),
                              np.array([zp << fin], dtype=object)])
        return (wc @ ext[idx] + cc[:, None]).ravel()
    wc = lay.weights.astype(object).T - lay.w_qp.zero_point
    cc = np.array([(int(lay.bias[i]) - zp * int(np.sum(wc[i]))) << fin
                   for i in range(wc.shape[0])], dtype=object)
    return wc @ x.ravel() + cc


def _finish_linear(lay, rng, in_scale, in_zp, fin, acts, depth, width):
    """Calibrate bias, multiplier and output params on sample activations.

    The bias cancels each unit's mean response (plus a little noise), the
    way training would; otherwise one unit's offset dominates and every
    input lands on the same class.  The multiplier maps the 99th
    percentile of the centered accumulators onto most of the 8-bit range.
    """
    m = lay.bias.shape[0]
    per_unit = np.concatenate(
        [_layer_accs(lay, x, in_zp, fin, depth, width).reshape(m, -1)
         for x in acts], axis=1).astype(np.float64)
    unit_mean = per_unit.mean(axis=1)
    wiggle = float(np.median(per_unit.std(axis=1))) or 1.0
    lay.bias = np.clip(
        np.rint((-unit_mean + rng.normal(0.0, 0.35 * wiggle, size=m))
                / (1 << fin)),
        -(1 << 31) + 1, (1 << 31) - 1).astype(np.int64)
    accs = np.concatenate([_layer_accs(lay, x, in_zp, fin, depth, width)
                           for x in acts])
    # the requant shift absorbs fin, so the target lives in quantized units
    target = max(float(np.percentile(np.abs(accs.astype(np.float64)), 99))
                 / float(1 << fin), 1.0)
    ratio = min(max(110.0 / target, 1.01 * 2.0 ** -32), 0.75)
    out_scale = in_scale * lay.w_qp.scale / ratio
    z_out = int(rng.integers(0, 25)) if lay.relu else int(rng.integers(108,
                                                                       149))
    lay.out_qp = QuantParams(out_scale, z_out)
    lay.m0, lay.n = requant_multiplier(ratio)
    return lay
