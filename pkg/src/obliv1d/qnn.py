"""Quantized 1-D CNN, twice: an integer-only oracle and its secure twin.

Both engines execute the same layer chain.  The oracle runs on python
integers (object arrays, so nothing ever wraps); the secure engine runs on
shares inside a Session.  With deterministic truncation the two are
bit-for-bit identical per layer, which is the property everything else
leans on.  With probabilistic truncation each requantization may round up
one extra quantization unit.

Conventions carried through the chain:

  * activations live in the uint8 quantized domain; a value a represents
    the real number scale * (a - zero_point)
  * an average-pooling layer divides and therefore emits fixed-point
    values: the integers it produces carry ``frac_bits`` fractional bits
    (same scale and zero-point, lifted by 2**f).  The following layer's
    requantization shift absorbs the lift.
  * weights are stored as 8-bit affine values in [0, 255] with their own
    scale and zero-point, biases int32 at scale in_scale * w_scale with
    zero-point 0, and requantization uses the integer normal form
    m0 * 2**-(31+n) with m0 in [2**30, 2**31).

Model parameters are Bob's secrets.  What the other parties learn is the
Plan: layer kinds, shapes, and magnitude buckets (accumulator bound and
requantization shift rounded up to multiples of four) needed to size the
truncation masks.  The exact weights, scales, zero-points and multipliers
never leave Bob.
"""

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .dealer import trunc_mask_range
from .errors import BoundError, FormatError, UsageError
from .protocols import RECIP_GUARD, reference_div_secret
from . import transport

FRAC_BITS = 16
ACT_MAX = 255
M0_LOW = 1 << 30
M0_HIGH = 1 << 31
BUCKET = 4  # public granularity of magnitude metadata
PADDINGS = ("same_centered", "trailing")


# ------------------------------------------------------------ quantization

@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int

    def __post_init__(self):
        if not self.scale > 0:
            raise FormatError("scale must be positive")
        if not 0 <= self.zero_point <= ACT_MAX:
            raise FormatError("zero point outside [0, 255]")


def quantize_value(alpha, qp):
    """Nearest representable value; distance ties break low; out of domain
    clamps to the nearest endpoint."""
    t = Fraction(alpha) / Fraction(qp.scale) + qp.zero_point
    a = math.ceil(t - Fraction(1, 2))
    return min(max(a, 0), ACT_MAX)


def dequantize_value(a, qp):
    return qp.scale * (a - qp.zero_point)


def requant_multiplier(m):
    """(m0, n) with m0 * 2**-(31+n) ~ m, m0 in [2**30, 2**31).  Needs m < 1."""
    if not 0 < m < 1:
        raise UsageError("requant multiplier must be in (0, 1)")
    n = 0
    while m * (1 << (n + 1)) < 1.0:
        n += 1
        if n > 62:
            raise UsageError("requant multiplier too small")
    m0 = round(m * (1 << (31 + n)))
    if m0 >= M0_HIGH:
        if n == 0:
            m0 = M0_HIGH - 1
        else:
            m0, n = m0 // 2, n - 1
    return m0, n


def multiplier_value(m0, n):
    return m0 / (1 << (31 + n))


def pool_numer(window, frac_bits=FRAC_BITS):
    """Public fixed-point factor for 1/window, half-up."""
    return ((1 << (frac_bits + 1)) + window) // (2 * window)


# ------------------------------------------------------------------ layers

@dataclass(eq=False)
class QConv1D:
    filters: int
    width: int
    depth: int
    padding: str
    weights: np.ndarray  # (F, D, L) 8-bit quantized values in [0, 255]
    bias: np.ndarray     # (F,) int32
    w_qp: QuantParams
    out_qp: QuantParams = None  # None: raw accumulator out, no requant
    m0: int = None
    n: int = None
    relu: bool = False

    kind = "conv"


@dataclass(eq=False)
class QAvgPool1D:
    window: int
    secret_divisor: bool = False

    kind = "pool"


@dataclass(eq=False)
class Flatten:
    kind = "flatten"


@dataclass(eq=False)
class QDense:
    weights: np.ndarray  # (d, o) 8-bit quantized values in [0, 255]
    bias: np.ndarray     # (o,) int32
    w_qp: QuantParams
    out_qp: QuantParams = None
    m0: int = None
    n: int = None
    relu: bool = False

    kind = "dense"


@dataclass(eq=False)
class ArgMaxOutput:
    kind = "argmax"


@dataclass(eq=False)
class QuantizedModel:
    input_len: int
    input_qp: QuantParams
    layers: list
    name: str = "model"
    version: str = "1"
    labels: tuple = ()
    input_depth: int = 1  # flat input read row-major as (depth, len/depth)

    def validate(self, classifier=True):
        """Walk the chain; raises FormatError/BoundError naming the layer."""
        compile_plan(self, classifier=classifier)
        return self

    @property
    def classes(self):
        for lay in reversed(self.layers):
            if lay.kind in ("dense", "conv"):
                w = lay.weights
                return w.shape[1] if lay.kind == "dense" else w.shape[0]
        return None


def _bucket(v):
    return ((v + BUCKET - 1) // BUCKET) * BUCKET


def _err(li, kind, msg):
    return FormatError("layer %d (%s): %s" % (li, kind, msg))


def conv_gather_idx(depth, width, filt_width, padding):
    """Flat gather indices into concat(x.ravel(), [pad]) producing the
    (D*L, M) window matrix; out-of-range columns hit the pad slot."""
    pad_left = (filt_width - 1) // 2 if padding == "same_centered" else 0
    idx = np.empty((depth * filt_width, width), dtype=np.int64)
    for d in range(depth):
        for l in range(filt_width):
            c = np.arange(width) + l - pad_left
            row = np.where((c >= 0) & (c < width), d * width + c, depth * width)
            idx[d * filt_width + l] = row
    return idx


# ---------------------------------------------------------------- the plan

@dataclass
class Plan:
    """Everything public about a model: the chain a non-owner can run."""
    input_len: int
    input_scale: float
    input_zp: int
    classes: int
    frac_bits: int
    shift_mode: str  # "secret" | "public"
    layers: list = field(default_factory=list)  # list of dicts
    warnings: list = field(default_factory=list)
    theta_len: int = 0
    input_depth: int = 1

    def to_json(self):
        d = dict(self.__dict__)
        d["input_scale"] = float(self.input_scale).hex()
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        d["input_scale"] = float.fromhex(d["input_scale"])
        return cls(**d)

    def trunc_lbits(self):
        """Every truncation-mask width the secure run will request."""
        out = []
        for lp in self.layers:
            k = lp["kind"]
            if k in ("conv", "dense"):
                if not lp["raw"]:
                    out += [lp["m1mag"], lp["wmag"], lp["cmag"] + 1]
                elif lp["relu"]:
                    out.append(lp["accb"])
            elif k == "pool":
                if lp["secret"]:
                    out += [lp["pmag"] + self.frac_bits + RECIP_GUARD + 1,
                            2 * (self.frac_bits + RECIP_GUARD) + 3]
                elif lp["numer"] is not None:
                    out.append(lp["pmag"] + int(lp["numer"]).bit_length())
            elif k == "argmax":
                out.append(lp["amag"] + 1)
        return out

    def validate_for_ring(self, ring):
        """Check mask headroom of every truncation; returns min kappa_eff."""
        kappa = ring.stat_sec
        for lbits in self.trunc_lbits():
            _, k = trunc_mask_range(ring, lbits)
            kappa = min(kappa, k)
        return kappa


def _chain(model):
    """Yield (index, layer, ctx) walking shapes, scale/zero chain and the
    fixed-point lift through the model.  ctx describes the layer's INPUT."""
    depth = model.input_depth
    width = model.input_len // depth
    flat_len = model.input_len
    scale, zp, fin = model.input_qp.scale, model.input_qp.zero_point, 0
    flattened = False
    for li, lay in enumerate(model.layers):
        ctx = dict(depth=depth, width=width, flat_len=flat_len, scale=scale,
                   zp=zp, fin=fin, flattened=flattened)
        yield li, lay, ctx
        if lay.kind == "conv":
            depth, width = lay.filters, width
            flat_len = depth * width
            if lay.out_qp is not None:
                scale, zp, fin = lay.out_qp.scale, lay.out_qp.zero_point, 0
        elif lay.kind == "pool":
            width = width // lay.window
            flat_len = depth * width
            fin = FRAC_BITS
        elif lay.kind == "flatten":
            flattened = True
        elif lay.kind == "dense":
            flattened, flat_len = True, lay.weights.shape[1]
            depth, width = 1, flat_len
            if lay.out_qp is not None:
                scale, zp, fin = lay.out_qp.scale, lay.out_qp.zero_point, 0


def _check_weights(li, kind, w, b):
    if np.asarray(w).size == 0:
        raise _err(li, kind, "empty weight tensor")
    wmin, wmax = int(np.min(w)), int(np.max(w))
    if wmin < 0 or wmax > ACT_MAX:
        raise _err(li, kind, "weight value %d outside the 8-bit range in "
                   "tensor 'weights'" % (wmin if wmin < 0 else wmax))
    bmin, bmax = int(np.min(b)), int(np.max(b))
    if bmin < -(1 << 31) or bmax >= (1 << 31):
        raise _err(li, kind, "bias value %d outside int32 in tensor 'bias'"
                   % (bmin if bmin < -(1 << 31) else bmax))


def _linear_bounds(wc, cc, vlo, vhi):
    """Interval of sum(wc[i, :] * x) + cc[i] with every x in [vlo, vhi]."""
    lo = hi = None
    for i in range(wc.shape[0]):
        row = wc[i]
        lo_i = int(sum(int(w) * (vlo if w >= 0 else vhi) for w in row)) + cc[i]
        hi_i = int(sum(int(w) * (vhi if w >= 0 else vlo) for w in row)) + cc[i]
        lo = lo_i if lo is None else min(lo, lo_i)
        hi = hi_i if hi is None else max(hi, hi_i)
    return lo, hi


def _requant_plan(li, lay, ctx, accb):
    fin = ctx["fin"]
    if not 0 <= lay.n <= 31:
        raise _err(li, lay.kind, "requant shift n=%r outside [0, 31]" % lay.n)
    if not M0_LOW <= lay.m0 < M0_HIGH:
        raise _err(li, lay.kind, "requant m0=%r outside [2^30, 2^31)" % lay.m0)
    target = ctx["scale"] * lay.w_qp.scale / lay.out_qp.scale
    if not target < 1:
        raise _err(li, lay.kind, "scale ratio %g not below 1" % target)
    if abs(multiplier_value(lay.m0, lay.n) - target) > target * 2.0 ** -29:
        raise _err(li, lay.kind, "m0/n do not reproduce the scale ratio")
    nl = _bucket(lay.n)
    wmag = max(accb + 20, 16 + nl + fin + 1)
    smag = max(accb + 17, 16 + lay.n + fin + 1)
    cmag = max(wmag - (16 + nl + fin) + 2, 10)
    return dict(nl=nl, n_public=lay.n, m1mag=accb + 15, wmag=wmag, smag=smag,
                cmag=cmag)


def compile_plan(model, shift_mode="secret", classifier=True):
    """Validate the model and derive the public Plan."""
    if shift_mode not in ("secret", "public"):
        raise UsageError("shift_mode must be 'secret' or 'public'")
    if model.input_len < 1:
        raise FormatError("input length must be positive")
    if model.input_depth < 1 or model.input_len % model.input_depth:
        raise FormatError("input depth must divide the input length")
    plan = Plan(model.input_len, model.input_qp.scale,
                model.input_qp.zero_point, 0, FRAC_BITS, shift_mode,
                input_depth=model.input_depth)
    vlo, vhi = 0, ACT_MAX
    last = None
    for li, lay, ctx in _chain(model):
        fin = ctx["fin"]
        if lay.kind in ("conv", "dense"):
            raw = lay.out_qp is None
            if lay.kind == "conv":
                if ctx["flattened"]:
                    raise _err(li, "conv", "cannot follow a flatten")
                f_, d_, l_ = lay.weights.shape
                if (f_, d_, l_) != (lay.filters, lay.depth, lay.width):
                    raise _err(li, "conv", "weight tensor shape %r does not "
                               "match F=%d D=%d L=%d" % ((f_, d_, l_),
                               lay.filters, lay.depth, lay.width))
                if lay.depth != ctx["depth"]:
                    raise _err(li, "conv", "depth %d does not compose with "
                               "input depth %d" % (lay.depth, ctx["depth"]))
                if lay.padding not in PADDINGS:
                    raise _err(li, "conv", "unknown padding %r" % lay.padding)
                if lay.bias.shape != (lay.filters,):
                    raise _err(li, "conv", "bias length != filters")
                m, kd, nn = lay.filters, lay.depth * lay.width, ctx["width"]
                out_shape = (lay.filters, ctx["width"])
                wc = (lay.weights.astype(object).reshape(m, kd)
                      - lay.w_qp.zero_point)
            else:
                d_, o_ = lay.weights.shape
                if d_ != ctx["flat_len"]:
                    raise _err(li, "dense", "weight rows %d do not compose "
                               "with input size %d" % (d_, ctx["flat_len"]))
                if lay.bias.shape != (o_,):
                    raise _err(li, "dense", "bias length != outputs")
                m, kd, nn = o_, d_, 1
                out_shape = (o_,)
                wc = lay.weights.astype(object).T - lay.w_qp.zero_point
            _check_weights(li, lay.kind, lay.weights, lay.bias)
            wsum = [int(np.sum(wc[i])) for i in range(m)]
            cc = [(int(lay.bias[i]) - ctx["zp"] * wsum[i]) << fin
                  for i in range(m)]
            pad = ctx["zp"] << fin
            xlo, xhi = vlo, vhi
            if lay.kind == "conv" and lay.width > 1:
                xlo, xhi = min(xlo, pad), max(xhi, pad)
            lo, hi = _linear_bounds(wc, cc, xlo, xhi)
            bound = max(abs(lo), abs(hi), 1)
            if bound >= (1 << 31) << fin:
                raise BoundError("layer %d (%s): accumulator bound 2^%.1f "
                                 "exceeds 32 signed bits" %
                                 (li, lay.kind, math.log2(bound) - fin))
            accb = _bucket(bound.bit_length() + 1)
            lp = dict(kind=lay.kind, fin=fin, raw=raw, relu=bool(lay.relu),
                      dims=[m, kd, nn], out=list(out_shape), accb=accb)
            if lay.kind == "conv":
                lp.update(geom=[lay.depth, ctx["width"], lay.width],
                          padding=lay.padding)
            if raw:
                if lay.m0 is not None or lay.n is not None:
                    raise _err(li, lay.kind, "m0/n set without output params")
                vlo, vhi = (max(lo, 0), max(hi, 0)) if lay.relu else (lo, hi)
                lp["theta"] = m * kd + m + (1 if lay.kind == "conv" else 0)
            else:
                lp.update(_requant_plan(li, lay, ctx, accb))
                vlo, vhi = 0, ACT_MAX
                lp["theta"] = (m * kd + m + (1 if lay.kind == "conv" else 0)
                               + 3 + (1 if shift_mode == "secret" else 0))
            plan.layers.append(lp)
        elif lay.kind == "pool":
            if ctx["flattened"]:
                raise _err(li, "pool", "cannot follow a flatten")
            p = lay.window
            if p < 1:
                raise _err(li, "pool", "window must be at least 1")
            if ctx["width"] < p:
                raise _err(li, "pool", "width %d smaller than window %d"
                           % (ctx["width"], p))
            if ctx["width"] % p:
                plan.warnings.append("layer %d (pool): width %d not divisible "
                                     "by %d, tail dropped" % (li, ctx["width"], p))
            lift = 1 << (FRAC_BITS - fin)
            numer = None if lift % p == 0 else pool_numer(p)
            bound = max(abs(vlo), abs(vhi), 1) * p * lift
            margin = (bound >> 8) + 16
            lp = dict(kind="pool", fin=fin, window=p, width=ctx["width"],
                      secret=bool(lay.secret_divisor), lift=lift,
                      numer=numer, pmag=_bucket(bound.bit_length() + 1),
                      dmax=max(p.bit_length(), 1),
                      theta=1 if lay.secret_divisor else 0,
                      out=[ctx["depth"], ctx["width"] // p])
            plan.layers.append(lp)
            vlo, vhi = vlo * lift - margin, vhi * lift + margin
        elif lay.kind == "flatten":
            plan.layers.append(dict(kind="flatten", out=[ctx["flat_len"]]))
        elif lay.kind == "argmax":
            if li != len(model.layers) - 1:
                raise _err(li, "argmax", "must be the final layer")
            amag = _bucket(max(max(abs(vlo), abs(vhi), 1).bit_length() + 1, 10))
            plan.layers.append(dict(kind="argmax", n=ctx["flat_len"],
                                    amag=amag))
            plan.classes = ctx["flat_len"]
        else:
            raise _err(li, getattr(lay, "kind", "?"), "unknown layer kind")
        last = lay.kind
    if classifier and last != "argmax":
        raise FormatError("a classifier model must end in an argmax layer")
    if plan.classes == 0:
        plan.classes = model.classes or 0
    plan.theta_len = sum(lp.get("theta", 0) for lp in plan.layers)
    return plan


# --------------------------------------------------------------- the oracle

def _to_object(arr):
    return np.array([int(v) for v in np.ravel(arr)],
                    dtype=object).reshape(np.shape(arr))


def _requant_ints(acc, m0, n, z_out, fin, relu):
    qs = (acc * m0) >> (31 + n + fin)
    q0 = qs + z_out
    lo = z_out if relu else 0
    return np.minimum(np.maximum(q0, lo), ACT_MAX)


def _pool_ints(vals, lp):
    depth, blocks = lp["out"]
    p, lift = lp["window"], lp["lift"]
    v = vals.reshape(depth, -1)[:, :blocks * p].reshape(depth, blocks, p)
    sums = v.sum(axis=2)
    if lp["secret"]:
        flat = [reference_div_secret(int(s) * lift, p, FRAC_BITS)
                for s in sums.ravel()]
        return np.array(flat, dtype=object).reshape(depth, blocks)
    if lp["numer"] is None:
        return sums * (lift // p)
    return (sums * lift * lp["numer"]) >> FRAC_BITS


def oracle_forward(model, x, trace=False, plan=None):
    """Run every non-argmax layer on integers; returns (values, steps).

    values is an object ndarray in the quantized domain, lifted by the
    layer's fractional bits; steps holds (name, frac_bits, int-list) per
    layer when trace is requested, else stays empty.
    """
    if plan is None:
        plan = compile_plan(model, classifier=False)
    x = np.asarray(x)
    if x.shape != (model.input_len,):
        raise FormatError("input length %d does not match model input %d"
                          % (x.size, model.input_len))
    if int(x.min()) < 0 or int(x.max()) > ACT_MAX:
        raise BoundError("input values must be quantized to [0, 255]")
    vals = _to_object(x)
    steps = []
    pi = 0
    for li, lay, ctx in _chain(model):
        lp = plan.layers[pi]
        pi += 1
        fin = ctx["fin"]
        if lay.kind == "conv":
            m, kd, _ = lp["dims"]
            wc = lay.weights.astype(object).reshape(m, kd) - lay.w_qp.zero_point
            cc = np.array([(int(lay.bias[i]) - ctx["zp"] * int(np.sum(wc[i])))
                           << fin for i in range(m)], dtype=object)
            idx = conv_gather_idx(lay.depth, ctx["width"], lay.width,
                                  lay.padding)
            ext = np.concatenate([vals.ravel(),
                                  np.array([ctx["zp"] << fin], dtype=object)])
            acc = wc @ ext[idx] + cc[:, None]
            vals = (np.maximum(acc, 0) if lay.relu else acc) if lp["raw"] \
                else _requant_ints(acc, lay.m0, lay.n,
                                   lay.out_qp.zero_point, fin, lay.relu)
        elif lay.kind == "dense":
            wc = lay.weights.astype(object).T - lay.w_qp.zero_point
            cc = np.array([(int(lay.bias[i]) - ctx["zp"] * int(np.sum(wc[i])))
                           << fin for i in range(wc.shape[0])], dtype=object)
            acc = wc @ vals.ravel() + cc
            vals = (np.maximum(acc, 0) if lay.relu else acc) if lp["raw"] \
                else _requant_ints(acc, lay.m0, lay.n,
                                   lay.out_qp.zero_point, fin, lay.relu)
        elif lay.kind == "pool":
            vals = _pool_ints(vals, lp)
        elif lay.kind == "flatten":
            vals = vals.ravel()
        elif lay.kind == "argmax":
            break
        if trace:
            fout = FRAC_BITS if lay.kind == "pool" else \
                (fin if lp.get("raw") or lay.kind == "flatten" else 0)
            steps.append((lay.kind, fout,
                          [int(v) for v in np.ravel(vals)]))
    return vals, steps


def oracle_infer(model, x, trace=False, plan=None):
    """Plaintext class index (first maximum wins)."""
    if model.layers[-1].kind != "argmax":
        raise UsageError("infer needs an argmax output layer")
    vals, steps = oracle_forward(model, x, trace=trace, plan=plan)
    flat = vals.ravel()
    idx = int(max(range(len(flat)), key=lambda i: (flat[i], -i)))
    if trace:
        steps.append(("argmax", 0, [idx]))
        return idx, steps
    return idx


def infer(model, x, backend="plaintext"):
    """Class index of x under the model, on the named backend.

    backend is "plaintext" or a SecureEngine whose plan was compiled from
    this model; the secure result stays a share until revealed.
    """
    if backend in ("plaintext", None):
        return oracle_infer(model, x)
    return backend.infer(values=x)


# ------------------------------------------------------------- Bob's theta

def pack_theta(model, plan):
    """Every secret parameter, flattened in engine order (python ints)."""
    out = []
    pi = 0
    for li, lay, ctx in _chain(model):
        lp = plan.layers[pi]
        pi += 1
        fin = ctx["fin"]
        if lay.kind in ("conv", "dense"):
            m, kd, _ = lp["dims"]
            if lay.kind == "conv":
                wc = (lay.weights.astype(object).reshape(m, kd)
                      - lay.w_qp.zero_point)
            else:
                wc = lay.weights.astype(object).T - lay.w_qp.zero_point
            out += [int(v) for v in wc.ravel()]
            out += [(int(lay.bias[i]) - ctx["zp"] * int(np.sum(wc[i]))) << fin
                    for i in range(m)]
            if lay.kind == "conv":
                out.append(ctx["zp"] << fin)
            if not lp["raw"]:
                out += [lay.out_qp.zero_point, lay.m0 & 0x7FFF, lay.m0 >> 15]
                if plan.shift_mode == "secret":
                    out.append(1 << (lp["nl"] - lay.n))
        elif lay.kind == "pool" and lp["secret"]:
            out.append(lay.window)
    if len(out) != plan.theta_len:
        raise UsageError("theta length drifted from the plan")
    return out


# ------------------------------------------------------------ secure engine

class SecureEngine:
    """Runs a Plan over a Session.  All parties construct one; only the
    model owner also holds the model (None elsewhere)."""

    def __init__(self, sess, plan, theta_owner="bob", input_owner="alice"):
        if sess.ring.frac_bits != plan.frac_bits:
            raise UsageError("session ring carries f=%d, plan wants f=%d"
                             % (sess.ring.frac_bits, plan.frac_bits))
        self.sess = sess
        self.plan = plan
        self.theta_owner = theta_owner
        self.input_owner = input_owner
        self.theta = None

    # -- parameter sharing

    def share_theta(self, model=None, values=None):
        """One input round for all of Bob's parameters; cacheable.

        The owner passes the model (or prepacked values: the dealer's
        consumption metering runs on placeholder parameters, since material
        counts depend only on the public plan); everyone else passes nothing.
        """
        sess = self.sess
        vals = values
        if model is not None:
            vals = sess.ring.from_ints(pack_theta(model, self.plan))
        whole = sess.input_share(self.theta_owner, values=vals,
                                 shape=(self.plan.theta_len,))
        self.theta = []
        at = 0
        for lp in self.plan.layers:
            need = lp.get("theta", 0)
            self.theta.append(whole[at:at + need] if need else None)
            at += need
        return self.theta

    def share_input(self, values=None):
        sess = self.sess
        packed = None
        if values is not None:
            x = np.asarray(values)
            if x.shape != (self.plan.input_len,):
                raise FormatError("input length %d does not match plan %d"
                                  % (x.size, self.plan.input_len))
            packed = sess.ring.from_ints([int(v) for v in x])
        return sess.input_share(self.input_owner, values=packed,
                                shape=(self.plan.input_len,))

    # -- layer programs

    def _linear(self, x, lp, th):
        sess = self.sess
        m, kd, nn = lp["dims"]
        w = th[:m * kd].reshape((m, kd))
        cc = th[m * kd:m * kd + m]
        if lp["kind"] == "conv":
            depth, width, filt_width = lp["geom"]
            pad = th[m * kd + m:m * kd + m + 1]
            ext = type(x).concat([x.ravel(), pad])
            idx = conv_gather_idx(depth, width, filt_width, lp["padding"])
            v = ext.take(idx.ravel()).reshape((kd, nn))
            acc = sess.matmul(w, v)
            acc = acc.add(cc.reshape((m, 1)).broadcast_to((m, nn)))
        else:
            acc = sess.matmul(w, x.reshape((kd, 1)))
            acc = acc.add(cc.reshape((m, 1)))
        acc = acc.reshape((m * nn,))
        if lp["raw"]:
            if lp["relu"]:
                neg = sess.ltz(acc, lp["accb"])
                acc = sess.select(neg, sess.const_share(0, (m * nn,)), acc)
            return acc.reshape(tuple(lp["out"]))
        base = m * kd + m + (1 if lp["kind"] == "conv" else 0)
        return self._requant(acc, lp, th, base).reshape(tuple(lp["out"]))

    def _requant(self, acc, lp, th, base):
        sess = self.sess
        n_el = self.sess._lsize(acc)
        z_out = th[base:base + 1]
        m_lo = th[base + 1:base + 2].broadcast_to((n_el,))
        m_hi = th[base + 2:base + 3].broadcast_to((n_el,))
        plo, phi = sess.mul_batch([acc, acc], [m_lo, m_hi])
        t1 = sess.trunc(plo, lp["m1mag"], 15, mode="det")
        s = phi.add(t1)
        if self.plan.shift_mode == "secret":
            pow2 = th[base + 3:base + 4].broadcast_to((n_el,))
            wide = sess.mul(s, pow2)
            qs = sess.trunc(wide, lp["wmag"], 16 + lp["nl"] + lp["fin"])
        else:
            qs = sess.trunc(s, lp["smag"], 16 + lp["n_public"] + lp["fin"])
        zb = z_out.broadcast_to((n_el,))
        q0 = qs.add(zb)
        lo = zb if lp["relu"] else sess.const_share(0, (n_el,))
        hi = sess.const_share(ACT_MAX, (n_el,))
        return sess.clamp(q0, lo, hi, lp["cmag"])

    def _pool(self, x, lp, th):
        sess = self.sess
        depth, blocks = lp["out"]
        p = lp["window"]
        v = x.reshape((depth, lp["width"]))[:, :blocks * p]
        v = v.reshape((depth, blocks, p))
        sums = v[:, :, 0]
        for k in range(1, p):
            sums = sums.add(v[:, :, k])
        sums = sums.reshape((depth * blocks,))
        if lp["secret"]:
            lifted = sums.mul_public(sess._const(lp["lift"]))
            return sess.div_secret(lifted, th, lp["pmag"],
                                   dmax_bits=lp["dmax"]).reshape((depth,
                                                                  blocks))
        if lp["numer"] is None:
            out = sums.mul_public(sess._const(lp["lift"] // p))
        else:
            lifted = sums.mul_public(sess._const(lp["lift"]))
            out = sess.scale_public(lifted, lp["numer"], lp["pmag"])
        return out.reshape((depth, blocks))

    # -- full chain

    def forward(self, x_share=None, values=None, trace=False):
        if self.theta is None:
            raise UsageError("share_theta must run before inference")
        sess = self.sess
        vals = x_share if x_share is not None else self.share_input(values)
        steps = []
        for lp, th in zip(self.plan.layers, self.theta):
            kind = lp["kind"]
            if kind in ("conv", "dense"):
                vals = self._linear(vals, lp, th)
            elif kind == "pool":
                vals = self._pool(vals, lp, th)
            elif kind == "flatten":
                vals = vals.reshape((lp["out"][0],))
            elif kind == "argmax":
                continue
            if trace:
                opened = sess.ring.signed(sess.open(vals))
                steps.append((kind, [int(v) for v in np.ravel(opened)]))
        return vals, steps

    def infer(self, x_share=None, values=None, trace=False):
        """Index share of the winning class (plus opened trace if asked)."""
        if self.plan.layers[-1]["kind"] != "argmax":
            raise UsageError("infer needs an argmax output layer")
        vals, steps = self.forward(x_share, values, trace)
        idx = self.sess.argmax(vals.ravel(), self.plan.layers[-1]["amag"])
        return (idx, steps) if trace else idx


# ----------------------------------------------- plan and client transport

def broadcast_plan(sess, plan=None, owner="bob"):
    """Owner pushes the public Plan to every peer; everyone else receives."""
    if sess.role == owner:
        if plan is None:
            raise UsageError("the plan owner must supply a plan")
        payload = plan.to_json().encode()
        sess.chan.step({p: (transport.META, payload) for p in sess.peers}, [])
        return plan
    got = sess.chan.step({}, [(owner, transport.META)])
    return Plan.from_json(got[owner].decode())


def client_send_plan(chan, parties, plan):
    payload = plan.to_json().encode()
    chan.step({p: (transport.META, payload) for p in parties}, [])


def client_share_model(chan, ring, feed, model, plan, parties=()):
    """Bob as an external endpoint: plan broadcast plus one theta input."""
    from .protocols import client_provide_input
    if parties:
        client_send_plan(chan, parties, plan)
    packed = ring.from_ints(pack_theta(model, plan))
    client_provide_input(chan, ring, feed, packed)


def client_share_vector(chan, ring, feed, values):
    """Alice as an external endpoint: one quantized feature vector."""
    from .protocols import client_provide_input
    packed = ring.from_ints([int(v) for v in np.asarray(values).ravel()])
    client_provide_input(chan, ring, feed, packed)
